#pragma once

// Per-sentence context windows. The focus sentence ends `right_context`
// encoder positions before the end of the window; the rest of the budget
// goes to the left context. When the document start leaves too little left
// context, the right context grows to fill the window.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/union_find.hpp"

namespace corpipe::windowing {

struct WindowConfig {
  int window_size = 512;
  int right_context = 50;
  int reserved_prefix = 0;  // positions taken by prepended markers (corpus id)
};

struct Window {
  int sentence = 0;
  int start = 0, end = 0;              // document positions [start, end)
  int focus_begin = 0, focus_end = 0;  // the sentence, [focus_begin, focus_end)
  int prefix = 0;
  std::vector<int> pieces;             // encoder positions per token in [start, end)

  int token_count() const { return end - start; }
  int positions() const {
    int n = prefix;
    for (int p : pieces) n += p;
    return n;
  }
  int left_context() const { return focus_begin - start; }
  int right_context() const { return end - focus_end; }
};

// `pieces_per_token` gives the encoder width of every document token; empty
// means one position per token.
inline std::vector<Window> build_windows(const Document& doc, const WindowConfig& cfg,
                                         const std::vector<int>& pieces_per_token = {}) {
  if (cfg.right_context < 0) throw ConfigError("right context must be non-negative");
  const int budget = cfg.window_size - cfg.reserved_prefix;
  if (budget <= 0) throw ConfigError("window too small for the reserved prefix");
  const auto starts = sentence_starts(doc);
  const int n = starts.back();
  if (!pieces_per_token.empty() && static_cast<int>(pieces_per_token.size()) != n)
    throw ConfigError("piece counts do not cover the document");

  std::vector<long> offset(n + 1, 0);  // cumulative encoder positions
  for (int i = 0; i < n; ++i) offset[i + 1] = offset[i] + (pieces_per_token.empty() ? 1 : pieces_per_token[i]);
  // largest e in [lo, n] with offset[e] <= limit
  auto last_fitting = [&](int lo, long limit) {
    int e = static_cast<int>(std::upper_bound(offset.begin() + lo, offset.end(), limit) - offset.begin()) - 1;
    return std::max(e, lo);
  };

  std::vector<Window> out;
  for (int s = 0; s + 1 < static_cast<int>(starts.size()); ++s) {
    const int fb = starts[s], fe = starts[s + 1];
    if (offset[fe] - offset[fb] > budget)
      throw ConfigError("sentence " + (doc.sentences[s].sentence_id.empty() ? std::to_string(s + 1)
                                                                            : doc.sentences[s].sentence_id) +
                        " needs " + std::to_string(offset[fe] - offset[fb]) + " positions; the window holds " +
                        std::to_string(budget));
    int end = last_fitting(fe, offset[fe] + cfg.right_context);
    int start = static_cast<int>(std::lower_bound(offset.begin(), offset.begin() + fb + 1, offset[end] - budget) -
                                 offset.begin());
    if (start > fb) {
      start = fb;
      end = last_fitting(fe, offset[fb] + budget);
    }
    if (start == 0) end = std::max(end, last_fitting(fe, offset[0] + budget));

    Window w;
    w.sentence = s;
    w.start = start;
    w.end = end;
    w.focus_begin = fb;
    w.focus_end = fe;
    w.prefix = cfg.reserved_prefix;
    for (int i = start; i < end; ++i) w.pieces.push_back(static_cast<int>(offset[i + 1] - offset[i]));
    out.push_back(std::move(w));
  }
  return out;
}

// A mention in document coordinates (inclusive).
struct DocSpan {
  int start = 0, end = 0;
  auto operator<=>(const DocSpan&) const = default;
};

// Mentions seen by one window and the antecedent chosen for each: an index
// into `mentions` (itself for a new entity) or -1 when the window made no
// decision for that mention.
struct WindowPrediction {
  std::vector<DocSpan> mentions;
  std::vector<int> antecedent;
};

struct StitchResult {
  std::vector<std::vector<DocSpan>> clusters;  // ordered by first mention
  int conflicts = 0;  // mentions whose antecedent differed between windows
};

// Deduplicates mentions by span, keeps the latest window's antecedent for
// each mention, and returns the connected components.
inline StitchResult stitch_predictions(const std::vector<WindowPrediction>& windows) {
  std::map<DocSpan, int> id;
  std::vector<DocSpan> spans;
  auto intern = [&](const DocSpan& s) {
    auto [it, inserted] = id.emplace(s, static_cast<int>(spans.size()));
    if (inserted) spans.push_back(s);
    return it->second;
  };
  std::map<int, int> link;
  StitchResult out;
  for (const auto& w : windows) {
    if (w.antecedent.size() != w.mentions.size()) throw ModelError("window prediction is inconsistent");
    for (std::size_t i = 0; i < w.mentions.size(); ++i) {
      int self = intern(w.mentions[i]);
      if (w.antecedent[i] < 0) continue;
      int ante = intern(w.mentions.at(w.antecedent[i]));
      auto [it, inserted] = link.emplace(self, ante);
      if (!inserted && it->second != ante) {
        ++out.conflicts;
        it->second = ante;
      }
    }
  }
  UnionFind uf(spans.size());
  for (auto [a, b] : link) uf.unite(a, b);
  std::vector<std::vector<DocSpan>> clusters;
  std::map<int, int> slot;
  std::vector<int> order(spans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return spans[a] < spans[b]; });
  for (int i : order) {
    int r = static_cast<int>(uf.find(i));
    auto [it, inserted] = slot.emplace(r, static_cast<int>(clusters.size()));
    if (inserted) clusters.emplace_back();
    clusters[it->second].push_back(spans[i]);
  }
  out.clusters = std::move(clusters);
  return out;
}

}  // namespace corpipe::windowing
