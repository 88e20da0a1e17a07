#pragma once

// Coreference evaluation with head-based partial mention matching.
//
// A response mention may stand in for a key mention when it contains the
// key's head token and has no token outside the key span. The mention
// alignment is a maximum-cardinality bipartite matching under that relation
// (a documented approximation of the official CorefUD scorer's matcher);
// MUC, B-cubed and CEAF-e are then computed over the aligned mention ids.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"

namespace corpipe::scorer {

// First token (reading order) whose syntactic parent lies outside the
// mention; falls back to the first token. `parents` maps a global position
// to its parent's global position (-1 for root / unknown).
inline int head_of_span(const std::vector<int>& positions, const std::vector<int>& parents) {
  if (positions.empty()) return -1;
  for (int p : positions) {
    int parent = p >= 0 && p < static_cast<int>(parents.size()) ? parents[p] : -1;
    if (parent < 0 || !std::binary_search(positions.begin(), positions.end(), parent)) return p;
  }
  return positions.front();
}

// A response mention may stand in for a key mention.
inline bool eligible(const Mention& key, const Mention& response) {
  if (!std::binary_search(response.token_positions.begin(), response.token_positions.end(),
                          key.head_position))
    return false;
  return std::includes(key.token_positions.begin(), key.token_positions.end(),
                       response.token_positions.begin(), response.token_positions.end());
}

struct MentionAlignment {
  std::vector<int> response_to_key;  // -1 when unmatched
  std::vector<int> key_to_response;  // -1 when unmatched
  std::vector<int> unmatched_keys;
  std::vector<int> unmatched_responses;
  int matched = 0;
};

// Maximum-cardinality injective matching. Responses are augmented in the
// given order; each one tries eligible keys from the smallest span upwards,
// then in reading order.
inline MentionAlignment align_mentions(const std::vector<Mention>& keys, const std::vector<Mention>& responses) {
  const int nk = static_cast<int>(keys.size());
  const int nr = static_cast<int>(responses.size());
  std::vector<std::vector<int>> candidates(nr);
  for (int r = 0; r < nr; ++r) {
    for (int k = 0; k < nk; ++k)
      if (eligible(keys[k], responses[r])) candidates[r].push_back(k);
    std::stable_sort(candidates[r].begin(), candidates[r].end(), [&](int a, int b) {
      if (keys[a].token_positions.size() != keys[b].token_positions.size())
        return keys[a].token_positions.size() < keys[b].token_positions.size();
      return mention_order(keys[a], keys[b]);
    });
  }

  MentionAlignment out;
  out.response_to_key.assign(nr, -1);
  out.key_to_response.assign(nk, -1);
  std::vector<int> visited(nk, -1);
  auto augment = [&](auto&& self, int r, int stamp) -> bool {
    for (int k : candidates[r]) {
      if (visited[k] == stamp) continue;
      visited[k] = stamp;
      if (out.key_to_response[k] < 0 || self(self, out.key_to_response[k], stamp)) {
        out.key_to_response[k] = r;
        out.response_to_key[r] = k;
        return true;
      }
    }
    return false;
  };
  for (int r = 0; r < nr; ++r)
    if (augment(augment, r, r)) ++out.matched;
  for (int k = 0; k < nk; ++k)
    if (out.key_to_response[k] < 0) out.unmatched_keys.push_back(k);
  for (int r = 0; r < nr; ++r)
    if (out.response_to_key[r] < 0) out.unmatched_responses.push_back(r);
  return out;
}

// Numerators and denominators, summable across documents.
struct MetricCounts {
  double recall_num = 0, recall_den = 0, precision_num = 0, precision_den = 0;

  MetricCounts& operator+=(const MetricCounts& o) {
    recall_num += o.recall_num;
    recall_den += o.recall_den;
    precision_num += o.precision_num;
    precision_den += o.precision_den;
    return *this;
  }
};

struct MetricScore {
  double precision = 0, recall = 0, f1 = 0;  // percentages
};

inline MetricScore finalize(const MetricCounts& c) {
  MetricScore s;
  s.recall = c.recall_den > 0 ? 100.0 * c.recall_num / c.recall_den : 0.0;
  s.precision = c.precision_den > 0 ? 100.0 * c.precision_num / c.precision_den : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

using Clustering = std::vector<std::vector<int>>;  // clusters of mention ids

namespace detail {

inline std::map<int, int> cluster_of(const Clustering& c) {
  std::map<int, int> out;
  for (int i = 0; i < static_cast<int>(c.size()); ++i)
    for (int m : c[i]) out[m] = i;
  return out;
}

inline double muc_side(const Clustering& gold, const Clustering& other, double& den) {
  auto where = cluster_of(other);
  double num = 0;
  for (const auto& g : gold) {
    std::set<int> parts;
    int alone = 0;
    for (int m : g) {
      auto it = where.find(m);
      if (it == where.end())
        ++alone;
      else
        parts.insert(it->second);
    }
    num += static_cast<double>(g.size()) - static_cast<double>(parts.size() + alone);
    den += static_cast<double>(g.size()) - 1;
  }
  return num;
}

inline double overlap(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> sa = a, sb = b, inter;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  return static_cast<double>(inter.size());
}

inline double b3_side(const Clustering& gold, const Clustering& other, double& den) {
  double num = 0;
  for (const auto& g : gold) {
    for (const auto& o : other) {
      double n = overlap(g, o);
      num += n * n / static_cast<double>(g.size());
    }
    den += static_cast<double>(g.size());
  }
  return num;
}

}  // namespace detail

// Maximum-weight assignment on a dense rows x cols matrix (Hungarian
// algorithm, potentials form). Returns the assigned column per row or -1.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const int rows = static_cast<int>(weight.size());
  const int cols = rows ? static_cast<int>(weight[0].size()) : 0;
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](int i, int j) {  // 1-based, minimisation
    return (i <= rows && j <= cols) ? -weight[i - 1][j - 1] : 0.0;
  };
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(rows, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assign[p[j] - 1] = j - 1;
  return assign;
}

struct DocumentCounts {
  MetricCounts muc, b3, ceafe;

  DocumentCounts& operator+=(const DocumentCounts& o) {
    muc += o.muc;
    b3 += o.b3;
    ceafe += o.ceafe;
    return *this;
  }
};

inline DocumentCounts score_clusterings(const Clustering& key, const Clustering& response) {
  DocumentCounts c;
  c.muc.recall_num = detail::muc_side(key, response, c.muc.recall_den);
  c.muc.precision_num = detail::muc_side(response, key, c.muc.precision_den);
  c.b3.recall_num = detail::b3_side(key, response, c.b3.recall_den);
  c.b3.precision_num = detail::b3_side(response, key, c.b3.precision_den);

  std::vector<std::vector<double>> sim(key.size(), std::vector<double>(response.size()));
  for (std::size_t i = 0; i < key.size(); ++i)
    for (std::size_t j = 0; j < response.size(); ++j)
      sim[i][j] = 2.0 * detail::overlap(key[i], response[j]) /
                  static_cast<double>(key[i].size() + response[j].size());
  double phi = 0;
  auto assign = max_weight_assignment(sim);
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] >= 0) phi += sim[i][assign[i]];
  c.ceafe.recall_num = c.ceafe.precision_num = phi;
  c.ceafe.recall_den = static_cast<double>(key.size());
  c.ceafe.precision_den = static_cast<double>(response.size());
  return c;
}

namespace detail {

inline std::vector<Entity> drop_singletons(const std::vector<Entity>& entities) {
  std::vector<Entity> out;
  for (const auto& e : entities)
    if (e.mentions.size() > 1) out.push_back(e);
  return out;
}

}  // namespace detail

// Counts for one document: singletons are removed first (unless kept),
// mentions aligned, and unmatched response mentions become fresh ids.
inline DocumentCounts count_document(const std::vector<Entity>& key_entities,
                                     const std::vector<Entity>& response_entities, bool with_singletons) {
  auto key = with_singletons ? key_entities : detail::drop_singletons(key_entities);
  auto response = with_singletons ? response_entities : detail::drop_singletons(response_entities);

  std::vector<Mention> key_mentions, response_mentions;
  Clustering key_clusters, response_clusters;
  for (const auto& e : key) {
    key_clusters.emplace_back();
    for (const auto& m : e.mentions) {
      key_clusters.back().push_back(static_cast<int>(key_mentions.size()));
      key_mentions.push_back(m);
    }
  }
  std::vector<std::pair<int, int>> response_slots;
  for (int ei = 0; ei < static_cast<int>(response.size()); ++ei)
    for (const auto& m : response[ei].mentions) {
      response_slots.emplace_back(ei, static_cast<int>(response_mentions.size()));
      response_mentions.push_back(m);
    }
  // align in reading order
  std::vector<int> order(response_mentions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mention_order(response_mentions[a], response_mentions[b]); });
  std::vector<Mention> ordered;
  for (int i : order) ordered.push_back(response_mentions[i]);
  auto alignment = align_mentions(key_mentions, ordered);

  std::vector<int> response_id(response_mentions.size());
  int fresh = static_cast<int>(key_mentions.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    int k = alignment.response_to_key[pos];
    response_id[order[pos]] = k >= 0 ? k : fresh++;
  }
  response_clusters.assign(response.size(), {});
  for (auto [ei, mi] : response_slots) response_clusters[ei].push_back(response_id[mi]);
  return score_clusterings(key_clusters, response_clusters);
}

struct ScoreReport {
  MetricScore muc, b3, ceafe;
  double conll = 0;
  bool with_singletons = false;
  // Key had no mentions to score (0/0); all values are reported as 0.
  bool undefined = false;
};

inline ScoreReport make_report(const DocumentCounts& c, bool with_singletons) {
  ScoreReport r;
  r.muc = finalize(c.muc);
  r.b3 = finalize(c.b3);
  r.ceafe = finalize(c.ceafe);
  r.conll = (r.muc.f1 + r.b3.f1 + r.ceafe.f1) / 3.0;
  r.with_singletons = with_singletons;
  r.undefined = c.b3.recall_den == 0;
  return r;
}

inline ScoreReport score(const std::vector<Entity>& key, const std::vector<Entity>& response,
                         bool with_singletons) {
  return make_report(count_document(key, response, with_singletons), with_singletons);
}

// Micro-aggregated score of a corpus; documents are paired by position.
inline ScoreReport score_corpus(const std::vector<Document>& key, const std::vector<Document>& response,
                                bool with_singletons) {
  if (key.size() != response.size())
    throw FormatError("key has " + std::to_string(key.size()) + " documents, response " +
                                std::to_string(response.size()));
  DocumentCounts total;
  for (std::size_t i = 0; i < key.size(); ++i)
    total += count_document(key[i].entities, response[i].entities, with_singletons);
  return make_report(total, with_singletons);
}

// Unweighted mean of per-dataset CoNLL scores.
inline double macro_average(const std::vector<ScoreReport>& reports) {
  if (reports.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : reports) sum += r.conll;
  return sum / static_cast<double>(reports.size());
}

inline std::string format_table(const ScoreReport& r) {
  char buf[128];
  std::string out = "metric      recall  precision       F1\n";
  auto row = [&](const char* name, const MetricScore& m) {
    std::snprintf(buf, sizeof buf, "%-8s %9.2f  %9.2f  %9.2f\n", name, m.recall, m.precision, m.f1);
    out += buf;
  };
  row("MUC", r.muc);
  row("B3", r.b3);
  row("CEAF-e", r.ceafe);
  std::snprintf(buf, sizeof buf, "CoNLL %32.2f\n", r.conll);
  out += buf;
  out += r.with_singletons ? "(with singletons)\n" : "(without singletons)\n";
  if (r.undefined) out += "warning: key contains no mentions to score\n";
  return out;
}

inline nlohmann::json to_json(const ScoreReport& r) {
  auto metric = [](const MetricScore& m) {
    return nlohmann::json{{"recall", m.recall}, {"precision", m.precision}, {"f1", m.f1}};
  };
  return {{"muc", metric(r.muc)},       {"b3", metric(r.b3)},
          {"ceafe", metric(r.ceafe)},   {"conll", r.conll},
          {"with_singletons", r.with_singletons}, {"undefined", r.undefined}};
}

}  // namespace corpipe::scorer
