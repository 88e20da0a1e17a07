#pragma once

// Seeded generator of small CorefUD corpora for tests and toy training runs.
//
// Every sentence gets a random dependency tree. Mention spans are sampled
// and rejected when they would duplicate a span, share a syntactic head
// with another mention of the sentence, exceed the nesting depth, or cross
// a mention of their own entity (which the bracket notation cannot
// express). Entities are drawn from an urn so that frequent entities keep
// getting mentioned, and each entity's mentions share a head word.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "corpipe/corefud_io.hpp"
#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/mention_codec.hpp"
#include "corpipe/scorer.hpp"

namespace corpipe::synth {

struct SynthSpec {
  int documents = 20;
  int sentences_per_doc = 4;
  int min_sentence_length = 5;
  int max_sentence_length = 10;
  int vocabulary_size = 200;
  int max_depth = 3;
  double crossing_probability = 0.2;
  double empty_node_probability = 0.05;
  int min_entities = 2;
  int max_entities = 5;
  int max_mention_length = 4;
  int mention_attempts_per_sentence = 3;
  std::string corpus_id = "synth";
  std::uint64_t seed = 1;

  void validate() const {
    if (documents < 0 || sentences_per_doc < 1 || min_sentence_length < 1 ||
        max_sentence_length < min_sentence_length || vocabulary_size < 8 || max_depth < 1 ||
        min_entities < 0 || max_entities < min_entities || max_mention_length < 1 ||
        mention_attempts_per_sentence < 0)
      throw ConfigError("invalid synthetic corpus settings");
    for (double p : {crossing_probability, empty_node_probability})
      if (p < 0 || p > 1) throw ConfigError("probabilities must lie in [0, 1]");
  }
};

namespace detail {

struct SentenceDraft {
  std::vector<Token> tokens;
  std::vector<int> parents;  // sentence-local position of the parent, -1 root/none
};

inline SentenceDraft draft_sentence(const SynthSpec& spec, int lexicon_start, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len_d(spec.min_sentence_length, spec.max_sentence_length);
  std::uniform_int_distribution<int> word_d(lexicon_start, spec.vocabulary_size - 1);
  std::bernoulli_distribution empty_d(spec.empty_node_probability);
  int n = len_d(rng);

  // random tree over words 1..n
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i + 1;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> head(n + 1, 0);
  for (int i = 1; i < n; ++i) head[order[i]] = order[std::uniform_int_distribution<int>(0, i - 1)(rng)];

  SentenceDraft d;
  std::vector<int> word_pos(n + 1, -1);
  for (int w = 1; w <= n; ++w) {
    Token t;
    t.word_index = w;
    t.form = "w" + std::to_string(word_d(rng));
    t.lemma = t.form;
    t.surfaced_form = t.form;
    t.head = head[w];
    t.columns = {"X", "_", "_", head[w] == 0 ? "root" : "dep", "_"};
    word_pos[w] = static_cast<int>(d.tokens.size());
    d.tokens.push_back(std::move(t));
    int k = 0;
    while (empty_d(rng) && k < 2) {
      Token e;
      e.word_index = w;
      e.empty_index = ++k;
      e.is_empty = true;
      std::uniform_int_distribution<int> kind(0, 3);
      int c = kind(rng);
      e.form = c == 0 ? "_" : "w" + std::to_string(word_d(rng));
      e.lemma = c <= 1 ? "_" : e.form;
      d.tokens.push_back(std::move(e));
    }
  }
  for (const auto& t : d.tokens) d.parents.push_back(!t.is_empty && t.head && *t.head > 0 ? word_pos[*t.head] : -1);
  return d;
}

inline bool crosses(const codec::Span& a, const codec::Span& b) {
  return (a.start < b.start && b.start <= a.end && a.end < b.end) ||
         (b.start < a.start && a.start <= b.end && b.end < a.end);
}

inline int max_stack_depth(int n, const std::vector<codec::Span>& spans) {
  int depth = 0;
  for (const auto& t : codec::encode_mentions(n, spans)) depth = std::max(depth, t.depth_before);
  return depth;
}

}  // namespace detail

inline std::vector<Document> generate(const SynthSpec& spec) {
  spec.validate();
  // the first quarter of the vocabulary holds entity head words
  const int lexicon_start = std::max(1, spec.vocabulary_size / 4);
  std::vector<Document> corpus;
  for (int di = 0; di < spec.documents; ++di) {
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(di) + 1);
    Document doc;
    doc.doc_id = spec.corpus_id + "-d" + std::to_string(di + 1);
    doc.corpus_id = spec.corpus_id;

    int n_entities = std::uniform_int_distribution<int>(spec.min_entities, spec.max_entities)(rng);
    std::vector<int> lexeme_pool(lexicon_start);
    for (int i = 0; i < lexicon_start; ++i) lexeme_pool[i] = i;
    std::shuffle(lexeme_pool.begin(), lexeme_pool.end(), rng);
    std::vector<std::string> lexeme(n_entities);
    for (int e = 0; e < n_entities; ++e) lexeme[e] = "w" + std::to_string(lexeme_pool[e % lexicon_start]);
    std::vector<int> uses(n_entities, 0);
    std::vector<std::vector<Mention>> entity_mentions(n_entities);

    int base = 0;
    for (int si = 0; si < spec.sentences_per_doc; ++si) {
      auto draft = detail::draft_sentence(spec, lexicon_start, rng);
      const int n = static_cast<int>(draft.tokens.size());
      std::vector<codec::Span> spans;
      std::vector<int> span_entity, span_head;

      for (int attempt = 0; attempt < spec.mention_attempts_per_sentence && n_entities > 0; ++attempt) {
        // urn: weight = previous uses + 1
        std::vector<double> w;
        for (int u : uses) w.push_back(u + 1.0);
        int ent = std::discrete_distribution<int>(w.begin(), w.end())(rng);

        codec::Span span;
        bool want_cross = std::bernoulli_distribution(spec.crossing_probability)(rng);
        std::vector<int> crossable;
        for (int i = 0; i < static_cast<int>(spans.size()); ++i)
          if (spans[i].end > spans[i].start && spans[i].end + 1 < n && span_entity[i] != ent) crossable.push_back(i);
        if (want_cross && !crossable.empty()) {
          const auto& o = spans[crossable[std::uniform_int_distribution<int>(0, static_cast<int>(crossable.size()) - 1)(rng)]];
          span.start = std::uniform_int_distribution<int>(o.start + 1, o.end)(rng);
          int last = std::min(n - 1, span.start + spec.max_mention_length - 1);
          if (last < o.end + 1) continue;
          span.end = std::uniform_int_distribution<int>(o.end + 1, last)(rng);
        } else {
          int len = std::uniform_int_distribution<int>(1, std::min(n, spec.max_mention_length))(rng);
          span.start = std::uniform_int_distribution<int>(0, n - len)(rng);
          span.end = span.start + len - 1;
        }

        if (std::find(spans.begin(), spans.end(), span) != spans.end()) continue;
        std::vector<int> positions;
        for (int p = span.start; p <= span.end; ++p) positions.push_back(p);
        int head = scorer::head_of_span(positions, draft.parents);
        if (std::find(span_head.begin(), span_head.end(), head) != span_head.end()) continue;
        bool bad = false;
        for (int i = 0; i < static_cast<int>(spans.size()); ++i)
          if ((span_entity[i] == ent || !want_cross) && detail::crosses(spans[i], span)) bad = true;
        if (bad) continue;
        auto trial = spans;
        trial.push_back(span);
        if (detail::max_stack_depth(n, trial) > spec.max_depth) continue;

        spans.push_back(span);
        span_entity.push_back(ent);
        span_head.push_back(head);
        ++uses[ent];
      }

      for (std::size_t i = 0; i < spans.size(); ++i) {
        auto& t = draft.tokens[span_head[i]];
        t.form = lexeme[span_entity[i]];
        if (!t.is_empty || t.lemma != "_") t.lemma = t.form;
        if (!t.is_empty) t.surfaced_form = t.form;
        Mention m;
        for (int p = spans[i].start; p <= spans[i].end; ++p) m.token_positions.push_back(base + p);
        m.head_position = base + span_head[i];
        entity_mentions[span_entity[i]].push_back(std::move(m));
      }

      Sentence s;
      s.sentence_id = doc.doc_id + "-s" + std::to_string(si + 1);
      std::string text;
      for (const auto& t : draft.tokens)
        if (!t.is_empty) text += (text.empty() ? "" : " ") + t.form;
      s.comments.push_back("# text = " + text);
      s.tokens = std::move(draft.tokens);
      base += n;
      doc.sentences.push_back(std::move(s));
    }

    int next_id = 1;
    for (int e = 0; e < n_entities; ++e) {
      if (entity_mentions[e].empty()) continue;
      doc.entities.push_back(Entity{"e" + std::to_string(next_id++), "", std::move(entity_mentions[e])});
    }
    io::canonicalize(doc);
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace corpipe::synth
