#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "corpipe/corefud_io.hpp"
#include "corpipe/mention_codec.hpp"
#include "corpipe/model.hpp"
#include "corpipe/synth.hpp"

using namespace corpipe;

namespace {

std::vector<codec::Span> sentence_spans(const Document& doc, int sentence) {
  auto starts = sentence_starts(doc);
  std::vector<codec::Span> out;
  for (const auto& e : doc.entities)
    for (const auto& m : e.mentions)
      if (sentence_of(starts, m.first()) == sentence) out.push_back({m.first() - starts[sentence], m.last() - starts[sentence]});
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Synth, SameSeedSameCorpus) {
  synth::SynthSpec spec;
  spec.seed = 17;
  EXPECT_EQ(synth::generate(spec), synth::generate(spec));
  auto other = spec;
  other.seed = 18;
  EXPECT_NE(synth::generate(spec), synth::generate(other));
}

TEST(Synth, ShapeFollowsTheSettings) {
  synth::SynthSpec spec;
  spec.documents = 7;
  spec.sentences_per_doc = 3;
  spec.empty_node_probability = 0;
  auto docs = synth::generate(spec);
  ASSERT_EQ(docs.size(), 7u);
  for (const auto& doc : docs) {
    EXPECT_EQ(doc.corpus_id, "synth");
    ASSERT_EQ(doc.sentences.size(), 3u);
    for (const auto& s : doc.sentences) {
      EXPECT_GE(s.tokens.size(), 5u);
      EXPECT_LE(s.tokens.size(), 10u);
    }
    EXPECT_LE(doc.entities.size(), 5u);
  }
  EXPECT_EQ(docs[2].doc_id, "synth-d3");
  EXPECT_EQ(docs[2].sentences[1].sentence_id, "synth-d3-s2");
}

TEST(Synth, MentionsAreContinuousUniqueAndWithinDepth) {
  synth::SynthSpec spec;
  spec.documents = 40;
  spec.max_depth = 2;
  spec.crossing_probability = 0.5;
  spec.seed = 4;
  for (const auto& doc : synth::generate(spec)) {
    std::set<std::vector<int>> seen;
    for (const auto& e : doc.entities) {
      EXPECT_GE(e.mentions.size(), 1u);
      for (const auto& m : e.mentions) {
        EXPECT_TRUE(m.is_continuous());
        EXPECT_LE(static_cast<int>(m.token_positions.size()), spec.max_mention_length);
        EXPECT_TRUE(seen.insert(m.token_positions).second);
      }
    }
    for (int s = 0; s < static_cast<int>(doc.sentences.size()); ++s) {
      auto spans = sentence_spans(doc, s);
      auto tags = codec::encode_mentions(static_cast<int>(doc.sentences[s].tokens.size()), spans);
      for (const auto& t : tags) EXPECT_LE(t.depth_before, spec.max_depth);
      EXPECT_EQ(codec::decode_tags(tags).spans, spans);
    }
  }
}

TEST(Synth, CrossingProbabilityProducesCrossingSpans) {
  synth::SynthSpec spec;
  spec.documents = 30;
  spec.crossing_probability = 1.0;
  spec.mention_attempts_per_sentence = 6;
  spec.min_sentence_length = 8;
  spec.seed = 2;
  int crossing = 0;
  for (const auto& doc : synth::generate(spec))
    for (int s = 0; s < static_cast<int>(doc.sentences.size()); ++s) {
      auto spans = sentence_spans(doc, s);
      for (std::size_t i = 0; i < spans.size(); ++i)
        for (std::size_t j = i + 1; j < spans.size(); ++j) crossing += synth::detail::crosses(spans[i], spans[j]);
    }
  EXPECT_GT(crossing, 0);
  spec.crossing_probability = 0;
  for (const auto& doc : synth::generate(spec))
    for (int s = 0; s < static_cast<int>(doc.sentences.size()); ++s) {
      auto spans = sentence_spans(doc, s);
      for (std::size_t i = 0; i < spans.size(); ++i)
        for (std::size_t j = i + 1; j < spans.size(); ++j) EXPECT_FALSE(synth::detail::crosses(spans[i], spans[j]));
    }
}

TEST(Synth, NoEntitiesWhenNoneRequested) {
  synth::SynthSpec spec;
  spec.min_entities = 0;
  spec.max_entities = 0;
  for (const auto& doc : synth::generate(spec)) EXPECT_TRUE(doc.entities.empty());
}

TEST(Synth, EmptyNodesAppearAndSurface) {
  synth::SynthSpec spec;
  spec.empty_node_probability = 0.5;
  spec.seed = 6;
  int empty = 0;
  for (const auto& doc : synth::generate(spec)) {
    for (const auto& s : doc.sentences)
      for (const auto& t : s.tokens) empty += t.is_empty;
    auto surfaced = io::surface_empty_nodes(doc);
    EXPECT_EQ(io::restore_empty_nodes(surfaced), doc);
  }
  EXPECT_GT(empty, 0);
}

TEST(Synth, GoldTagsAreEncodable) {
  synth::SynthSpec spec;
  spec.documents = 10;
  for (const auto& doc : synth::generate(spec)) {
    auto g = model::gold_mentions(doc);
    EXPECT_EQ(g.duplicates, 0);
    EXPECT_EQ(g.cross_sentence, 0);
    EXPECT_NO_THROW(model::gold_tags(doc));
  }
}

TEST(Synth, InvalidSettingsAreRejected) {
  synth::SynthSpec spec;
  spec.max_sentence_length = 2;
  EXPECT_THROW(synth::generate(spec), ConfigError);
  spec = {};
  spec.crossing_probability = 1.5;
  EXPECT_THROW(synth::generate(spec), ConfigError);
}
