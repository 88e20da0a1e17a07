#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "corpipe/scorer.hpp"

using namespace corpipe;
using scorer::Clustering;

namespace {

Mention span(int a, int b, int head = -1) {
  Mention m;
  for (int i = a; i <= b; ++i) m.token_positions.push_back(i);
  m.head_position = head < 0 ? a : head;
  return m;
}

Entity entity(std::string id, std::vector<Mention> mentions) {
  Entity e;
  e.entity_id = std::move(id);
  e.mentions = std::move(mentions);
  return e;
}

// key {a b c} {d}; response {a b} {c d}; one token per mention
std::vector<Entity> kKey() { return {entity("e1", {span(0, 0), span(1, 1), span(2, 2)}), entity("e2", {span(3, 3)})}; }
std::vector<Entity> kResponse() { return {entity("r1", {span(0, 0), span(1, 1)}), entity("r2", {span(2, 2), span(3, 3)})}; }

double brute_phi(const Clustering& key, const Clustering& response) {
  auto sim = [&](std::size_t i, std::size_t j) {
    int inter = 0;
    for (int a : key[i])
      if (std::count(response[j].begin(), response[j].end(), a)) ++inter;
    return 2.0 * inter / static_cast<double>(key[i].size() + response[j].size());
  };
  std::size_t n = std::max(key.size(), response.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    double total = 0;
    for (std::size_t i = 0; i < key.size(); ++i)
      if (perm[i] < static_cast<int>(response.size())) total += sim(i, perm[i]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Clustering random_clustering(int mentions, std::mt19937_64& rng) {
  Clustering c;
  for (int m = 0; m < mentions; ++m) {
    int slot = std::uniform_int_distribution<int>(0, static_cast<int>(c.size()))(rng);
    if (slot == static_cast<int>(c.size())) c.emplace_back();
    c[slot].push_back(m);
  }
  return c;
}

}  // namespace

TEST(Scorer, IdenticalEntitiesScoreHundred) {
  for (bool singletons : {false, true}) {
    auto r = scorer::score(kKey(), kKey(), singletons);
    EXPECT_DOUBLE_EQ(r.conll, 100.0);
    EXPECT_DOUBLE_EQ(r.muc.f1, 100.0);
    EXPECT_DOUBLE_EQ(r.b3.f1, 100.0);
    EXPECT_DOUBLE_EQ(r.ceafe.f1, 100.0);
  }
}

TEST(Scorer, HandComputedWithSingletons) {
  auto r = scorer::score(kKey(), kResponse(), true);
  EXPECT_NEAR(r.muc.recall, 50.0, 1e-9);
  EXPECT_NEAR(r.muc.precision, 50.0, 1e-9);
  EXPECT_NEAR(r.b3.recall, 100.0 * 2 / 3, 1e-9);
  EXPECT_NEAR(r.b3.precision, 75.0, 1e-9);
  EXPECT_NEAR(r.b3.f1, 100.0 * 12 / 17, 1e-9);
  // phi = 4/5 + 2/3 over two clusters on both sides
  EXPECT_NEAR(r.ceafe.f1, 100.0 * (0.8 + 2.0 / 3) / 2, 1e-9);
  EXPECT_NEAR(r.conll, (50.0 + 100.0 * 12 / 17 + 100.0 * (0.8 + 2.0 / 3) / 2) / 3, 1e-9);
}

TEST(Scorer, HandComputedWithoutSingletons) {
  // key loses {d}; the response's d becomes an unaligned mention
  auto r = scorer::score(kKey(), kResponse(), false);
  EXPECT_NEAR(r.muc.recall, 50.0, 1e-9);
  EXPECT_NEAR(r.muc.precision, 50.0, 1e-9);
  // recall (4/3 + 1/3) / 3; precision (2 + 1/2 + 0) / 4
  EXPECT_NEAR(r.b3.recall, 100.0 * 5 / 9, 1e-9);
  EXPECT_NEAR(r.b3.precision, 62.5, 1e-9);
  // phi = 4/5 over one key and two response clusters
  EXPECT_NEAR(r.ceafe.recall, 80.0, 1e-9);
  EXPECT_NEAR(r.ceafe.precision, 40.0, 1e-9);
}

TEST(Scorer, SingletonToggleChangesOnlyWhatItShould) {
  std::vector<Entity> key{entity("e1", {span(0, 0), span(2, 2)}), entity("e2", {span(4, 4)})};
  std::vector<Entity> response{entity("r1", {span(0, 0), span(2, 2)})};
  EXPECT_DOUBLE_EQ(scorer::score(key, response, false).conll, 100.0);
  EXPECT_LT(scorer::score(key, response, true).conll, 100.0);
}

TEST(Scorer, PartialMatchEligibility) {
  Mention key = span(2, 5, 3);
  EXPECT_TRUE(scorer::eligible(key, span(3, 3)));
  EXPECT_TRUE(scorer::eligible(key, span(3, 4)));
  EXPECT_TRUE(scorer::eligible(key, span(2, 5)));
  EXPECT_FALSE(scorer::eligible(key, span(1, 3)));  // leaves the key span
  EXPECT_FALSE(scorer::eligible(key, span(4, 5)));  // misses the head
}

TEST(Scorer, HeadOnlyResponseMatchesFullKey) {
  std::vector<Entity> key{entity("e1", {span(0, 3, 1), span(6, 8, 8)}), entity("e2", {span(10, 11, 10), span(13, 13)})};
  std::vector<Entity> response{entity("a", {span(1, 1), span(8, 8)}), entity("b", {span(10, 10), span(13, 13)})};
  EXPECT_DOUBLE_EQ(scorer::score(key, response, true).conll, 100.0);
}

TEST(Scorer, AlignmentIsMaximumAndMaximal) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 300; ++k) {
    auto random_mentions = [&](int n) {
      std::vector<Mention> out;
      for (int i = 0; i < n; ++i) {
        int a = std::uniform_int_distribution<int>(0, 6)(rng);
        int b = a + std::uniform_int_distribution<int>(0, 3)(rng);
        out.push_back(span(a, b, std::uniform_int_distribution<int>(a, b)(rng)));
      }
      return out;
    };
    auto keys = random_mentions(std::uniform_int_distribution<int>(0, 6)(rng));
    auto responses = random_mentions(std::uniform_int_distribution<int>(0, 6)(rng));
    auto al = scorer::align_mentions(keys, responses);
    // brute-force maximum matching
    std::vector<bool> used(keys.size(), false);
    std::function<int(std::size_t)> best = [&](std::size_t r) -> int {
      if (r == responses.size()) return 0;
      int top = best(r + 1);
      for (std::size_t q = 0; q < keys.size(); ++q)
        if (!used[q] && scorer::eligible(keys[q], responses[r])) {
          used[q] = true;
          top = std::max(top, 1 + best(r + 1));
          used[q] = false;
        }
      return top;
    };
    EXPECT_EQ(al.matched, best(0));
    for (std::size_t r = 0; r < responses.size(); ++r) {
      int q = al.response_to_key[r];
      if (q >= 0) {
        EXPECT_TRUE(scorer::eligible(keys[q], responses[r]));
        EXPECT_EQ(al.key_to_response[q], static_cast<int>(r));
        continue;
      }
      for (std::size_t j = 0; j < keys.size(); ++j)
        if (al.key_to_response[j] < 0) EXPECT_FALSE(scorer::eligible(keys[j], responses[r]));
    }
  }
}

TEST(Scorer, CeafAssignmentMatchesPermutationSearch) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    int m = std::uniform_int_distribution<int>(1, 8)(rng);
    auto key = random_clustering(m, rng);
    auto response = random_clustering(m, rng);
    if (std::max(key.size(), response.size()) > 7) continue;
    auto c = scorer::score_clusterings(key, response);
    EXPECT_NEAR(c.ceafe.recall_num, brute_phi(key, response), 1e-9);
  }
}

TEST(Scorer, CorpusCountsAreMicroAveraged) {
  Document a, b;
  a.entities = kKey();
  b.entities = kResponse();
  auto r = scorer::score_corpus({a, a}, {b, a}, true);
  // MUC: recall (1 + 2) / (2 + 2), precision (1 + 2) / (2 + 2)
  EXPECT_NEAR(r.muc.recall, 75.0, 1e-9);
  EXPECT_NEAR(r.muc.precision, 75.0, 1e-9);
  EXPECT_THROW(scorer::score_corpus({a}, {}, true), FormatError);
  EXPECT_DOUBLE_EQ(scorer::macro_average({scorer::score(kKey(), kKey(), true), r}), (100.0 + r.conll) / 2);
}

TEST(Scorer, EmptyKeyIsFlaggedUndefined) {
  auto r = scorer::score({}, {}, false);
  EXPECT_TRUE(r.undefined);
  EXPECT_DOUBLE_EQ(r.conll, 0.0);
  EXPECT_NE(scorer::format_table(r).find("warning"), std::string::npos);
  EXPECT_EQ(scorer::to_json(r)["undefined"], true);
}

TEST(Scorer, SyntacticHeadOfSpan) {
  // 0 <- 1 -> 2, 1 attached to 3
  std::vector<int> parents{1, 3, 1, -1};
  EXPECT_EQ(scorer::head_of_span({0, 1, 2}, parents), 1);
  EXPECT_EQ(scorer::head_of_span({0, 2}, parents), 0);
  EXPECT_EQ(scorer::head_of_span({}, parents), -1);
}
