#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "corpipe/linker.hpp"
#include "corpipe/oracles.hpp"
#include "corpipe/union_find.hpp"

using namespace corpipe;
using Matrix = Eigen::MatrixXd;

namespace {

struct Fixture {
  ad::ParameterSet params;
  linker::LinkerParams lp;
  Matrix reprs;

  Fixture(int dim, int mentions, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    lp = linker::add_linker_params(params, dim, rng);
    reprs = oracle::random_emissions(mentions, 2 * dim, rng);
  }
};

}  // namespace

TEST(Linker, TargetsCollectEarlierMentionsOfTheEntity) {
  auto t = linker::make_targets({0, 1, 0, 0, 1});
  EXPECT_EQ(t.gold[0], std::vector<int>{0});
  EXPECT_EQ(t.gold[1], std::vector<int>{1});
  EXPECT_EQ(t.gold[2], std::vector<int>{0});
  EXPECT_EQ(t.gold[3], (std::vector<int>{0, 2}));
  EXPECT_EQ(t.gold[4], std::vector<int>{1});
  auto capped = linker::make_targets({0, 0, 0, 0}, 1);
  EXPECT_EQ(capped.gold[3], std::vector<int>{2});
}

TEST(Linker, LogitsAreMaskedAboveTheDiagonal) {
  Fixture f(4, 5, 1);
  auto logits = linker::antecedent_logits(f.reprs, f.params, f.lp);
  auto probs = linker::antecedent_probabilities(logits);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-12);
    for (int j = i + 1; j < 5; ++j) {
      EXPECT_EQ(logits(i, j), -std::numeric_limits<double>::infinity());
      EXPECT_EQ(probs(i, j), 0.0);
    }
  }
}

TEST(Linker, RepresentationWidthIsChecked) {
  Fixture f(4, 3, 2);
  EXPECT_THROW(linker::antecedent_logits(Matrix::Zero(3, 5), f.params, f.lp), ModelError);
}

TEST(Linker, SingleMentionHasZeroLoss) {
  Fixture f(4, 1, 3);
  auto logits = linker::antecedent_logits(f.reprs, f.params, f.lp);
  EXPECT_NEAR(linker::antecedent_loss(logits, linker::make_targets({0})), 0.0, 1e-15);
}

TEST(Linker, LossModesAgreeWithSingleGoldAntecedents) {
  Fixture f(4, 4, 4);
  auto logits = linker::antecedent_logits(f.reprs, f.params, f.lp);
  auto targets = linker::make_targets({0, 1, 0, 1});
  EXPECT_NEAR(linker::antecedent_loss(logits, targets, linker::LinkLoss::kUniformTarget),
              linker::antecedent_loss(logits, targets, linker::LinkLoss::kMarginalLikelihood), 1e-12);
  auto multi = linker::make_targets({0, 0, 0});
  EXPECT_GT(linker::antecedent_loss(logits.topLeftCorner(3, 3), multi, linker::LinkLoss::kUniformTarget),
            linker::antecedent_loss(logits.topLeftCorner(3, 3), multi, linker::LinkLoss::kMarginalLikelihood));
}

TEST(Linker, HandComputedUniformTargetLoss) {
  // two rows; mention 1 has gold {0}; mention 0 has {0}
  Matrix logits(2, 2);
  logits << 0.0, -std::numeric_limits<double>::infinity(), std::log(3.0), 0.0;
  // p(1 -> 0) = 3/4
  double expected = (0.0 - std::log(0.75)) / 2.0;
  EXPECT_NEAR(linker::antecedent_loss(logits, linker::make_targets({0, 0})), expected, 1e-12);
  EXPECT_NEAR(linker::antecedent_loss(logits, linker::make_targets({0, 0}), linker::LinkLoss::kUniformTarget, 1),
              -std::log(0.75), 1e-12);
}

TEST(Linker, GradientMatchesFiniteDifferences) {
  for (auto mode : {linker::LinkLoss::kUniformTarget, linker::LinkLoss::kMarginalLikelihood})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Fixture f(3, 6, 10 + seed);
      auto targets = linker::make_targets({0, 1, 0, 2, 0, 1});
      int first = static_cast<int>(seed);
      auto loss_value = [&] {
        ad::Tape t(&f.params, false);
        auto s = linker::antecedent_scores(t, t.constant(f.reprs), f.lp, seed == 2);
        return t.scalar(linker::antecedent_loss(t, s, targets, mode, first));
      };
      ad::Tape t(&f.params);
      ad::Var reprs = t.constant(f.reprs);
      auto s = linker::antecedent_scores(t, reprs, f.lp, seed == 2);
      f.params.zero_grad();
      t.backward(linker::antecedent_loss(t, s, targets, mode, first));
      for (auto& p : f.params) {
        auto numeric = oracle::numeric_gradient(loss_value, p.value, 1e-5);
        EXPECT_LE(oracle::max_relative_error(p.grad, numeric), 1e-4) << p.name;
      }
    }
}

TEST(Linker, DecodeTakesArgmaxWithRecencyTieBreak) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix logits(4, 4);
  logits << 0, ninf, ninf, ninf,  //
      1, 0, ninf, ninf,           //
      2, 2, 1, ninf,              //
      0, 0, 0, 0;
  EXPECT_EQ(linker::decode_links(logits), (std::vector<int>{0, 0, 1, 3}));
}

TEST(Linker, LinksToClusters) {
  auto clusters = linker::links_to_clusters({0, 0, 2, 1, 2});
  EXPECT_EQ(clusters, (std::vector<std::vector<int>>{{0, 1, 3}, {2, 4}}));
  EXPECT_THROW(linker::links_to_clusters({1, 1}), ModelError);
}

TEST(Linker, AnyGoldAntecedentGivesTheGoldPartition) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 300; ++k) {
    int m = std::uniform_int_distribution<int>(1, 20)(rng);
    auto entities = oracle::random_entities(m, rng);
    ASSERT_TRUE(oracle::cluster_invariant(entities, 20, rng));
  }
}

TEST(UnionFind, ComponentsOrderedBySmallestMember) {
  UnionFind uf(6);
  uf.unite(4, 1);
  uf.unite(5, 3);
  uf.unite(3, 4);
  EXPECT_EQ(uf.components(), (std::vector<std::vector<int>>{{0}, {1, 3, 4, 5}, {2}}));
  EXPECT_EQ(uf.find(5), uf.find(1));
}
