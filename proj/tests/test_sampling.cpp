#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <vector>

#include "corpipe/sampling.hpp"

using namespace corpipe;
using sampling::MixSpec;
using sampling::Strategy;

namespace {

MixSpec spec_of(std::vector<sampling::DatasetInfo> datasets, Strategy s, std::uint64_t seed = 1) {
  MixSpec spec;
  spec.datasets = std::move(datasets);
  spec.strategy = s;
  spec.seed = seed;
  return spec;
}

std::vector<std::size_t> pools(const MixSpec& spec) {
  std::vector<std::size_t> out;
  for (const auto& d : spec.datasets) out.push_back(static_cast<std::size_t>(d.size));
  return out;
}

}  // namespace

TEST(Sampling, LogarithmicWeightsAtTheRangeEnds) {
  EXPECT_EQ(sampling::logarithmic_weights({457, 40000}), (std::vector<double>{1, 5}));
  EXPECT_EQ(sampling::logarithmic_weights({457, 457}), (std::vector<double>{1, 1}));
  EXPECT_EQ(sampling::logarithmic_weights({100}), std::vector<double>{1});
  // ln 1000 sits halfway between ln 10 and ln 100000: 1 + 4 * 0.5
  EXPECT_EQ(sampling::logarithmic_weights({10, 1000, 100000}), (std::vector<double>{1, 3, 5}));
}

TEST(Sampling, UniformAndLinearRatios) {
  auto u = sampling::compute_ratios(spec_of({{"a", 10}, {"b", 30}}, Strategy::kUniform));
  EXPECT_EQ(u.probabilities, (std::vector<double>{0.5, 0.5}));
  auto l = sampling::compute_ratios(spec_of({{"a", 10}, {"b", 30}}, Strategy::kLinear));
  EXPECT_DOUBLE_EQ(l.probabilities[0], 0.25);
  EXPECT_DOUBLE_EQ(l.probabilities[1], 0.75);
}

TEST(Sampling, HalfFocusGivesTheTargetHalf) {
  auto spec = spec_of({{"a", 457}, {"b", 40000}, {"c", 5000}, {"d", 900}}, Strategy::kHalfFocus);
  for (const char* focus : {"a", "b", "c"}) {
    spec.focus = focus;
    auto r = sampling::compute_ratios(spec);
    double total = 0;
    for (std::size_t i = 0; i < r.corpus_ids.size(); ++i) {
      if (r.corpus_ids[i] == focus) EXPECT_DOUBLE_EQ(r.probabilities[i], 0.5);
      total += r.probabilities[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  spec.focus = "zz";
  EXPECT_THROW(sampling::compute_ratios(spec), ConfigError);
  auto single = spec_of({{"a", 10}}, Strategy::kHalfFocus);
  single.focus = "a";
  EXPECT_EQ(sampling::compute_ratios(single).probabilities, std::vector<double>{1.0});
}

TEST(Sampling, ExcludedDatasetsAreNeverDrawn) {
  auto spec = spec_of({{"a", 457}, {"b", 40000}, {"c", 3000}}, Strategy::kLogarithmic, 4);
  spec.exclude = {"b"};
  sampling::MixedStream stream(spec, pools(spec));
  EXPECT_EQ(stream.ratios().corpus_ids, (std::vector<std::string>{"a", "c"}));
  for (int i = 0; i < 5000; ++i) EXPECT_NE(stream.next().dataset, 1u);
  spec.exclude = {"a", "b", "c"};
  EXPECT_THROW(sampling::compute_ratios(spec), ConfigError);
}

TEST(Sampling, InvalidInputs) {
  EXPECT_THROW(sampling::compute_ratios(spec_of({{"a", 0}}, Strategy::kUniform)), ConfigError);
  EXPECT_THROW(sampling::strategy_from_string("zipf"), ConfigError);
  auto spec = spec_of({{"a", 3}}, Strategy::kUniform);
  EXPECT_THROW(sampling::MixedStream(spec, {}), ConfigError);
}

TEST(Sampling, SameSeedSameStream) {
  auto spec = spec_of({{"a", 457}, {"b", 40000}}, Strategy::kLogarithmic, 77);
  spec.use_corpus_id = true;
  sampling::MixedStream s1(spec, pools(spec)), s2(spec, pools(spec));
  for (int i = 0; i < 1000; ++i) {
    auto a = s1.next(), b = s2.next();
    ASSERT_EQ(a.dataset, b.dataset);
    ASSERT_EQ(a.example, b.example);
    ASSERT_EQ(a.corpus_id, b.corpus_id);
    ASSERT_FALSE(a.corpus_id.empty());
  }
}

TEST(Sampling, DrawFrequenciesWithinThreeSigma) {
  for (auto strategy : {Strategy::kLogarithmic, Strategy::kUniform, Strategy::kLinear, Strategy::kHalfFocus}) {
    auto spec = spec_of({{"a", 457}, {"b", 40000}, {"c", 6000}}, strategy, 5);
    spec.focus = "a";
    sampling::MixedStream stream(spec, pools(spec));
    const int n = 60000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[stream.next().dataset];
    for (int k = 0; k < 3; ++k) {
      double p = stream.ratios().probabilities[k];
      double sigma = std::sqrt(n * p * (1 - p));
      EXPECT_LE(std::abs(counts[k] - n * p), 3 * sigma) << sampling::to_string(strategy) << " dataset " << k;
    }
  }
}

TEST(Sampling, LinearEqualsUniformOverTheConcatenation) {
  auto spec = spec_of({{"a", 7}, {"b", 20}, {"c", 13}}, Strategy::kLinear, 12);
  sampling::MixedStream stream(spec, pools(spec));
  std::vector<std::size_t> offset{0, 7, 27};
  const int cells = 40, n = 60000;
  std::vector<int> counts(cells, 0);
  for (int i = 0; i < n; ++i) {
    auto d = stream.next();
    ++counts[offset[d.dataset] + d.example];
  }
  double expected = static_cast<double>(n) / cells, stat = 0;
  for (int c : counts) stat += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(cells - 1);
  double p_value = boost::math::cdf(boost::math::complement(dist, stat));
  EXPECT_GT(p_value, 0.01) << "chi2 = " << stat;
}
