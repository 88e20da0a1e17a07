#pragma once

// Mixing several training corpora into one example stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "corpipe/errors.hpp"

namespace corpipe::sampling {

enum class Strategy { kLogarithmic, kUniform, kLinear, kHalfFocus };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kLogarithmic: return "logarithmic";
    case Strategy::kUniform: return "uniform";
    case Strategy::kLinear: return "linear";
    case Strategy::kHalfFocus: return "half_focus";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "logarithmic" || s == "log") return Strategy::kLogarithmic;
  if (s == "uniform") return Strategy::kUniform;
  if (s == "linear") return Strategy::kLinear;
  if (s == "half_focus" || s == "half-focus") return Strategy::kHalfFocus;
  throw ConfigError("unknown mixing strategy '" + s + "'");
}

struct DatasetInfo {
  std::string corpus_id;
  long size = 1;  // training sentences
};

struct MixSpec {
  std::vector<DatasetInfo> datasets;
  Strategy strategy = Strategy::kLogarithmic;
  std::string focus;  // target dataset of kHalfFocus
  bool use_corpus_id = false;
  std::set<std::string> exclude;
  std::uint64_t seed = 0;
};

struct SampleRatios {
  std::vector<std::string> corpus_ids;  // non-excluded datasets, in spec order
  std::vector<std::size_t> dataset_index;  // position in MixSpec::datasets
  std::vector<double> weights;
  std::vector<double> probabilities;
};

// round(1 + 4 (ln n - ln n_min) / (ln n_max - ln n_min)), halves rounded up.
inline std::vector<double> logarithmic_weights(const std::vector<long>& sizes) {
  std::vector<double> w(sizes.size(), 1.0);
  if (sizes.empty()) return w;
  double lo = std::log(static_cast<double>(*std::min_element(sizes.begin(), sizes.end())));
  double hi = std::log(static_cast<double>(*std::max_element(sizes.begin(), sizes.end())));
  if (hi - lo <= 0) return w;
  for (std::size_t i = 0; i < sizes.size(); ++i)
    w[i] = std::floor(1.0 + 4.0 * (std::log(static_cast<double>(sizes[i])) - lo) / (hi - lo) + 0.5);
  return w;
}

inline SampleRatios compute_ratios(const MixSpec& spec) {
  SampleRatios r;
  std::vector<long> sizes;
  for (std::size_t i = 0; i < spec.datasets.size(); ++i) {
    const auto& d = spec.datasets[i];
    if (d.size < 1) throw ConfigError("dataset '" + d.corpus_id + "' must have at least one sentence");
    if (spec.exclude.count(d.corpus_id)) continue;
    r.corpus_ids.push_back(d.corpus_id);
    r.dataset_index.push_back(i);
    sizes.push_back(d.size);
  }
  if (sizes.empty()) throw ConfigError("every dataset is excluded");

  switch (spec.strategy) {
    case Strategy::kLogarithmic: r.weights = logarithmic_weights(sizes); break;
    case Strategy::kUniform: r.weights.assign(sizes.size(), 1.0); break;
    case Strategy::kLinear:
      for (long s : sizes) r.weights.push_back(static_cast<double>(s));
      break;
    case Strategy::kHalfFocus: {
      auto it = std::find(r.corpus_ids.begin(), r.corpus_ids.end(), spec.focus);
      if (it == r.corpus_ids.end()) throw ConfigError("focus dataset '" + spec.focus + "' is not being mixed");
      std::size_t target = static_cast<std::size_t>(it - r.corpus_ids.begin());
      std::vector<long> rest;
      for (std::size_t i = 0; i < sizes.size(); ++i)
        if (i != target) rest.push_back(sizes[i]);
      auto rest_w = logarithmic_weights(rest);
      double rest_sum = 0;
      for (double w : rest_w) rest_sum += w;
      r.weights.assign(sizes.size(), 0.0);
      // the focus dataset gets as much weight as all the others together
      r.weights[target] = rest.empty() ? 1.0 : rest_sum;
      for (std::size_t i = 0, k = 0; i < sizes.size(); ++i)
        if (i != target) r.weights[i] = rest_w[k++];
      break;
    }
  }
  double total = 0;
  for (double w : r.weights) total += w;
  for (double w : r.weights) r.probabilities.push_back(w / total);
  return r;
}

struct Draw {
  std::size_t dataset = 0;  // index into MixSpec::datasets
  std::size_t example = 0;
  std::string corpus_id;    // empty unless use_corpus_id
};

// Endless stream: pick a dataset by ratio, then an example uniformly.
class MixedStream {
 public:
  MixedStream(const MixSpec& spec, std::vector<std::size_t> pool_sizes)
      : ratios_(compute_ratios(spec)), pools_(std::move(pool_sizes)), use_corpus_id_(spec.use_corpus_id),
        rng_(spec.seed) {
    if (pools_.size() != spec.datasets.size()) throw ConfigError("one example pool per dataset is required");
    for (std::size_t i : ratios_.dataset_index)
      if (pools_[i] == 0) throw ConfigError("dataset '" + spec.datasets[i].corpus_id + "' has no examples");
    double acc = 0;
    for (double p : ratios_.probabilities) cumulative_.push_back(acc += p);
    cumulative_.back() = 1.0;
  }

  Draw next() {
    double u = uniform();
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) -
                                             cumulative_.begin());
    k = std::min(k, cumulative_.size() - 1);
    Draw d;
    d.dataset = ratios_.dataset_index[k];
    d.example = static_cast<std::size_t>(uniform() * static_cast<double>(pools_[d.dataset]));
    d.example = std::min(d.example, pools_[d.dataset] - 1);
    if (use_corpus_id_) d.corpus_id = ratios_.corpus_ids[k];
    return d;
  }

  const SampleRatios& ratios() const { return ratios_; }

 private:
  // 53 random bits in [0, 1); independent of the standard library's
  // distribution implementations.
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  SampleRatios ratios_;
  std::vector<std::size_t> pools_;
  bool use_corpus_id_;
  std::mt19937_64 rng_;
  std::vector<double> cumulative_;
};

}  // namespace corpipe::sampling
