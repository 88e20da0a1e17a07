#pragma once

// Brute-force references and random instance generators shared by the test
// suite and `corpipe selftest`.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "corpipe/crf.hpp"
#include "corpipe/linker.hpp"
#include "corpipe/mention_codec.hpp"

namespace corpipe::oracle {

using Matrix = Eigen::MatrixXd;

// Calls f on every length-T sequence over [0, V) in lexicographic order.
inline void for_each_sequence(int T, int V, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> seq(T, 0);
  while (true) {
    f(seq);
    int i = T - 1;
    while (i >= 0 && ++seq[i] == V) seq[i--] = 0;
    if (i < 0) return;
  }
}

inline bool path_allowed(const std::vector<int>& path, const crf::CrfParams& p) {
  if (!p.start_mask[path.front()] || !p.end_mask[path.back()]) return false;
  for (std::size_t t = 1; t < path.size(); ++t)
    if (!p.valid(path[t - 1], path[t])) return false;
  return true;
}

inline double raw_path_score(const Matrix& e, const std::vector<int>& path, const crf::CrfParams& p) {
  double s = 0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += e(static_cast<long>(t), path[t]);
    if (t) s += p.transitions(path[t - 1], path[t]);
  }
  return s;
}

inline double brute_log_partition(const Matrix& e, const crf::CrfParams& p) {
  std::vector<double> scores;
  for_each_sequence(static_cast<int>(e.rows()), p.size(), [&](const std::vector<int>& path) {
    if (path_allowed(path, p)) scores.push_back(raw_path_score(e, path, p));
  });
  if (scores.empty()) return crf::kNegInf;
  double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0;
  for (double s : scores) sum += std::exp(s - m);
  return m + std::log(sum);
}

// First (lexicographically smallest) path with the maximal score.
inline std::vector<int> brute_viterbi(const Matrix& e, const crf::CrfParams& p) {
  std::vector<int> best;
  double top = crf::kNegInf;
  for_each_sequence(static_cast<int>(e.rows()), p.size(), [&](const std::vector<int>& path) {
    if (!path_allowed(path, p)) return;
    double s = raw_path_score(e, path, p);
    if (best.empty() || s > top) {
      top = s;
      best = path;
    }
  });
  return best;
}

// Random CRF: masks from a random tag vocabulary shape, random scores.
// Emissions take values from a small grid with probability `tie_rate` so
// that ties appear.
inline crf::CrfParams random_crf(int V, std::mt19937_64& rng) {
  auto p = crf::CrfParams::unconstrained(V);
  std::bernoulli_distribution keep(0.7);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int a = 0; a < V; ++a) {
    p.start_mask[a] = keep(rng);
    p.end_mask[a] = keep(rng);
    for (int b = 0; b < V; ++b) {
      p.validity[static_cast<std::size_t>(a) * V + b] = keep(rng);
      p.transitions(a, b) = normal(rng);
    }
  }
  p.start_mask[0] = p.end_mask[0] = 1;
  p.validity[0] = 1;
  return p;
}

inline Matrix random_emissions(int T, int V, std::mt19937_64& rng, double tie_rate = 0.0) {
  std::normal_distribution<double> normal(0.0, 1.5);
  std::bernoulli_distribution tie(tie_rate);
  Matrix e(T, V);
  for (long i = 0; i < e.size(); ++i) e.data()[i] = tie(rng) ? 0.5 : normal(rng);
  return e;
}

// Central differences of a scalar function of x, perturbing x in place.
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (long i = 0; i < x.size(); ++i) {
    double keep = x.data()[i];
    x.data()[i] = keep + h;
    double up = f();
    x.data()[i] = keep - h;
    double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

// Largest |a - n| / max(|a|, |n|, floor) over the entries.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6) {
  double worst = 0;
  for (long i = 0; i < analytic.size(); ++i) {
    double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

inline int stack_depth(int n, const std::vector<codec::Span>& spans) {
  int depth = 0;
  for (const auto& t : codec::encode_mentions(n, spans)) depth = std::max(depth, t.depth_before);
  return depth;
}

// Random distinct spans in a sentence of length n (crossing allowed) whose
// encoding stays within `max_depth`.
inline std::vector<codec::Span> random_spans(int n, int max_depth, std::mt19937_64& rng, int max_spans = 8) {
  std::vector<codec::Span> spans;
  int target = std::uniform_int_distribution<int>(0, max_spans)(rng);
  for (int attempt = 0; attempt < 4 * target && static_cast<int>(spans.size()) < target; ++attempt) {
    int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int len = std::uniform_int_distribution<int>(1, std::min(n - a, 6))(rng);
    codec::Span s{a, a + len - 1};
    if (std::find(spans.begin(), spans.end(), s) != spans.end()) continue;
    spans.push_back(s);
    if (stack_depth(n, spans) > max_depth) spans.pop_back();
  }
  std::sort(spans.begin(), spans.end());
  return spans;
}

inline std::vector<std::vector<int>> partition_of(const std::vector<int>& entity_of_mention) {
  std::vector<std::vector<int>> out;
  std::vector<int> seen;
  for (int i = 0; i < static_cast<int>(entity_of_mention.size()); ++i) {
    auto it = std::find(seen.begin(), seen.end(), entity_of_mention[i]);
    if (it == seen.end()) {
      seen.push_back(entity_of_mention[i]);
      out.push_back({i});
    } else {
      out[it - seen.begin()].push_back(i);
    }
  }
  return out;
}

// Picks one gold antecedent per mention from `choice` (index into G(i)) and
// returns the clusters the links induce.
inline std::vector<std::vector<int>> clusters_from_choice(const linker::AntecedentTargets& targets,
                                                          const std::vector<int>& choice) {
  std::vector<int> links;
  for (std::size_t i = 0; i < targets.gold.size(); ++i) links.push_back(targets.gold[i][choice[i]]);
  return linker::links_to_clusters(links);
}

// Checks that every sampled choice of gold antecedents reproduces the gold
// partition: the first and the most recent antecedent for all mentions,
// plus `samples` random mixtures.
inline bool cluster_invariant(const std::vector<int>& entity_of_mention, int samples, std::mt19937_64& rng) {
  auto targets = linker::make_targets(entity_of_mention);
  auto gold = partition_of(entity_of_mention);
  std::vector<int> first(targets.gold.size(), 0), last;
  for (const auto& g : targets.gold) last.push_back(static_cast<int>(g.size()) - 1);
  if (clusters_from_choice(targets, first) != gold || clusters_from_choice(targets, last) != gold) return false;
  for (int s = 0; s < samples; ++s) {
    std::vector<int> choice;
    for (const auto& g : targets.gold) choice.push_back(std::uniform_int_distribution<int>(0, static_cast<int>(g.size()) - 1)(rng));
    if (clusters_from_choice(targets, choice) != gold) return false;
  }
  return true;
}

inline std::vector<int> random_entities(int mentions, std::mt19937_64& rng) {
  int k = std::uniform_int_distribution<int>(1, std::max(1, mentions))(rng);
  std::vector<int> e;
  for (int i = 0; i < mentions; ++i) e.push_back(std::uniform_int_distribution<int>(0, k - 1)(rng));
  return e;
}

}  // namespace corpipe::oracle
