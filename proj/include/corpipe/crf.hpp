#pragma once

// Linear-chain CRF over the stack-instruction tag vocabulary. Transitions
// that the validity mask forbids contribute -inf; start and end masks only
// admit tags that begin / leave the stack empty.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "corpipe/errors.hpp"
#include "corpipe/mention_codec.hpp"

namespace corpipe::crf {

using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct CrfParams {
  Matrix transitions;             // V x V, entry (a, b) scores a -> b
  std::vector<char> start_mask;   // V
  std::vector<char> end_mask;     // V
  std::vector<char> validity;     // V x V row-major

  int size() const { return static_cast<int>(start_mask.size()); }
  bool valid(int a, int b) const { return validity[static_cast<std::size_t>(a) * size() + b] != 0; }

  // Everything allowed; zero transitions.
  static CrfParams unconstrained(int v) {
    CrfParams p;
    p.transitions = Matrix::Zero(v, v);
    p.start_mask.assign(v, 1);
    p.end_mask.assign(v, 1);
    p.validity.assign(static_cast<std::size_t>(v) * v, 1);
    return p;
  }

  static CrfParams from_vocabulary(const codec::TagVocabulary& vocab) {
    const int v = vocab.size();
    CrfParams p = unconstrained(v);
    for (int a = 0; a < v; ++a) {
      p.start_mask[a] = vocab.can_start(a);
      p.end_mask[a] = vocab.can_end(a);
      for (int b = 0; b < v; ++b) p.validity[static_cast<std::size_t>(a) * v + b] = vocab.compatible(a, b);
    }
    return p;
  }
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline void check_shapes(const Matrix& emissions, const CrfParams& params) {
  if (emissions.rows() < 1) throw CrfError("CRF needs at least one position");
  if (emissions.cols() != params.size() || params.transitions.rows() != params.size() ||
      params.transitions.cols() != params.size())
    throw CrfError("emission width " + std::to_string(emissions.cols()) + " does not match " +
                   std::to_string(params.size()) + " tags");
}

// alpha(t, j): log-sum of all valid prefixes ending in tag j at t.
inline Matrix forward(const Matrix& e, const CrfParams& p) {
  const int T = static_cast<int>(e.rows()), V = p.size();
  Matrix alpha(T, V);
  for (int j = 0; j < V; ++j) alpha(0, j) = p.start_mask[j] ? e(0, j) : kNegInf;
  for (int t = 1; t < T; ++t)
    for (int j = 0; j < V; ++j) {
      double acc = kNegInf;
      for (int i = 0; i < V; ++i)
        if (p.valid(i, j) && alpha(t - 1, i) != kNegInf) acc = log_add(acc, alpha(t - 1, i) + p.transitions(i, j));
      alpha(t, j) = acc == kNegInf ? kNegInf : acc + e(t, j);
    }
  return alpha;
}

// beta(t, j): log-sum of all valid suffixes after tag j at t (excluding e(t, j)).
inline Matrix backward(const Matrix& e, const CrfParams& p) {
  const int T = static_cast<int>(e.rows()), V = p.size();
  Matrix beta(T, V);
  for (int j = 0; j < V; ++j) beta(T - 1, j) = p.end_mask[j] ? 0.0 : kNegInf;
  for (int t = T - 2; t >= 0; --t)
    for (int i = 0; i < V; ++i) {
      double acc = kNegInf;
      for (int j = 0; j < V; ++j)
        if (p.valid(i, j) && beta(t + 1, j) != kNegInf)
          acc = log_add(acc, p.transitions(i, j) + e(t + 1, j) + beta(t + 1, j));
      beta(t, i) = acc;
    }
  return beta;
}

}  // namespace detail

inline double log_partition(const Matrix& emissions, const CrfParams& params) {
  detail::check_shapes(emissions, params);
  Matrix alpha = detail::forward(emissions, params);
  double z = kNegInf;
  for (int j = 0; j < params.size(); ++j)
    if (params.end_mask[j]) z = detail::log_add(z, alpha(emissions.rows() - 1, j));
  if (z == kNegInf) throw CrfError("no tag sequence satisfies the CRF masks");
  return z;
}

// Unnormalized score of a path; throws on the first forbidden step.
inline double path_score(const Matrix& emissions, std::span<const int> path, const CrfParams& params) {
  detail::check_shapes(emissions, params);
  if (static_cast<long>(path.size()) != emissions.rows())
    throw CrfError("path length " + std::to_string(path.size()) + " != " + std::to_string(emissions.rows()));
  for (int tag : path)
    if (tag < 0 || tag >= params.size()) throw CrfError("tag index " + std::to_string(tag) + " out of range");
  if (!params.start_mask[path[0]]) throw CrfError("tag " + std::to_string(path[0]) + " cannot start a sentence");
  double s = emissions(0, path[0]);
  for (std::size_t t = 1; t < path.size(); ++t) {
    if (!params.valid(path[t - 1], path[t]))
      throw CrfError("invalid transition " + std::to_string(path[t - 1]) + " -> " + std::to_string(path[t]) +
                     " at position " + std::to_string(t));
    s += params.transitions(path[t - 1], path[t]) + emissions(t, path[t]);
  }
  if (!params.end_mask[path.back()])
    throw CrfError("tag " + std::to_string(path.back()) + " cannot end a sentence");
  return s;
}

inline double crf_nll(const Matrix& emissions, std::span<const int> gold, const CrfParams& params) {
  double score = path_score(emissions, gold, params);
  return std::max(0.0, log_partition(emissions, params) - score);
}

struct NllGradient {
  double nll = 0;
  Matrix d_emissions;    // T x V
  Matrix d_transitions;  // V x V, zero on forbidden entries
};

// NLL with its gradient: expected counts minus gold counts.
inline NllGradient crf_nll_with_gradient(const Matrix& e, std::span<const int> gold, const CrfParams& p) {
  double score = path_score(e, gold, p);
  const int T = static_cast<int>(e.rows()), V = p.size();
  Matrix alpha = detail::forward(e, p);
  Matrix beta = detail::backward(e, p);
  double z = kNegInf;
  for (int j = 0; j < V; ++j)
    if (p.end_mask[j]) z = detail::log_add(z, alpha(T - 1, j));
  if (z == kNegInf) throw CrfError("no tag sequence satisfies the CRF masks");

  NllGradient g;
  g.nll = z - score;
  g.d_emissions = Matrix::Zero(T, V);
  g.d_transitions = Matrix::Zero(V, V);
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < V; ++j)
      if (alpha(t, j) != kNegInf && beta(t, j) != kNegInf)
        g.d_emissions(t, j) = std::exp(alpha(t, j) + beta(t, j) - z);
  for (int t = 1; t < T; ++t)
    for (int i = 0; i < V; ++i) {
      if (alpha(t - 1, i) == kNegInf) continue;
      for (int j = 0; j < V; ++j)
        if (p.valid(i, j) && beta(t, j) != kNegInf)
          g.d_transitions(i, j) += std::exp(alpha(t - 1, i) + p.transitions(i, j) + e(t, j) + beta(t, j) - z);
    }
  for (int t = 0; t < T; ++t) {
    g.d_emissions(t, gold[t]) -= 1.0;
    if (t) g.d_transitions(gold[t - 1], gold[t]) -= 1.0;
  }
  return g;
}

// Highest-scoring valid path; among equal scores the lexicographically
// smallest tag sequence wins.
inline std::vector<int> viterbi_decode(const Matrix& e, const CrfParams& p) {
  detail::check_shapes(e, p);
  const int T = static_cast<int>(e.rows()), V = p.size();
  // best(t, j): best score of positions t..T-1 given tag j at t
  Matrix best(T, V);
  for (int j = 0; j < V; ++j) best(T - 1, j) = p.end_mask[j] ? e(T - 1, j) : kNegInf;
  for (int t = T - 1; t-- > 0;)
    for (int j = 0; j < V; ++j) {
      double m = kNegInf;
      for (int k = 0; k < V; ++k)
        if (p.valid(j, k) && best(t + 1, k) != kNegInf) m = std::max(m, p.transitions(j, k) + best(t + 1, k));
      best(t, j) = m == kNegInf ? kNegInf : m + e(t, j);
    }
  std::vector<int> path(T);
  double top = kNegInf;
  int arg = -1;
  for (int j = 0; j < V; ++j)
    if (p.start_mask[j] && best(0, j) > top) {
      top = best(0, j);
      arg = j;
    }
  if (arg < 0) throw CrfError("no tag sequence satisfies the CRF masks");
  path[0] = arg;
  for (int t = 1; t < T; ++t) {
    double m = kNegInf;
    int a = -1;
    for (int k = 0; k < V; ++k) {
      if (!p.valid(path[t - 1], k) || best(t, k) == kNegInf) continue;
      double s = p.transitions(path[t - 1], k) + best(t, k);
      if (s > m) {
        m = s;
        a = k;
      }
    }
    path[t] = a;
  }
  return path;
}

}  // namespace corpipe::crf
