#pragma once

// Antecedent linking: every mention attends over itself and the mentions
// before it. Mention i's representation is [first token; last token]; the
// query and key heads are ReLU(2D -> 4D) followed by a bias-free 4D -> D
// projection, and logit(i, j) = Q(i) . K(j) for j <= i.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "corpipe/autograd.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/union_find.hpp"

namespace corpipe::linker {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct ProjectionHead {
  int hidden_weight = -1;  // 2D x 4D
  int hidden_bias = -1;    // 1 x 4D
  int output_weight = -1;  // 4D x D, no bias
};

struct LinkerParams {
  int dim = 0;
  ProjectionHead query, key;
};

enum class LinkLoss {
  kUniformTarget,      // cross-entropy against the uniform distribution over gold antecedents
  kMarginalLikelihood  // -log of the total probability of gold antecedents
};

inline Matrix glorot(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (rows + cols)));
  Matrix m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline LinkerParams add_linker_params(ad::ParameterSet& params, int dim, std::mt19937_64& rng,
                                      const std::string& prefix = "linker") {
  LinkerParams lp;
  lp.dim = dim;
  auto head = [&](const std::string& name) {
    ProjectionHead h;
    h.hidden_weight = params.add(prefix + "." + name + ".hidden.w", glorot(2 * dim, 4 * dim, rng));
    h.hidden_bias = params.add(prefix + "." + name + ".hidden.b", Matrix::Zero(1, 4 * dim));
    h.output_weight = params.add(prefix + "." + name + ".out.w", glorot(4 * dim, dim, rng));
    return h;
  };
  lp.query = head("query");
  lp.key = head("key");
  return lp;
}

inline Var project(Tape& t, Var reprs, const ProjectionHead& h) {
  Var hidden = ad::relu(t, ad::add_row(t, ad::matmul(t, reprs, t.param(h.hidden_weight)), t.param(h.hidden_bias)));
  return ad::matmul(t, hidden, t.param(h.output_weight));
}

// Unmasked M x M scores; masking happens in the loss and in decoding.
inline Var antecedent_scores(Tape& t, Var reprs, const LinkerParams& lp, bool scale_by_sqrt_dim = false) {
  if (t.value(reprs).cols() != 2 * lp.dim)
    throw ModelError("mention representation has width " + std::to_string(t.value(reprs).cols()) +
                     ", expected " + std::to_string(2 * lp.dim));
  Var q = project(t, reprs, lp.query);
  Var k = project(t, reprs, lp.key);
  Var s = ad::matmul_nt(t, q, k);
  return scale_by_sqrt_dim ? ad::scale(t, s, 1.0 / std::sqrt(static_cast<double>(lp.dim))) : s;
}

inline Matrix mask_future(Matrix scores) {
  for (long i = 0; i < scores.rows(); ++i)
    for (long j = i + 1; j < scores.cols(); ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
  return scores;
}

// Logits with -inf above the diagonal.
inline Matrix antecedent_logits(const Matrix& reprs, const ad::ParameterSet& params, const LinkerParams& lp,
                                bool scale_by_sqrt_dim = false) {
  Tape t(const_cast<ad::ParameterSet*>(&params), false);
  Var r = t.constant(reprs);
  return mask_future(t.value(antecedent_scores(t, r, lp, scale_by_sqrt_dim)));
}

inline Matrix antecedent_probabilities(const Matrix& logits) { return ad::softmax_rows_value(logits, true); }

// G(i) per mention: earlier mentions of the same entity, or {i}; with a cap
// only the `max_links` most recent are kept (0 = no cap).
struct AntecedentTargets {
  std::vector<std::vector<int>> gold;
};

inline AntecedentTargets make_targets(const std::vector<int>& entity_of_mention, int max_links = 0) {
  AntecedentTargets out;
  out.gold.resize(entity_of_mention.size());
  for (int i = 0; i < static_cast<int>(entity_of_mention.size()); ++i) {
    auto& g = out.gold[i];
    for (int j = i - 1; j >= 0; --j)
      if (entity_of_mention[j] == entity_of_mention[i] && entity_of_mention[i] >= 0) {
        g.push_back(j);
        if (max_links > 0 && static_cast<int>(g.size()) == max_links) break;
      }
    std::reverse(g.begin(), g.end());
    if (g.empty()) g.push_back(i);
  }
  return out;
}

namespace detail {

// Loss over rows [first_row, M) and its gradient with respect to the
// (unmasked) scores.
inline double loss_and_gradient(const Matrix& scores, const AntecedentTargets& targets, LinkLoss mode,
                                int first_row, Matrix* grad) {
  const int m = static_cast<int>(scores.rows());
  if (static_cast<int>(targets.gold.size()) != m)
    throw ModelError("targets cover " + std::to_string(targets.gold.size()) + " mentions, scores " +
                     std::to_string(m));
  if (grad) *grad = Matrix::Zero(m, m);
  const int rows = m - first_row;
  if (rows <= 0) return 0.0;
  Matrix p = ad::softmax_rows_value(scores, true);
  double total = 0;
  for (int i = first_row; i < m; ++i) {
    const auto& g = targets.gold[i];
    if (g.empty()) throw ModelError("mention " + std::to_string(i) + " has no gold antecedent");
    for (int j : g)
      if (j < 0 || j > i) throw ModelError("gold antecedent " + std::to_string(j) + " of mention " +
                                           std::to_string(i) + " is not a candidate");
    Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(m);
    if (mode == LinkLoss::kUniformTarget) {
      for (int j : g) {
        total -= std::log(p(i, j)) / static_cast<double>(g.size());
        target(j) += 1.0 / static_cast<double>(g.size());
      }
    } else {
      double mass = 0;
      for (int j : g) mass += p(i, j);
      total -= std::log(mass);
      for (int j : g) target(j) += p(i, j) / mass;
    }
    if (grad) grad->row(i).head(i + 1) = (p.row(i).head(i + 1) - target.head(i + 1)) / rows;
  }
  return total / rows;
}

}  // namespace detail

// Mean cross-entropy over mentions first_row..M-1 (all by default).
inline double antecedent_loss(const Matrix& logits, const AntecedentTargets& targets,
                              LinkLoss mode = LinkLoss::kUniformTarget, int first_row = 0) {
  return detail::loss_and_gradient(logits, targets, mode, first_row, nullptr);
}

inline Var antecedent_loss(Tape& t, Var scores, AntecedentTargets targets, LinkLoss mode = LinkLoss::kUniformTarget,
                           int first_row = 0) {
  Matrix grad;
  double loss = detail::loss_and_gradient(t.value(scores), targets, mode, first_row, t.needs_grad(scores) ? &grad : nullptr);
  return t.record(Matrix::Constant(1, 1, loss), {scores}, [scores, grad](Tape& t, const Tape::Node& n) {
    t.grad(scores) += grad * n.grad(0, 0);
  });
}

// Most probable antecedent per mention (i itself = no antecedent). Ties go
// to the most recent candidate.
inline std::vector<int> decode_links(const Matrix& logits) {
  std::vector<int> links(logits.rows());
  for (long i = 0; i < logits.rows(); ++i) {
    int best = static_cast<int>(i);
    double top = logits(i, i);
    for (long j = i - 1; j >= 0; --j)
      if (logits(i, j) > top) {
        top = logits(i, j);
        best = static_cast<int>(j);
      }
    links[i] = best;
  }
  return links;
}

// Connected components of the antecedent graph, ordered by first mention.
inline std::vector<std::vector<int>> links_to_clusters(const std::vector<int>& links) {
  UnionFind uf(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (links[i] < 0 || links[i] > static_cast<int>(i))
      throw ModelError("mention " + std::to_string(i) + " links forward to " + std::to_string(links[i]));
    uf.unite(i, static_cast<std::size_t>(links[i]));
  }
  return uf.components();
}

}  // namespace corpipe::linker
