#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Parameters live in a
// ParameterSet and enter the tape as leaves; Tape::backward() accumulates
// their gradients into Parameter::grad.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "corpipe/errors.hpp"

namespace corpipe::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool sparse_rows = false;  // embedding-like; eligible for lazy Adam
};

// Ordered collection; modules refer to parameters by index, so a copy of
// the set is a complete independent snapshot.
class ParameterSet {
 public:
  int add(std::string name, Matrix init, bool sparse_rows = false) {
    if (index_.count(name)) throw ModelError("duplicate parameter '" + name + "'");
    int id = static_cast<int>(params_.size());
    index_.emplace(name, id);
    Matrix grad = Matrix::Zero(init.rows(), init.cols());
    params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad), sparse_rows});
    return id;
  }

  Parameter& operator[](int i) { return params_.at(i); }
  const Parameter& operator[](int i) const { return params_.at(i); }
  int size() const { return static_cast<int>(params_.size()); }
  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ModelError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }
  long element_count() const {
    long n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    int param = -1;
    std::function<void(Tape&, const Node&)> backward;
  };

  // Without a parameter set (or with record_gradients false) parameters
  // enter as constants and nothing is differentiated.
  explicit Tape(ParameterSet* params = nullptr, bool record_gradients = true)
      : params_(params), record_(record_gradients && params != nullptr) {}

  const ParameterSet* parameters() const { return params_; }

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, -1, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var param(int index, bool trainable = true) {
    if (!params_) throw ModelError("tape has no parameter set");
    nodes_.push_back(Node{(*params_)[index].value, {}, record_ && trainable, index, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Records an operation result; `backward` runs only when some input
  // needs a gradient.
  Var record(Matrix value, std::span<const Var> inputs, std::function<void(Tape&, const Node&)> backward) {
    bool needs = false;
    for (Var v : inputs) needs |= nodes_[v.id].needs_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, -1, needs ? std::move(backward) : nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }
  Var record(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, const Node&)> backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix& grad(Var v) { return nodes_[v.id].grad; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }

  void backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1) throw ModelError("backward() needs a scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backward) n.backward(*this, n);
      if (n.param >= 0) (*params_)[n.param].grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  ParameterSet* params_;
  bool record_;
  std::vector<Node> nodes_;
};

inline void accumulate(Tape& t, Var v, const Matrix& g) {
  if (t.needs_grad(v)) t.grad(v) += g;
}

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ModelError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw ModelError("matmul: inner dimensions differ");
  return t.record(t.value(a) * t.value(b), {a, b}, [a, b](Tape& t, const Tape::Node& n) {
    if (t.needs_grad(a)) t.grad(a).noalias() += n.grad * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * n.grad;
  });
}

// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).cols()) throw ModelError("matmul_nt: inner dimensions differ");
  return t.record(t.value(a) * t.value(b).transpose(), {a, b}, [a, b](Tape& t, const Tape::Node& n) {
    if (t.needs_grad(a)) t.grad(a).noalias() += n.grad * t.value(b);
    if (t.needs_grad(b)) t.grad(b).noalias() += n.grad.transpose() * t.value(a);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  return t.record(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, const Tape::Node& n) {
    accumulate(t, a, n.grad);
    accumulate(t, b, n.grad);
  });
}

// Adds a 1 x n row to every row of a.
inline Var add_row(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw ModelError("add_row: bias shape mismatch");
  Matrix out = t.value(a).rowwise() + t.value(row).row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Tape::Node& n) {
    accumulate(t, a, n.grad);
    if (t.needs_grad(row)) t.grad(row) += n.grad.colwise().sum();
  });
}

inline Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, {a}, [a, s](Tape& t, const Tape::Node& n) { accumulate(t, a, n.grad * s); });
}

inline Var relu(Tape& t, Var a) {
  Matrix out = t.value(a).cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tape::Node& n) {
    if (!t.needs_grad(a)) return;
    t.grad(a) += (t.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad);
  });
}

// Row-wise layer normalization with learned gain and bias (1 x n each).
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& in = t.value(x);
  const long n = in.cols();
  Matrix xhat(in.rows(), n);
  Eigen::VectorXd inv_std(in.rows());
  for (long r = 0; r < in.rows(); ++r) {
    double mean = in.row(r).mean();
    double var = (in.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * t.value(gain).row(0).array()).rowwise() + t.value(bias).row(0).array();
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat, inv_std, n](Tape& t, const Tape::Node& node) {
                    const Matrix& g = node.grad;
                    if (t.needs_grad(gain)) t.grad(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                    if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
                    if (!t.needs_grad(x)) return;
                    Matrix gx = g.array().rowwise() * t.value(gain).row(0).array();
                    for (long r = 0; r < g.rows(); ++r) {
                      double mean_g = gx.row(r).mean();
                      double mean_gx = gx.row(r).dot(xhat.row(r)) / static_cast<double>(n);
                      t.grad(x).row(r).array() +=
                          inv_std(r) * (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
                    }
                  });
}

// Row softmax. With `causal`, entries above the diagonal are excluded.
inline Matrix softmax_rows_value(const Matrix& in, bool causal) {
  Matrix out = Matrix::Zero(in.rows(), in.cols());
  for (long r = 0; r < in.rows(); ++r) {
    long width = causal ? std::min<long>(r + 1, in.cols()) : in.cols();
    if (width <= 0) continue;
    double m = in.row(r).head(width).maxCoeff();
    auto e = (in.row(r).head(width).array() - m).exp();
    out.row(r).head(width) = e / e.sum();
  }
  return out;
}

inline Var softmax_rows(Tape& t, Var a, bool causal = false) {
  Matrix out = softmax_rows_value(t.value(a), causal);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tape::Node& n) {
    if (!t.needs_grad(a)) return;
    const Matrix& p = n.value;
    Eigen::VectorXd dot = (n.grad.array() * p.array()).rowwise().sum();
    t.grad(a).array() += p.array() * (n.grad.array().colwise() - dot.array());
  });
}

inline Var gather_rows(Tape& t, Var a, std::vector<int> rows) {
  const Matrix& in = t.value(a);
  Matrix out(static_cast<long>(rows.size()), in.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= in.rows()) throw ModelError("gather_rows: index out of range");
    out.row(static_cast<long>(i)) = in.row(rows[i]);
  }
  return t.record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, const Tape::Node& n) {
    if (!t.needs_grad(a)) return;
    for (std::size_t i = 0; i < rows.size(); ++i) t.grad(a).row(rows[i]) += n.grad.row(static_cast<long>(i));
  });
}

inline Var slice_rows(Tape& t, Var a, long start, long count) {
  if (start < 0 || count < 0 || start + count > t.value(a).rows()) throw ModelError("slice_rows: out of range");
  return t.record(t.value(a).middleRows(start, count), {a}, [a, start, count](Tape& t, const Tape::Node& n) {
    if (t.needs_grad(a)) t.grad(a).middleRows(start, count) += n.grad;
  });
}

inline Var slice_cols(Tape& t, Var a, long start, long count) {
  if (start < 0 || count < 0 || start + count > t.value(a).cols()) throw ModelError("slice_cols: out of range");
  return t.record(t.value(a).middleCols(start, count), {a}, [a, start, count](Tape& t, const Tape::Node& n) {
    if (t.needs_grad(a)) t.grad(a).middleCols(start, count) += n.grad;
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ModelError("concat_cols: nothing to concatenate");
  long rows = t.value(parts[0]).rows(), cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw ModelError("concat_cols: row counts differ");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  long c = 0;
  for (Var p : parts) {
    out.middleCols(c, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  return t.record(std::move(out), std::span<const Var>(parts), [parts](Tape& t, const Tape::Node& n) {
    long c = 0;
    for (Var p : parts) {
      long w = t.value(p).cols();
      if (t.needs_grad(p)) t.grad(p) += n.grad.middleCols(c, w);
      c += w;
    }
  });
}

}  // namespace corpipe::ad
