// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense matrices.
//
// A Tape owns every intermediate of one forward pass. Nodes are appended in
// evaluation order, so a single reverse sweep over node ids is a valid
// topological order for backpropagation. Parameters enter the tape as leaves;
// their gradients are accumulated into Parameter::grad by Tape::backward.
//
// When kink recording is on, every piecewise op (ReLU, ELU, hinge, clamp)
// appends the branch it took for each element. Two evaluations with equal
// signatures took identical branches, which the finite-difference checker
// uses to detect perturbations that straddle a kink.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hqga/tensor.hpp"

namespace hqga::ag {

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool record_kinks = false) : record_kinks_(record_kinks) { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat<S> value) { return push(std::move(value), false, nullptr); }

  // Repeated uses of one Parameter share a single leaf.
  Var<S> param(Parameter<S>& p) {
    if (auto it = leaves_.find(&p); it != leaves_.end()) return Var<S>{this, it->second};
    Var<S> v = push(p.value, p.trainable, nullptr);
    nodes_[v.id].param = &p;
    leaves_.emplace(&p, v.id);
    return v;
  }

  Var<S> push(Mat<S> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }
  const Mat<S>& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 and sweeps backwards; root must be 1 x 1.
  void backward(Var<S> root) {
    if (root.rows() != 1 || root.cols() != 1) throw ConfigError("backward root must be a scalar");
    nodes_[root.id].grad = Mat<S>::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.param != nullptr) {
        n.param->grad += n.grad;
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

  bool recording_kinks() const { return record_kinks_; }
  void note_branch(bool positive) {
    if (record_kinks_) kinks_.push_back(positive ? 1 : 0);
  }
  const std::vector<std::uint8_t>& kink_signature() const { return kinks_; }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    Backward backward;
    Parameter<S>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<S>*, int> leaves_;
  bool record_kinks_;
  std::vector<std::uint8_t> kinks_;
};

namespace detail {
template <typename S>
bool any_grad(std::initializer_list<Var<S>> vs) {
  for (const auto& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

template <typename S>
void same_tape(const Var<S>& a, const Var<S>& b) {
  if (a.tape != b.tape) throw ConfigError("operands live on different tapes");
}

inline void check(bool ok, const char* what) {
  if (!ok) throw ConfigError(what);
}
}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() * b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() * b.value().transpose();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() + b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() - b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

// Adds a 1 x c row to every row of a.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
  detail::same_tape(a, row);
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, row}), [ia = a.id, ir = row.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() * factor;
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id, factor](Tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self) * factor);
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  const Mat<S>& x = a.value();
  Mat<S> out = x.cwiseMax(S(0));
  if (t.recording_kinks())
    for (Eigen::Index i = 0; i < x.size(); ++i) t.note_branch(x.data()[i] > S(0));
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& x = t.value(ia);
    t.accumulate(ia, t.grad(self).cwiseProduct((x.array() > S(0)).template cast<S>().matrix()));
  });
}

template <typename S>
Var<S> elu(Var<S> a) {
  Tape<S>& t = *a.tape;
  const Mat<S>& x = a.value();
  Mat<S> out = x.unaryExpr([](S v) { return v > S(0) ? v : std::expm1(v); });
  if (t.recording_kinks())
    for (Eigen::Index i = 0; i < x.size(); ++i) t.note_branch(x.data()[i] > S(0));
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& x = t.value(ia);
    Mat<S> d = x.binaryExpr(y, [](S xv, S yv) { return xv > S(0) ? S(1) : yv + S(1); });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((S(1) - y.array()).matrix())));
  });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().tanh().matrix();
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((S(1) - y.array().square()).matrix()));
  });
}

// Numerically stable softmax of every row.
template <typename S>
Mat<S> softmax_rows_value(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = softmax_rows_value(a.value());
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Mat<S> gy = g.cwiseProduct(y);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    Mat<S> gx = gy - (y.array().colwise() * dots.array()).matrix();
    t.accumulate(ia, gx);
  });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  detail::same_tape(a, b);
  detail::check(a.rows() == b.rows(), "concat_cols: row count differs");
  Tape<S>& t = *a.tape;
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia = a.id, ib = b.id, ca, cb](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
    if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
  });
}

template <typename S>
Var<S> concat_rows(std::span<const Var<S>> parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  Tape<S>& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    detail::check(p.tape == &t && p.cols() == cols, "concat_rows: column count differs");
    rows += p.rows();
    grad = grad || t.requires_grad(p.id);
  }
  Mat<S> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id, r);
    r += p.rows();
  }
  return t.push(std::move(out), grad, [spans = std::move(spans)](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  return concat_rows(std::span<const Var<S>>(parts));
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().middleRows(start, count);
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id, start, count](Tape<S>& t, int self) {
    const Mat<S>& x = t.value(ia);
    Mat<S> g = Mat<S>::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().middleCols(start, count);
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id, start, count](Tape<S>& t, int self) {
    const Mat<S>& x = t.value(ia);
    Mat<S> g = Mat<S>::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().transpose();
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

// Sum over rows: n x c -> 1 x c.
template <typename S>
Var<S> sum_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().colwise().sum();
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id](Tape<S>& t, int self) {
    const Eigen::Index n = t.value(ia).rows();
    t.accumulate(ia, t.grad(self).replicate(n, 1));
  });
}

// Repeats a 1 x c row n times.
template <typename S>
Var<S> broadcast_rows(Var<S> row, Eigen::Index n) {
  detail::check(row.rows() == 1, "broadcast_rows: expects a row");
  Tape<S>& t = *row.tape;
  Mat<S> out = row.value().replicate(n, 1);
  return t.push(std::move(out), detail::any_grad({row}), [ir = row.id](Tape<S>& t, int self) {
    t.accumulate(ir, t.grad(self).colwise().sum());
  });
}

// out[s] = a[s + offset], zero where s + offset falls outside [0, rows).
template <typename S>
Var<S> shift_rows(Var<S> a, Eigen::Index offset) {
  Tape<S>& t = *a.tape;
  const Mat<S>& x = a.value();
  const Eigen::Index n = x.rows();
  Mat<S> out = Mat<S>::Zero(n, x.cols());
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::Index src = s + offset;
    if (src >= 0 && src < n) out.row(s) = x.row(src);
  }
  return t.push(std::move(out), detail::any_grad({a}), [ia = a.id, offset](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Eigen::Index n = g.rows();
    Mat<S> gx = Mat<S>::Zero(n, g.cols());
    for (Eigen::Index s = 0; s < n; ++s) {
      const Eigen::Index src = s + offset;
      if (src >= 0 && src < n) gx.row(src) += g.row(s);
    }
    t.accumulate(ia, gx);
  });
}

template <typename S>
Var<S> gather_rows(Var<S> table, std::vector<int> indices) {
  Tape<S>& t = *table.tape;
  const Mat<S>& x = table.value();
  Mat<S> out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= x.rows()) throw DataError("token id out of vocabulary range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(indices[i]);
  }
  return t.push(std::move(out), detail::any_grad({table}), [it = table.id, idx = std::move(indices)](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& x = t.value(it);
    Mat<S> gx = Mat<S>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(it, gx);
  });
}

// Sum over negatives n != positive of max(0, 1 + s_n - s_p). scores is 1 x C.
template <typename S>
Var<S> hinge_loss(Var<S> scores, int positive) {
  Tape<S>& t = *scores.tape;
  const Mat<S>& s = scores.value();
  detail::check(scores.rows() == 1 && positive >= 0 && positive < scores.cols(), "hinge_loss: positive index out of range");
  S total = 0;
  for (Eigen::Index n = 0; n < s.cols(); ++n) {
    if (n == positive) continue;
    const S margin = S(1) + s(0, n) - s(0, positive);
    t.note_branch(margin > S(0));
    if (margin > S(0)) total += margin;
  }
  Mat<S> out(1, 1);
  out(0, 0) = total;
  return t.push(std::move(out), detail::any_grad({scores}), [is = scores.id, positive](Tape<S>& t, int self) {
    const S g = t.grad(self)(0, 0);
    const Mat<S>& s = t.value(is);
    Mat<S> gs = Mat<S>::Zero(1, s.cols());
    for (Eigen::Index n = 0; n < s.cols(); ++n) {
      if (n == positive) continue;
      if (S(1) + s(0, n) - s(0, positive) > S(0)) {
        gs(0, n) += g;
        gs(0, positive) -= g;
      }
    }
    t.accumulate(is, gs);
  });
}

// -log(max(s[index], floor)). scores is 1 x C.
template <typename S>
Var<S> cross_entropy(Var<S> scores, int index, S floor = S(1e-12)) {
  Tape<S>& t = *scores.tape;
  const Mat<S>& s = scores.value();
  detail::check(scores.rows() == 1 && index >= 0 && index < scores.cols(), "cross_entropy: answer index out of range");
  const S p = s(0, index);
  t.note_branch(p > floor);
  Mat<S> out(1, 1);
  out(0, 0) = -std::log(std::max(p, floor));
  return t.push(std::move(out), detail::any_grad({scores}), [is = scores.id, index, floor](Tape<S>& t, int self) {
    const S p = t.value(is)(0, index);
    Mat<S> gs = Mat<S>::Zero(1, t.value(is).cols());
    if (p > floor) gs(0, index) = -t.grad(self)(0, 0) / p;
    t.accumulate(is, gs);
  });
}

template <typename S>
Var<S> sum_all(std::span<const Var<S>> parts) {
  detail::check(!parts.empty(), "sum_all: no inputs");
  Tape<S>& t = *parts.front().tape;
  Mat<S> out = Mat<S>::Zero(1, 1);
  bool grad = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    out(0, 0) += p.value().sum();
    grad = grad || t.requires_grad(p.id);
    ids.push_back(p.id);
  }
  return t.push(std::move(out), grad, [ids = std::move(ids)](Tape<S>& t, int self) {
    const S g = t.grad(self)(0, 0);
    for (int id : ids)
      if (t.requires_grad(id)) t.accumulate(id, Mat<S>::Constant(t.value(id).rows(), t.value(id).cols(), g));
  });
}

}  // namespace hqga::ag
