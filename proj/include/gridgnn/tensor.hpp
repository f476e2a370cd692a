/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Dense double-precision tensors (rank <= 3, row-major) and a reverse-mode
// tape. Every op records its output value together with a closure that
// maps the output gradient to input gradients. Backward never mutates the
// tape, so a tape can be replayed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridgnn/error.hpp"

namespace gridgnn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_size(shape_))
      throw ArgumentError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> v) {
    return Tensor({rows, cols}, std::vector<double>(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t b, std::size_t r, std::size_t c) {
    return data_[(b * shape_[1] + r) * shape_[2] + c];
  }
  double operator()(std::size_t b, std::size_t r, std::size_t c) const {
    return data_[(b * shape_[1] + r) * shape_[2] + c];
  }

  /// Rows of a rank-2 tensor (or the flattened leading axes of rank 3).
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != data_.size())
      throw ArgumentError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  Tensor& operator+=(const Tensor& o) {
    if (o.size() != size()) throw ArgumentError("tensor += size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 3)
      throw ArgumentError("tensor rank must be 1..3, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline RowMajorMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return RowMajorMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstRowMajorMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols,
                                  std::size_t offset = 0) {
  return ConstRowMajorMap(t.data() + offset, static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
}

/// Named trainable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Insertion-ordered parameter collection with unique names.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value)});
    return params_.back();
  }
  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradientMap = std::map<std::string, Tensor>;

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

/// Gradient slots for one backward pass. Slots for nodes that do not
/// require a gradient are never allocated and slot() returns nullptr.
class GradBuffer {
 public:
  GradBuffer(const Tape& tape);
  Tensor* slot(int id);
  Tensor* existing(int id) { return grads_[static_cast<std::size_t>(id)].empty() ? nullptr : &grads_[static_cast<std::size_t>(id)]; }

 private:
  const Tape& tape_;
  std::vector<Tensor> grads_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradBuffer& grads)>;

class Tape {
 public:
  struct Node {
    Tensor value;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, false, nullptr); }

  Var parameter(const Parameter& p) { return push(p.value, nullptr, true, &p); }

  /// Records an op output. `inputs` decide requires_grad; when none of them
  /// needs a gradient the closure is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool rg = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ArgumentError("op mixes vars from different tapes");
      rg = rg || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    return push(std::move(value), rg ? std::move(fn) : BackwardFn{}, rg, nullptr);
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool rg = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ArgumentError("op mixes vars from different tapes");
      rg = rg || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    return push(std::move(value), rg ? std::move(fn) : BackwardFn{}, rg, nullptr);
  }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  /// Reverse sweep from a scalar root. Gradients of the same parameter
  /// recorded more than once are summed. Parameters that appear on the tape
  /// but are not reached get zero gradients.
  GradientMap backward(Var root) const {
    if (root.tape != this) throw ArgumentError("backward: root is not on this tape");
    if (root.size() != 1) throw ArgumentError("backward: root must be a scalar, got " +
                                              shape_str(root.shape()));
    GradBuffer grads(*this);
    if (Tensor* g = grads.slot(root.id)) (*g)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward) continue;
      Tensor* g = grads.existing(i);
      if (!g) continue;
      n.backward(*g, grads);
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.param) continue;
      auto [it, inserted] = out.try_emplace(n.param->name, Tensor(n.value.shape(), 0.0));
      if (Tensor* g = grads.existing(static_cast<int>(i))) it->second += *g;
    }
    return out;
  }

 private:
  Var push(Tensor value, BackwardFn fn, bool rg, const Parameter* p) {
    if (check_finite_ && !value.all_finite())
      throw NumericalError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
    nodes_.push_back({std::move(value), std::move(fn), p, rg});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

inline GradBuffer::GradBuffer(const Tape& tape) : tape_(tape), grads_(tape.size()) {}

inline Tensor* GradBuffer::slot(int id) {
  if (!tape_.requires_grad(id)) return nullptr;
  Tensor& g = grads_[static_cast<std::size_t>(id)];
  if (g.empty()) g = Tensor(tape_.value(id).shape(), 0.0);
  return &g;
}

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

inline void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2)
    throw ArgumentError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(a.shape()));
}

template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(std::move(y), {a}, [a, df](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[i] * df(x[i]);
    }
  });
}

}  // namespace detail

/// C = A B for rank-2 A [m,k], B [k,n].
inline Var matmul(Var a, Var b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ArgumentError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  Tensor c({m, n});
  as_matrix(c, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  return a.tape->record(std::move(c), {a, b}, [a, b, m, k, n](const Tensor& g, GradBuffer& gb) {
    const auto gm = as_matrix(g, m, n);
    if (Tensor* ga = gb.slot(a.id)) as_matrix(*ga, m, k).noalias() += gm * as_matrix(b.value(), k, n).transpose();
    if (Tensor* gbv = gb.slot(b.id)) as_matrix(*gbv, k, n).noalias() += as_matrix(a.value(), m, k).transpose() * gm;
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id)) *ga += g;
    if (Tensor* gbv = gb.slot(b.id)) *gbv += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id)) *ga += g;
    if (Tensor* gbv = gb.slot(b.id))
      for (std::size_t i = 0; i < g.size(); ++i) (*gbv)[i] -= g[i];
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(a, b, "hadamard");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gbv = gb.slot(b.id)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*gbv)[i] += g[i] * av[i];
    }
  });
}

inline Var scalar_mul(Var a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

/// Sum of all elements, shape [1].
inline Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [a](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id))
      for (double& v : ga->values()) v += g[0];
  });
}

inline Var mean(Var a) { return scalar_mul(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Concatenation along the last axis of rank-2 tensors with equal rows.
inline Var concat_last_axis(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_last_axis: no inputs");
  const std::size_t rows = parts[0].shape()[0];
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require_rank2(p, "concat_last_axis");
    if (p.shape()[0] != rows) throw ArgumentError("concat_last_axis: row count mismatch");
    cols += p.shape()[1];
  }
  Tensor y({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t c = p.shape()[1];
    as_matrix(y, rows, cols).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(c)) =
        as_matrix(p.value(), rows, c);
    off += c;
  }
  return parts[0].tape->record(std::move(y), parts, [parts, rows, cols](const Tensor& g, GradBuffer& gb) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t c = p.shape()[1];
      if (Tensor* gp = gb.slot(p.id))
        as_matrix(*gp, rows, c) +=
            as_matrix(g, rows, cols).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(c));
      off += c;
    }
  });
}

inline Var reshape(Var a, Shape s) {
  Tensor y = a.value().reshaped(std::move(s));
  return a.tape->record(std::move(y), {a}, [a](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id)) *ga += g;
  });
}

/// Columns [start, start + count) of a rank-2 tensor.
inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  detail::require_rank2(a, "slice_cols");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (start + count > cols) throw ArgumentError("slice_cols: range out of bounds");
  Tensor y({rows, count});
  as_matrix(y, rows, count) = as_matrix(a.value(), rows, cols).middleCols(
      static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  return a.tape->record(std::move(y), {a}, [a, rows, cols, start, count](const Tensor& g, GradBuffer& gb) {
    if (Tensor* ga = gb.slot(a.id))
      as_matrix(*ga, rows, cols).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
          as_matrix(g, rows, count);
  });
}

/// x [R, C] + row [C] broadcast over rows.
inline Var add_row(Var x, Var row) {
  detail::require_rank2(x, "add_row");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (row.size() != c) throw ArgumentError("add_row: row length must equal column count");
  Tensor y = x.value();
  const Tensor& b = row.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] += b[j];
  return x.tape->record(std::move(y), {x, row}, [x, row, r, c](const Tensor& g, GradBuffer& gb) {
    if (Tensor* gx = gb.slot(x.id)) *gx += g;
    if (Tensor* grow = gb.slot(row.id))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*grow)[j] += g[i * c + j];
  });
}

/// x [R, C] * row [C] broadcast over rows (column scaling).
inline Var mul_row(Var x, Var row) {
  detail::require_rank2(x, "mul_row");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (row.size() != c) throw ArgumentError("mul_row: row length must equal column count");
  Tensor y = x.value();
  const Tensor& s = row.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= s[j];
  return x.tape->record(std::move(y), {x, row}, [x, row, r, c](const Tensor& g, GradBuffer& gb) {
    if (Tensor* gx = gb.slot(x.id)) {
      const Tensor& s = row.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[i * c + j] * s[j];
    }
    if (Tensor* grow = gb.slot(row.id)) {
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*grow)[j] += g[i * c + j] * xv[i * c + j];
    }
  });
}

}  // namespace gridgnn
