#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// Every primitive records its output on the tape together with a closure that
// pushes the output adjoint back to its inputs. Nodes are appended in
// evaluation order, so walking the tape backwards is a reverse topological
// traversal and each node is visited exactly once.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metatte/error.hpp"
#include "metatte/tensor.hpp"

namespace metatte {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input data; never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

  /// Differentiable leaf. A non-empty name makes the gradient retrievable by name.
  Var variable(Tensor value, const std::string& name = {}) {
    Var v = push(std::move(value), true, nullptr, "variable");
    if (!name.empty()) {
      if (!named_.emplace(name, v.id).second) {
        throw ConsistencyError("variable '" + name + "' registered twice on one tape");
      }
    }
    return v;
  }

  /// Record an op result. `inputs` decide whether the result needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, op);
  }

  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward, const char* op) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, op);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adjoint of a node after backward(); zeros if the node was never reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  /// Adjoint of a named variable.
  Tensor grad(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) throw ConsistencyError("no variable named '" + name + "' on tape");
    return grad(Var{const_cast<Tape*>(this), it->second});
  }

  bool has_variable(const std::string& name) const { return named_.count(name) > 0; }

  /// Mutable adjoint buffer for node `id`, allocated on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a single-element loss.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
    }
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, Backward backward, const char* op) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op + " with shape " +
                         shape_str(value.shape()));
    }
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> named_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void accumulate(Tape& t, std::size_t id, std::span<const double> g) {
  if (!t.requires_grad(id)) return;
  auto dst = t.grad_buffer(id).data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

/// Elementwise op with derivative expressed through input x and output y.
template <class F, class DF>
Var unary(Var a, F f, DF df, const char* op) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(
      std::move(y), {a},
      [a, df](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad_buffer(self);
        auto ga = t.grad_buffer(a.id).data();
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
      },
      op);
}

}  // namespace detail

/// [M,K] x [K,N] -> [M,N]
inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  }
  const auto m = static_cast<Eigen::Index>(A.dim(0));
  const auto k = static_cast<Eigen::Index>(A.dim(1));
  const auto n = static_cast<Eigen::Index>(B.dim(1));
  Tensor C(Shape{A.dim(0), B.dim(1)});
  MatMap(C.data().data(), m, n).noalias() =
      ConstMatMap(A.data().data(), m, k) * ConstMatMap(B.data().data(), k, n);
  return a.tape->record(
      std::move(C), {a, b},
      [a, b, m, k, n](Tape& t, std::size_t self) {
        ConstMatMap G(t.grad_buffer(self).data().data(), m, n);
        if (t.requires_grad(a.id)) {
          MatMap(t.grad_buffer(a.id).data().data(), m, k).noalias() +=
              G * ConstMatMap(t.value(b.id).data().data(), k, n).transpose();
        }
        if (t.requires_grad(b.id)) {
          MatMap(t.grad_buffer(b.id).data().data(), k, n).noalias() +=
              ConstMatMap(t.value(a.id).data().data(), m, k).transpose() * G;
        }
      },
      "matmul");
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
  return a.tape->record(
      std::move(y), {a, b},
      [a, b](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).data();
        detail::accumulate(t, a.id, g);
        detail::accumulate(t, b.id, g);
      },
      "add");
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= B[i];
  return a.tape->record(
      std::move(y), {a, b},
      [a, b](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).data();
        detail::accumulate(t, a.id, g);
        if (t.requires_grad(b.id)) {
          auto gb = t.grad_buffer(b.id).data();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
  return a.tape->record(
      std::move(y), {a, b},
      [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& A = t.value(a.id);
        const Tensor& B = t.value(b.id);
        if (t.requires_grad(a.id)) {
          auto ga = t.grad_buffer(a.id).data();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.requires_grad(b.id)) {
          auto gb = t.grad_buffer(b.id).data();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
      },
      "mul");
}

/// alpha * a + beta, elementwise.
inline Var affine(Var a, double alpha, double beta) {
  return detail::unary(
      a, [alpha, beta](double x) { return alpha * x + beta; },
      [alpha](double, double) { return alpha; }, "affine");
}

inline Var scale(Var a, double c) { return affine(a, c, 0.0); }

/// Broadcast-add a vector over the last axis: a[..., N] + bias[N].
inline Var add_bias(Var a, Var bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  if (b.rank() != 1 || A.rank() == 0 || A.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: cannot broadcast " + shape_str(b.shape()) + " over " +
                         shape_str(A.shape()));
  }
  const std::size_t n = b.dim(0);
  Tensor y = A;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i % n];
  return a.tape->record(
      std::move(y), {a, bias},
      [a, bias, n](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).data();
        detail::accumulate(t, a.id, g);
        if (t.requires_grad(bias.id)) {
          auto gb = t.grad_buffer(bias.id).data();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
      },
      "add_bias");
}

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; },
      "tanh");
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

/// Numerically stable softmax along `axis`.
inline Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) y[base + j * s.inner] /= z;
    }
  }
  return a.tape->record(
      std::move(y), {a},
      [a, s](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad_buffer(self);
        auto ga = t.grad_buffer(a.id).data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
              dot += g[base + j * s.inner] * y[base + j * s.inner];
            }
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t idx = base + j * s.inner;
              ga[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

/// Sum of all elements -> shape [1].
inline Var reduce_sum(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return a.tape->record(
      Tensor::scalar(acc), {a},
      [a](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const double g = t.grad_buffer(self)[0];
        for (double& v : t.grad_buffer(a.id).data()) v += g;
      },
      "reduce_sum");
}

inline Var reduce_mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0.0) throw DegenerateInputError("reduce_mean over an empty tensor");
  return scale(reduce_sum(a), 1.0 / n);
}

/// Sum along `axis`; the axis is removed from the result shape.
inline Var reduce_sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        y[o * s.inner + in] += x[(o * s.n + j) * s.inner + in];
      }
    }
  }
  return a.tape->record(
      std::move(y), {a},
      [a, s](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const Tensor& g = t.grad_buffer(self);
        auto ga = t.grad_buffer(a.id).data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t j = 0; j < s.n; ++j) {
            for (std::size_t in = 0; in < s.inner; ++in) {
              ga[(o * s.n + j) * s.inner + in] += g[o * s.inner + in];
            }
          }
        }
      },
      "reduce_sum_axis");
}

inline Var reduce_mean(Var a, std::size_t axis) {
  const std::size_t n = detail::split_axis(a.value().shape(), axis).n;
  if (n == 0) throw DegenerateInputError("reduce_mean over an empty axis");
  return scale(reduce_sum(a, axis), 1.0 / static_cast<double>(n));
}

/// Concatenate along the last axis. All leading extents must agree.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().value().shape();
  if (first.empty()) throw DimensionError("concat of rank-0 tensors");
  Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < widths[p]; ++c) y[r * total + offset + c] = x[r * widths[p] + c];
    }
    offset += widths[p];
  }
  return parts.front().tape->record(
      std::move(y), parts,
      [parts, widths, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
          if (t.requires_grad(parts[p].id)) {
            auto gp = t.grad_buffer(parts[p].id).data();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[p]; ++c) {
                gp[r * widths[p] + c] += g[r * total + offset + c];
              }
            }
          }
          offset += widths[p];
        }
      },
      "concat");
}

/// Stack equally shaped [B, D] tensors into [B, F, D].
inline Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& s0 = parts.front().value().shape();
  if (s0.size() != 2) throw DimensionError("stack expects rank-2 inputs, got " + shape_str(s0));
  for (const Var& p : parts) {
    if (p.value().shape() != s0) {
      throw DimensionError("stack: shape mismatch " + shape_str(s0) + " vs " +
                           shape_str(p.value().shape()));
    }
  }
  const std::size_t B = s0[0], D = s0[1], F = parts.size();
  Tensor y(Shape{B, F, D});
  for (std::size_t f = 0; f < F; ++f) {
    const Tensor& x = parts[f].value();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) y[(b * F + f) * D + d] = x[b * D + d];
    }
  }
  return parts.front().tape->record(
      std::move(y), parts,
      [parts, B, F, D](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        for (std::size_t f = 0; f < F; ++f) {
          if (!t.requires_grad(parts[f].id)) continue;
          auto gp = t.grad_buffer(parts[f].id).data();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t d = 0; d < D; ++d) gp[b * D + d] += g[(b * F + f) * D + d];
          }
        }
      },
      "stack");
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  if (begin >= end || end > s.n) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  }
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor y(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = x.data().data() + (o * s.n + begin) * s.inner;
    std::copy(src, src + len * s.inner, y.data().data() + o * len * s.inner);
  }
  return a.tape->record(
      std::move(y), {a},
      [a, s, begin, len](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const Tensor& g = t.grad_buffer(self);
        auto ga = t.grad_buffer(a.id).data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < len * s.inner; ++i) {
            ga[(o * s.n + begin) * s.inner + i] += g[o * len * s.inner + i];
          }
        }
      },
      "slice");
}

inline Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape->record(
      std::move(y), {a},
      [a](Tape& t, std::size_t self) { detail::accumulate(t, a.id, t.grad_buffer(self).data()); },
      "reshape");
}

/// [A, B, C] -> [A, C, B]
inline Var swap_last_axes(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 3) throw DimensionError("swap_last_axes expects rank 3, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  Tensor y(Shape{A, C, B});
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      for (std::size_t k = 0; k < C; ++k) y[(i * C + k) * B + j] = x[(i * B + j) * C + k];
    }
  }
  return a.tape->record(
      std::move(y), {a},
      [a, A, B, C](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id)) return;
        const Tensor& g = t.grad_buffer(self);
        auto ga = t.grad_buffer(a.id).data();
        for (std::size_t i = 0; i < A; ++i) {
          for (std::size_t j = 0; j < B; ++j) {
            for (std::size_t k = 0; k < C; ++k) ga[(i * B + j) * C + k] += g[(i * C + k) * B + j];
          }
        }
      },
      "swap_last_axes");
}

/// Row lookup: table[C, E] indexed by `rows` -> [rows.size(), E].
/// Equivalent to one-hot(rows) x table; only selected rows receive gradient.
inline Var gather_rows(Var table, const std::vector<std::size_t>& rows) {
  const Tensor& W = table.value();
  if (W.rank() != 2) throw DimensionError("gather_rows expects a rank-2 table, got " + shape_str(W.shape()));
  const std::size_t C = W.dim(0), E = W.dim(1);
  Tensor y(Shape{rows.size(), E});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= C) {
      throw BoundsError("category index " + std::to_string(rows[i]) + " outside [0, " +
                        std::to_string(C) + ")");
    }
    std::copy_n(W.data().data() + rows[i] * E, E, y.data().data() + i * E);
  }
  return table.tape->record(
      std::move(y), {table},
      [table, rows, E](Tape& t, std::size_t self) {
        if (!t.requires_grad(table.id)) return;
        const Tensor& g = t.grad_buffer(self);
        auto gw = t.grad_buffer(table.id).data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t e = 0; e < E; ++e) gw[rows[i] * E + e] += g[i * E + e];
        }
      },
      "gather_rows");
}

/// Row-wise select: out[b] = mask[b] * fresh[b] + (1 - mask[b]) * kept[b].
/// Mask entries are 0 or 1, so the result is an exact copy of one side.
inline Var blend_rows(const std::vector<double>& mask, Var fresh, Var kept) {
  detail::require_same_shape(fresh.value(), kept.value(), "blend_rows");
  const Tensor& F = fresh.value();
  const Tensor& K = kept.value();
  if (F.rank() != 2 || F.dim(0) != mask.size()) {
    throw DimensionError("blend_rows: mask length " + std::to_string(mask.size()) +
                         " does not match " + shape_str(F.shape()));
  }
  const std::size_t H = F.dim(1);
  Tensor y(F.shape());
  for (std::size_t b = 0; b < mask.size(); ++b) {
    const Tensor& src = mask[b] != 0.0 ? F : K;
    std::copy_n(src.data().data() + b * H, H, y.data().data() + b * H);
  }
  return fresh.tape->record(
      std::move(y), {fresh, kept},
      [mask, fresh, kept, H](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        for (std::size_t b = 0; b < mask.size(); ++b) {
          const std::size_t target = mask[b] != 0.0 ? fresh.id : kept.id;
          if (!t.requires_grad(target)) continue;
          auto gt = t.grad_buffer(target).data();
          for (std::size_t h = 0; h < H; ++h) gt[b * H + h] += g[b * H + h];
        }
      },
      "blend_rows");
}

}  // namespace ad
}  // namespace metatte
