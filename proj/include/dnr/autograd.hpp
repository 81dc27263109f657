// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over Tensor.
//
// A Tape records one forward pass. Every op appends a node holding its value
// and a closure that maps the output adjoint to input adjoints. Nodes are
// appended in evaluation order, so walking the tape backwards is a valid
// reverse topological order. backward() consumes the tape.
//
// Tracked leaves are named; backward() returns their gradients keyed by name.
// Constants never receive gradients and ops whose inputs are all constants
// are recorded without a closure.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dnr/error.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

using Gradients = std::map<std::string, Tensor>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool tracked() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const {
    require(tape_ != nullptr, "Var: use of an unbound variable");
    return *tape_;
  }
  std::size_t id() const noexcept { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// grad_out, input values, output value -> accumulate into input grads.
/// Entries of input_grads are null for untracked inputs.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<const Tensor* const> inputs,
                                      const Tensor& output, std::span<Tensor* const> input_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var leaf(std::string name, Tensor value) {
    require(!name.empty(), "Tape::leaf: tracked leaves need a name");
    for (const auto& n : nodes_)
      require(n.leaf_name != name, "Tape::leaf: duplicate leaf name '" + name + "'");
    Var v = push("leaf", std::move(value), {}, nullptr, true);
    nodes_.back().leaf_name = std::move(name);
    return v;
  }

  Var constant(Tensor value) { return push("const", std::move(value), {}, nullptr, false); }

  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool tracked = false;
    std::vector<std::size_t> idx;
    idx.reserve(inputs.size());
    for (const Var& in : inputs) {
      require(in.tape_ == this, "Tape::record(" + op + "): input belongs to another tape");
      idx.push_back(in.index_);
      tracked = tracked || nodes_[in.index_].tracked;
    }
    if (!tracked) return push(std::move(op), std::move(value), {}, nullptr, false);
    return push(std::move(op), std::move(value), std::move(idx), std::move(fn), true);
  }

  const Tensor& value(const Var& v) const { return nodes_.at(v.index_).value; }
  bool tracked(const Var& v) const { return nodes_.at(v.index_).tracked; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Runs reverse accumulation from a scalar loss. Returns d loss / d leaf for
  /// every tracked leaf; leaves the loss does not reach get zero tensors.
  Gradients backward(const Var& loss) {
    require(loss.tape_ == this, "backward: loss belongs to another tape");
    require(!consumed_, "backward: tape already consumed");
    const Node& ln = nodes_.at(loss.index_);
    require(ln.value.size() == 1,
            "backward: loss must be a scalar, got shape " + shape_str(ln.value.shape()));
    require(ln.tracked, "backward: loss does not depend on any tracked leaf");
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> has(nodes_.size(), false);
    grads[loss.index_] = Tensor(ln.value.shape(), 1.0);
    has[loss.index_] = true;

    std::vector<const Tensor*> in_vals;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.index_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!has[i] || !n.backward) continue;
      in_vals.clear();
      in_grads.clear();
      for (std::size_t p : n.inputs) {
        in_vals.push_back(&nodes_[p].value);
        if (nodes_[p].tracked) {
          if (!has[p]) {
            grads[p] = Tensor(nodes_[p].value.shape(), 0.0);
            has[p] = true;
          }
          in_grads.push_back(&grads[p]);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      n.backward(grads[i], in_vals, n.value, in_grads);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (in_grads[k] != nullptr && !in_grads[k]->all_finite()) {
          const std::size_t p = n.inputs[k];
          throw numeric_fault("backward: non-finite gradient at node #" + std::to_string(p) + " (" +
                              nodes_[p].op + "), propagated from node #" + std::to_string(i) +
                              " (" + n.op + ")");
        }
      }
    }

    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.leaf_name.empty()) continue;
      out.emplace(n.leaf_name, has[i] ? std::move(grads[i]) : Tensor(n.value.shape(), 0.0));
    }
    return out;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool tracked = false;
    std::string leaf_name;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn,
           bool tracked) {
    require(!consumed_, "Tape: cannot record '" + op + "' on a consumed tape");
    if (!value.all_finite())
      throw numeric_fault("non-finite value produced by '" + op + "' at node #" +
                          std::to_string(nodes_.size()));
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(fn),
                          tracked, {}});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape().value(*this); }
inline bool Var::tracked() const { return tape().tracked(*this); }

// ---------------------------------------------------------------------------
// Elementwise ops with row/column broadcasting on the matrix view.

namespace detail {

inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const std::string& op) {
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  require((ra == rb || ra == 1 || rb == 1) && (ca == cb || ca == 1 || cb == 1),
          op + ": cannot broadcast " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
  const std::size_t r = std::max(ra, rb), c = std::max(ca, cb);
  if (a.rank() == 2 || b.rank() == 2) return {r, c};
  return {c};
}

template <class F, class DA, class DB>
Var binary(const std::string& op, const Var& a, const Var& b, F f, DA da, DB db) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(broadcast_shape(A, B, op));
  const std::size_t R = out.rows(), C = out.cols();
  const bool ar = A.rows() == 1, ac = A.cols() == 1, br = B.rows() == 1, bc = B.cols() == 1;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out(r, c) = f(A(ar ? 0 : r, ac ? 0 : c), B(br ? 0 : r, bc ? 0 : c));
  return a.tape().record(op, std::move(out), {a, b},
                         [da, db, ar, ac, br, bc](const Tensor& g, std::span<const Tensor* const> in,
                                                  const Tensor& y, std::span<Tensor* const> gin) {
                           const Tensor& A = *in[0];
                           const Tensor& B = *in[1];
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             for (std::size_t c = 0; c < y.cols(); ++c) {
                               const std::size_t ia_r = ar ? 0 : r, ia_c = ac ? 0 : c;
                               const std::size_t ib_r = br ? 0 : r, ib_c = bc ? 0 : c;
                               const double x = A(ia_r, ia_c), z = B(ib_r, ib_c);
                               if (gin[0]) (*gin[0])(ia_r, ia_c) += g(r, c) * da(x, z, y(r, c));
                               if (gin[1]) (*gin[1])(ib_r, ib_c) += g(r, c) * db(x, z, y(r, c));
                             }
                           }
                         });
}

template <class F, class D>
Var unary(const std::string& op, const Var& x, F f, D d) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
  return x.tape().record(op, std::move(out), {x},
                         [d](const Tensor& g, std::span<const Tensor* const> in, const Tensor& y,
                             std::span<Tensor* const> gin) {
                           const Tensor& X = *in[0];
                           for (std::size_t i = 0; i < X.size(); ++i) (*gin[0])[i] += g[i] * d(X[i], y[i]);
                         });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary("add", a, b, [](double x, double y) { return x + y; },
                        [](double, double, double) { return 1.0; },
                        [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary("sub", a, b, [](double x, double y) { return x - y; },
                        [](double, double, double) { return 1.0; },
                        [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary("mul", a, b, [](double x, double y) { return x * y; },
                        [](double, double y, double) { return y; },
                        [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  for (double v : b.value().data())
    if (v == 0.0) throw numeric_fault("div: division by zero");
  return detail::binary("div", a, b, [](double x, double y) { return x / y; },
                        [](double, double y, double) { return 1.0 / y; },
                        [](double, double y, double q) { return -q / y; });
}

inline Var constant_like(const Var& x, double c) { return x.tape().constant(Tensor::scalar(c)); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double c) { return add(a, constant_like(a, c)); }
inline Var operator+(double c, const Var& a) { return add(constant_like(a, c), a); }
inline Var operator-(const Var& a, double c) { return sub(a, constant_like(a, c)); }
inline Var operator-(double c, const Var& a) { return sub(constant_like(a, c), a); }
inline Var operator*(const Var& a, double c) { return mul(a, constant_like(a, c)); }
inline Var operator*(double c, const Var& a) { return mul(constant_like(a, c), a); }
inline Var operator/(const Var& a, double c) { return div(a, constant_like(a, c)); }

inline Var neg(const Var& x) {
  return detail::unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}
inline Var operator-(const Var& x) { return neg(x); }

inline Var relu(const Var& x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(const Var& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw numeric_fault("log: non-positive argument");
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(const Var& x) {
  for (double v : x.value().data())
    if (v < 0.0) throw numeric_fault("sqrt: negative argument");
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return 0.5 / y; });
}

// Subgradient at 0 is 0.
inline Var abs(const Var& x) {
  return detail::unary("abs", x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& x) {
  return detail::unary("square", x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Linear algebra and structural ops.

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  require(B.rank() == 2 && B.rows() == k,
          "matmul: shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + " do not align");
  Tensor out(A.rank() == 2 ? Shape{n, m} : Shape{m});
  const double* ap = A.data().data();
  const double* bp = B.data().data();
  double* op = out.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + p * m;
      double* orow = op + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  return a.tape().record("matmul", std::move(out), {a, b},
                         [n, k, m](const Tensor& g, std::span<const Tensor* const> in, const Tensor&,
                                   std::span<Tensor* const> gin) {
                           const double* ap = in[0]->data().data();
                           const double* bp = in[1]->data().data();
                           const double* gp = g.data().data();
                           if (gin[0]) {  // dA = G B^T
                             double* da = gin[0]->data().data();
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < m; ++j) s += gp[i * m + j] * bp[p * m + j];
                                 da[i * k + p] += s;
                               }
                           }
                           if (gin[1]) {  // dB = A^T G
                             double* db = gin[1]->data().data();
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double av = ap[i * k + p];
                                 if (av == 0.0) continue;
                                 for (std::size_t j = 0; j < m; ++j) db[p * m + j] += av * gp[i * m + j];
                               }
                           }
                         });
}

inline Var transpose(const Var& x) {
  const Tensor& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = X(i, j);
  return x.tape().record("transpose", std::move(out), {x},
                         [r, c](const Tensor& g, std::span<const Tensor* const>, const Tensor&,
                                std::span<Tensor* const> gin) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) (*gin[0])(i, j) += g(j, i);
                         });
}

/// Concatenates along axis 0 (rows) or 1 (columns). Rank-1 inputs only
/// concatenate along axis 0, end to end.
inline Var concat(const std::vector<Var>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: no inputs");
  require(axis <= 1, "concat: axis must be 0 or 1");
  const std::size_t rank = xs.front().value().rank();
  for (const Var& v : xs) require(v.value().rank() == rank, "concat: mixed ranks");
  if (rank == 1) require(axis == 0, "concat: rank-1 inputs concatenate along axis 0");
  const bool along_cols = rank == 1 || axis == 1;

  std::vector<std::size_t> extents;
  std::size_t total = 0;
  const std::size_t fixed = along_cols ? xs.front().value().rows() : xs.front().value().cols();
  for (const Var& v : xs) {
    const Tensor& t = v.value();
    require((along_cols ? t.rows() : t.cols()) == fixed,
            "concat: non-concatenated dimension mismatch at " + shape_str(t.shape()));
    extents.push_back(along_cols ? t.cols() : t.rows());
    total += extents.back();
  }
  Shape shape = rank == 1 ? Shape{total} : (along_cols ? Shape{fixed, total} : Shape{total, fixed});
  Tensor out(shape);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& t = xs[i].value();
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (along_cols)
          out(r, off + c) = t(r, c);
        else
          out(off + r, c) = t(r, c);
      }
    off += extents[i];
  }
  return xs.front().tape().record(
      "concat", std::move(out), xs,
      [extents, along_cols](const Tensor& g, std::span<const Tensor* const> in, const Tensor&,
                            std::span<Tensor* const> gin) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (gin[i]) {
            Tensor& gi = *gin[i];
            for (std::size_t r = 0; r < gi.rows(); ++r)
              for (std::size_t c = 0; c < gi.cols(); ++c)
                gi(r, c) += along_cols ? g(r, off + c) : g(off + r, c);
          }
          off += extents[i];
        }
      });
}

/// Half-open slice [begin, end) along axis 0 (rows) or 1 (columns). For a
/// rank-1 input axis 0 indexes its elements.
inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  require(axis <= 1, "slice: axis must be 0 or 1");
  const bool along_cols = X.rank() == 1 || axis == 1;
  if (X.rank() == 1) require(axis == 0, "slice: rank-1 input only has axis 0");
  const std::size_t extent = along_cols ? X.cols() : X.rows();
  require(begin < end && end <= extent, "slice: bad range [" + std::to_string(begin) + "," +
                                            std::to_string(end) + ") for " + shape_str(X.shape()));
  const std::size_t len = end - begin;
  Shape shape = X.rank() == 1 ? Shape{len} : (along_cols ? Shape{X.rows(), len} : Shape{len, X.cols()});
  Tensor out(shape);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = along_cols ? X(r, begin + c) : X(begin + r, c);
  return x.tape().record("slice", std::move(out), {x},
                         [begin, along_cols](const Tensor& g, std::span<const Tensor* const>,
                                             const Tensor&, std::span<Tensor* const> gin) {
                           for (std::size_t r = 0; r < g.rows(); ++r)
                             for (std::size_t c = 0; c < g.cols(); ++c) {
                               if (along_cols)
                                 (*gin[0])(r, begin + c) += g(r, c);
                               else
                                 (*gin[0])(begin + r, c) += g(r, c);
                             }
                         });
}

/// Sum over an axis, keeping it as size 1. Rank-1 input with axis 0 sums
/// everything into shape {1}.
inline Var sum(const Var& x, std::size_t axis) {
  const Tensor& X = x.value();
  require(axis <= 1, "sum: axis must be 0 or 1");
  if (X.rank() == 1) require(axis == 0, "sum: rank-1 input only has axis 0");
  const bool over_cols = X.rank() == 1 || axis == 1;
  Shape shape = X.rank() == 1 ? Shape{1} : (over_cols ? Shape{X.rows(), 1} : Shape{1, X.cols()});
  Tensor out(shape);
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) {
      if (over_cols)
        out[r] += X(r, c);
      else
        out[c] += X(r, c);
    }
  return x.tape().record("sum", std::move(out), {x},
                         [over_cols](const Tensor& g, std::span<const Tensor* const>, const Tensor&,
                                     std::span<Tensor* const> gin) {
                           Tensor& gi = *gin[0];
                           for (std::size_t r = 0; r < gi.rows(); ++r)
                             for (std::size_t c = 0; c < gi.cols(); ++c) gi(r, c) += g[over_cols ? r : c];
                         });
}

inline Var mean(const Var& x, std::size_t axis) {
  const Tensor& X = x.value();
  const std::size_t n = (X.rank() == 1 || axis == 1) ? X.cols() : X.rows();
  return sum(x, axis) * (1.0 / static_cast<double>(n));
}

/// Sum of all elements, shape {1}.
inline Var sum_all(const Var& x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape().record("sum_all", Tensor::scalar(s), {x},
                         [](const Tensor& g, std::span<const Tensor* const>, const Tensor&,
                            std::span<Tensor* const> gin) {
                           for (double& v : gin[0]->data()) v += g[0];
                         });
}

inline Var mean_all(const Var& x) {
  return sum_all(x) * (1.0 / static_cast<double>(x.value().size()));
}

/// Row-wise softmax over the last axis.
inline Var softmax(const Var& x) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < X.cols(); ++c) mx = std::max(mx, X(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < X.cols(); ++c) z += (out(r, c) = std::exp(X(r, c) - mx));
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) /= z;
  }
  return x.tape().record("softmax", std::move(out), {x},
                         [](const Tensor& g, std::span<const Tensor* const>, const Tensor& y,
                            std::span<Tensor* const> gin) {
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
                             for (std::size_t c = 0; c < y.cols(); ++c)
                               (*gin[0])(r, c) += y(r, c) * (g(r, c) - dot);
                           }
                         });
}

/// Row-wise log-softmax over the last axis (log-sum-exp stabilised).
inline Var log_softmax(const Var& x) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < X.cols(); ++c) mx = std::max(mx, X(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < X.cols(); ++c) z += std::exp(X(r, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) = X(r, c) - lse;
  }
  return x.tape().record("log_softmax", std::move(out), {x},
                         [](const Tensor& g, std::span<const Tensor* const>, const Tensor& y,
                            std::span<Tensor* const> gin) {
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             double gs = 0.0;
                             for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
                             for (std::size_t c = 0; c < y.cols(); ++c)
                               (*gin[0])(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
                           }
                         });
}

// ---------------------------------------------------------------------------
// Central finite differences, the gradient oracle for tests.

using ParamMap = std::map<std::string, Tensor>;

inline Gradients finite_diff_grad(const std::function<double(const ParamMap&)>& f, ParamMap params,
                                  double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, "finite_diff_grad: eps must lie in [1e-7, 1e-3]");
  auto eval = [&](const ParamMap& p) {
    const double v = f(p);
    if (!std::isfinite(v)) throw numeric_fault("finite_diff_grad: objective returned a non-finite value");
    return v;
  };
  eval(params);
  Gradients out;
  for (auto& [name, tensor] : params) {
    Tensor g(tensor.shape());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + eps;
      const double fp = eval(params);
      tensor[i] = orig - eps;
      const double fm = eval(params);
      tensor[i] = orig;
      g[i] = (fp - fm) / (2.0 * eps);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

/// Largest per-tensor relative error ||a - b|| / max(||a||, ||b||). Pairs
/// whose norms are both below `floor` are compared absolutely.
inline double gradient_relative_error(const Gradients& a, const Gradients& b, double floor = 1e-8) {
  require(a.size() == b.size(), "gradient_relative_error: key sets differ");
  double worst = 0.0;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    require(it != b.end(), "gradient_relative_error: missing key " + name);
    const Tensor& tb = it->second;
    require(ta.shape() == tb.shape(), "gradient_relative_error: shape mismatch for " + name);
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      diff += (ta[i] - tb[i]) * (ta[i] - tb[i]);
      na += ta[i] * ta[i];
      nb += tb[i] * tb[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    worst = std::max(worst, scale < floor ? std::sqrt(diff) : std::sqrt(diff) / scale);
  }
  return worst;
}

}  // namespace dnr
