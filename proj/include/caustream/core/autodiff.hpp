#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// topological order, so backward() simply walks the node list in reverse.
// All reshaping ops use row-major index semantics regardless of Eigen's
// column-major storage.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "caustream/core/errors.hpp"

namespace caustream::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double item() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Matrix(), {}, nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  Var push(Matrix value, std::vector<std::size_t> parents, Backward backward) {
    bool rg = false;
    for (auto p : parents) rg = rg || nodes_[p].requires_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(parents),
                          rg ? std::move(backward) : nullptr, rg});
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  /// Gradient of the last backward() root with respect to node `id`; zeros if untouched.
  Matrix grad(std::size_t id) const {
    const auto& n = nodes_[id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Matrix& grad_ref(std::size_t id) const { return nodes_[id].grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(const Var& root) {
    require(root.tape() == this, "backward root belongs to another tape");
    require(root.rows() == 1 && root.cols() == 1, "backward root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline double Var::item() const {
  require(rows() == 1 && cols() == 1, "item() on non-scalar");
  return value()(0, 0);
}

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "operands on different tapes");
}

// Broadcast `b` to rows x cols. Supported: exact, 1x1, 1xc, rx1.
inline Matrix broadcast(const Matrix& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1 && b.cols() == cols) return b.replicate(rows, 1);
  if (b.cols() == 1 && b.rows() == rows) return b.replicate(1, cols);
  throw ContractError("cannot broadcast " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()) + " to " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

// Sum a full-shape gradient back down to the broadcast operand's shape.
inline Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting of the right operand.

inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const Index r = a.rows(), c = a.cols();
  Matrix out = a.value() + detail::broadcast(b.value(), r, c);
  const auto ia = a.id(), ib = b.id();
  const Index br = b.rows(), bc = b.cols();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib, br, bc](Tape& t, std::size_t s) {
    const Matrix& g = t.grad_ref(s);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to(g, br, bc));
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const Index r = a.rows(), c = a.cols();
  Matrix out = a.value() - detail::broadcast(b.value(), r, c);
  const auto ia = a.id(), ib = b.id();
  const Index br = b.rows(), bc = b.cols();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib, br, bc](Tape& t, std::size_t s) {
    const Matrix& g = t.grad_ref(s);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to(-g, br, bc));
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const Index r = a.rows(), c = a.cols();
  Matrix bb = detail::broadcast(b.value(), r, c);
  Matrix out = a.value().cwiseProduct(bb);
  const auto ia = a.id(), ib = b.id();
  const Index br = b.rows(), bc = b.cols();
  return a.tape()->push(std::move(out), {ia, ib},
                        [ia, ib, br, bc, bb = std::move(bb)](Tape& t, std::size_t s) {
                          const Matrix& g = t.grad_ref(s);
                          if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(bb));
                          if (t.requires_grad(ib))
                            t.accumulate(ib,
                                         detail::reduce_to(g.cwiseProduct(t.value(ia)), br, bc));
                        });
}

inline Var scale(const Var& a, double k) {
  const auto ia = a.id();
  return a.tape()->push(a.value() * k, {ia},
                        [ia, k](Tape& t, std::size_t s) { t.accumulate(ia, t.grad_ref(s) * k); });
}

inline Var add_scalar(const Var& a, double k) {
  const auto ia = a.id();
  Matrix out = a.value().array() + k;
  return a.tape()->push(std::move(out), {ia},
                        [ia](Tape& t, std::size_t s) { t.accumulate(ia, t.grad_ref(s)); });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator-(const Var& a, double k) { return add_scalar(a, -k); }

// ---------------------------------------------------------------------------
// Linear algebra.

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Matrix out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t s) {
    const Matrix& g = t.grad_ref(s);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

inline Var transpose(const Var& a) {
  const auto ia = a.id();
  return a.tape()->push(a.value().transpose(), {ia}, [ia](Tape& t, std::size_t s) {
    t.accumulate(ia, t.grad_ref(s).transpose());
  });
}

// ---------------------------------------------------------------------------
// Unary elementwise maps.

namespace detail {
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  const auto ia = a.id();
  Matrix out = a.value().unaryExpr(f);
  return a.tape()->push(std::move(out), {ia}, [ia, df](Tape& t, std::size_t s) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(s);
    Matrix d(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) d(i) = df(x(i), y(i));
    t.accumulate(ia, t.grad_ref(s).cwiseProduct(d));
  });
}
}  // namespace detail

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline double softplus_value(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return softplus_value(x); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var reciprocal(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

/// Elementwise a / b with b broadcast like the other binary ops.
inline Var div(const Var& a, const Var& b) { return mul(a, reciprocal(b)); }

// ---------------------------------------------------------------------------
// Reductions.

inline Var sum(const Var& a) {
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape()->push(Matrix::Constant(1, 1, a.value().sum()), {ia},
                        [ia, r, c](Tape& t, std::size_t s) {
                          t.accumulate(ia, Matrix::Constant(r, c, t.grad_ref(s)(0, 0)));
                        });
}

inline Var mean(const Var& a) {
  require(a.value().size() > 0, "mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Sum over rows: r x c -> 1 x c.
inline Var col_sum(const Var& a) {
  const auto ia = a.id();
  const Index r = a.rows();
  Matrix out = a.value().colwise().sum();
  return a.tape()->push(std::move(out), {ia}, [ia, r](Tape& t, std::size_t s) {
    t.accumulate(ia, t.grad_ref(s).replicate(r, 1));
  });
}

/// Sum over columns: r x c -> r x 1.
inline Var row_sum(const Var& a) {
  const auto ia = a.id();
  const Index c = a.cols();
  Matrix out = a.value().rowwise().sum();
  return a.tape()->push(std::move(out), {ia}, [ia, c](Tape& t, std::size_t s) {
    t.accumulate(ia, t.grad_ref(s).replicate(1, c));
  });
}

// ---------------------------------------------------------------------------
// Structural ops.

inline Var slice_rows(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  Matrix out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), {ia}, [ia, r, c, start, count](Tape& t, std::size_t s) {
    Matrix g = Matrix::Zero(r, c);
    g.middleRows(start, count) = t.grad_ref(s);
    t.accumulate(ia, g);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->push(std::move(out), {ia}, [ia, r, c, start, count](Tape& t, std::size_t s) {
    Matrix g = Matrix::Zero(r, c);
    g.middleCols(start, count) = t.grad_ref(s);
    t.accumulate(ia, g);
  });
}

inline Var hcat(const std::vector<Var>& parts) {
  require(!parts.empty(), "hcat of nothing");
  const Index r = parts.front().rows();
  Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require(p.rows() == r, "hcat row mismatch");
    total += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(r, total);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  auto parents = ids;
  return parts.front().tape()->push(
      std::move(out), std::move(parents), [ids, widths](Tape& t, std::size_t s) {
        const Matrix& g = t.grad_ref(s);
        Index o = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleCols(o, widths[i]));
          o += widths[i];
        }
      });
}

inline Var vcat(const std::vector<Var>& parts) {
  require(!parts.empty(), "vcat of nothing");
  const Index c = parts.front().cols();
  Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    require(p.cols() == c, "vcat column mismatch");
    total += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(total, c);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  auto parents = ids;
  return parts.front().tape()->push(
      std::move(out), std::move(parents), [ids, heights](Tape& t, std::size_t s) {
        const Matrix& g = t.grad_ref(s);
        Index o = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleRows(o, heights[i]));
          o += heights[i];
        }
      });
}

/// out(p) = a(src[p]) over row-major flat indices; out has shape rows x cols.
inline Var gather(const Var& a, Index rows, Index cols, std::vector<Index> src) {
  require(static_cast<Index>(src.size()) == rows * cols, "gather index count mismatch");
  const Index ar = a.rows(), ac = a.cols();
  const Matrix& av = a.value();
  Matrix out(rows, cols);
  for (Index p = 0; p < rows * cols; ++p) {
    const Index q = src[static_cast<std::size_t>(p)];
    require(q >= 0 && q < ar * ac, "gather index out of range");
    out(p / cols, p % cols) = av(q / ac, q % ac);
  }
  const auto ia = a.id();
  return a.tape()->push(std::move(out), {ia},
                        [ia, ar, ac, cols, src = std::move(src)](Tape& t, std::size_t s) {
                          const Matrix& g = t.grad_ref(s);
                          Matrix ga = Matrix::Zero(ar, ac);
                          for (std::size_t p = 0; p < src.size(); ++p) {
                            const Index pi = static_cast<Index>(p);
                            ga(src[p] / ac, src[p] % ac) += g(pi / cols, pi % cols);
                          }
                          t.accumulate(ia, ga);
                        });
}

inline Var reshape(const Var& a, Index rows, Index cols) {
  require(rows * cols == a.value().size(), "reshape size mismatch");
  std::vector<Index> src(static_cast<std::size_t>(rows * cols));
  for (Index p = 0; p < rows * cols; ++p) src[static_cast<std::size_t>(p)] = p;
  return gather(a, rows, cols, std::move(src));
}

inline Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  const Index c = a.cols();
  std::vector<Index> src;
  src.reserve(rows.size() * static_cast<std::size_t>(c));
  for (Index r : rows)
    for (Index j = 0; j < c; ++j) src.push_back(r * c + j);
  return gather(a, static_cast<Index>(rows.size()), c, std::move(src));
}

/// Stack `k` copies of `a` vertically.
inline Var tile_rows(const Var& a, Index k) {
  std::vector<Var> parts(static_cast<std::size_t>(k), a);
  return vcat(parts);
}

}  // namespace caustream::ad
