#pragma once

// Define-by-run reverse-mode automatic differentiation over dense matrices.
//
// A Tape owns every node produced during one forward pass. Ops append nodes
// in execution order, so the tape is topologically sorted by construction and
// backward() is a single reverse sweep. Parameters enter a tape by reference
// (no copy); their gradients stay on the tape until collected, which keeps
// independent tapes free of shared mutable state.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nacap/tensor.hpp"

namespace nacap {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;
  double operator()(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  /// Copies the node value out of the tape.
  Tensor value() const;
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// With record_gradients == false no backward closures are kept; used for
  /// inference.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return add_node(std::move(t.shape), std::move(t.values), nullptr, false, -1); }

  /// A differentiable leaf owning its values.
  Var leaf(Tensor t) { return add_node(std::move(t.shape), std::move(t.values), nullptr, recording_, -1); }

  /// A differentiable leaf that borrows `t`'s storage; `t` must outlive the
  /// tape. `slot` identifies the parameter when gradients are collected.
  Var parameter(const Tensor& t, std::size_t slot) {
    Node n;
    n.shape = t.shape;
    n.external = t.values.data();
    n.count = t.values.size();
    n.requires_grad = recording_;
    n.slot = static_cast<std::int64_t>(slot);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Appends an op result. `fn` is dropped unless some input requires grad.
  Var push(Shape shape, std::vector<double> values, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    }
    return add_node(std::move(shape), std::move(values), needs ? std::move(fn) : nullptr, needs, -1);
  }

  /// Same as push() for a variable number of inputs.
  Var push(Shape shape, std::vector<double> values, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    }
    return add_node(std::move(shape), std::move(values), needs ? std::move(fn) : nullptr, needs, -1);
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }

  std::span<const double> values(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.external) return {n.external, n.count};
    return {n.owned.data(), n.owned.size()};
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first use.
  std::span<double> grad_mut(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.count, 0.0);
    return n.grad;
  }

  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }

  /// Accumulates d(loss)/d(node) into every differentiable ancestor of `loss`.
  void backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (nodes_[loss.id()].count != 1) {
      throw DimensionError("backward: loss must be scalar, got shape " + to_string(nodes_[loss.id()].shape));
    }
    if (!recording_) throw std::logic_error("backward: tape was created without gradient recording");
    grad_mut(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  /// Visits (slot, gradient) for every parameter node that received one.
  template <class F>
  void for_each_parameter_grad(F&& f) const {
    for (const Node& n : nodes_) {
      if (n.slot >= 0 && !n.grad.empty()) f(static_cast<std::size_t>(n.slot), std::span<const double>(n.grad));
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> owned;
    const double* external = nullptr;
    std::size_t count = 0;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::int64_t slot = -1;
  };

  Var add_node(Shape shape, std::vector<double> values, BackwardFn fn, bool requires_grad, std::int64_t slot) {
    Node n;
    n.shape = std::move(shape);
    n.owned = std::move(values);
    n.count = n.owned.size();
    n.backward = std::move(fn);
    n.requires_grad = requires_grad;
    n.slot = slot;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool recording_;
};

inline const Shape& Var::shape() const { return tape_->shape(id_); }
inline std::span<const double> Var::values() const { return tape_->values(id_); }
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }
inline std::size_t Var::size() const { return values().size(); }
inline std::size_t Var::cols() const { return shape().empty() ? 1 : shape().back(); }
inline std::size_t Var::rows() const { return size() / cols(); }
inline Tensor Var::value() const {
  auto v = values();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}
inline double Var::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar of shape " + to_string(shape()));
  return values()[0];
}

// ---------------------------------------------------------------------------
// Kernels on raw row-major buffers. All accumulate into the output.

namespace kernels {

// c[p x r] += a[p x q] * b[q x r]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* ci = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      const double* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[p x r] += a[p x q] * b[r x q]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* ai = a + i * q;
    for (std::size_t j = 0; j < r; ++j) {
      const double* bj = b + j * q;
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += ai[k] * bj[k];
      c[i * r + j] += s;
    }
  }
}

// c[q x r] += a[p x q]^T * b[p x r]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* bi = b + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      double* ck = c + k * r;
      for (std::size_t j = 0; j < r; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace kernels

inline constexpr double kExpClamp = 60.0;

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::invalid_argument("operands live on different tapes");
  return t;
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.size() != b.size() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dfdx) {
  Tape& t = tape_of(a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return t.push(a.shape(), std::move(out), {a}, [ia, dfdx](Tape& tp, std::size_t o) {
    auto x = tp.values(ia);
    auto y = tp.values(o);
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

inline double clamp_exp_input(double x) { return std::clamp(x, -kExpClamp, kExpClamp); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[p x q] * b[q x r]
inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const std::size_t p = a.rows(), q = a.cols(), q2 = b.rows(), r = b.cols();
  if (q != q2) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(p * r, 0.0);
  kernels::gemm_nn(a.values().data(), b.values().data(), out.data(), p, q, r);
  const std::size_t ia = a.id(), ib = b.id();
  return t.push({p, r}, std::move(out), {a, b}, [ia, ib, p, q, r](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    if (tp.requires_grad(ia)) kernels::gemm_nt(g.data(), tp.values(ib).data(), tp.grad_mut(ia).data(), p, r, q);
    if (tp.requires_grad(ib)) kernels::gemm_tn(tp.values(ia).data(), g.data(), tp.grad_mut(ib).data(), p, q, r);
  });
}

/// a[p x q] * b[r x q]^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  if (q != b.cols()) {
    throw DimensionError("matmul_nt: column counts differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  std::vector<double> out(p * r, 0.0);
  kernels::gemm_nt(a.values().data(), b.values().data(), out.data(), p, q, r);
  const std::size_t ia = a.id(), ib = b.id();
  return t.push({p, r}, std::move(out), {a, b}, [ia, ib, p, q, r](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);  // p x r
    if (tp.requires_grad(ia)) kernels::gemm_nn(g.data(), tp.values(ib).data(), tp.grad_mut(ia).data(), p, r, q);
    if (tp.requires_grad(ib)) kernels::gemm_tn(g.data(), tp.values(ia).data(), tp.grad_mut(ib).data(), p, r, q);
  });
}

// ---------------------------------------------------------------------------
// Element-wise

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.shape(), std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    for (std::size_t id : {ia, ib}) {
      if (!tp.requires_grad(id)) continue;
      auto gx = tp.grad_mut(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.shape(), std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    if (tp.requires_grad(ia)) {
      auto ga = tp.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.shape(), std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    if (tp.requires_grad(ia)) {
      auto ga = tp.grad_mut(ia);
      auto bv = tp.values(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      auto av = tp.values(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = detail::tape_of(a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const std::size_t ia = a.id();
  return t.push(a.shape(), std::move(out), {a}, [ia, s](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

/// x[r x c] + bias broadcast over rows; bias holds c values.
inline Var add_row(Var x, Var bias) {
  Tape& t = detail::tape_of(x, bias);
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c) {
    throw DimensionError("add_row: bias " + to_string(bias.shape()) + " does not match columns of " +
                         to_string(x.shape()));
  }
  auto xv = x.values(), bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return t.push(x.shape(), std::move(out), {x, bias}, [ix, ib, r, c](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    if (tp.requires_grad(ix)) {
      auto gx = tp.grad_mut(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-detail::clamp_exp_input(x))); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(Var a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Inverted dropout: kept entries are scaled by 1 / (1 - p).
template <class Rng>
Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  Tape& t = detail::tape_of(a);
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  const std::size_t ia = a.id();
  return t.push(a.shape(), std::move(out), {a}, [ia, mask = std::move(mask)](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

inline Var sum(Var a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double x : a.values()) s += x;
  const std::size_t ia = a.id();
  return t.push({1}, {s}, {a}, [ia](Tape& tp, std::size_t o) {
    const double g = tp.grad(o)[0];
    for (double& x : tp.grad_mut(ia)) x += g;
  });
}

/// Column means over rows: [r x c] -> [1 x c].
inline Var mean_rows(Var a) {
  Tape& t = detail::tape_of(a);
  const std::size_t r = a.rows(), c = a.cols();
  auto av = a.values();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  for (double& x : out) x /= static_cast<double>(r);
  const std::size_t ia = a.id();
  return t.push({1, c}, std::move(out), {a}, [ia, r, c](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
  });
}

/// Row-wise softmax. With `causal` set, entry (i, j) is masked out for
/// j > i + causal_offset. After max-subtraction the exponent is clamped to
/// [-60, 0]; clamped entries get no gradient.
inline Var softmax(Var a, bool causal = false, std::size_t causal_offset = 0) {
  Tape& t = detail::tape_of(a);
  const std::size_t r = a.rows(), c = a.cols();
  auto av = a.values();
  std::vector<double> out(av.size(), 0.0);
  std::vector<char> live(av.size(), 0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = causal ? std::min(c, i + causal_offset + 1) : c;
    const double* x = av.data() + i * c;
    double* y = out.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      live[i * c + j] = x[j] - mx >= -kExpClamp;
      y[j] = std::exp(detail::clamp_exp_input(x[j] - mx));
      z += y[j];
    }
    for (std::size_t j = 0; j < limit; ++j) y[j] /= z;
  }
  const std::size_t ia = a.id();
  return t.push(a.shape(), std::move(out), {a}, [ia, r, c, live = std::move(live)](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto y = tp.values(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t k = i * c + j;
        if (live[k]) ga[k] += y[k] * (g[k] - dot);
      }
    }
  });
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Per-row standardisation (population variance, epsilon 1e-5) then affine.
inline Var layer_norm(Var x, Var gain, Var bias) {
  Tape& t = detail::tape_of(x, gain);
  if (bias.tape() != &t) throw std::invalid_argument("layer_norm: operands live on different tapes");
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                         " do not match width of " + to_string(x.shape()));
  }
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.push(x.shape(), std::move(out), {x, gain, bias},
                [ix, ig, ib, r, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, std::size_t o) {
                  auto g = tp.grad(o);
                  if (tp.requires_grad(ig)) {
                    auto gg = tp.grad_mut(ig);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
                  }
                  if (tp.requires_grad(ib)) {
                    auto gb = tp.grad_mut(ib);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                  }
                  if (tp.requires_grad(ix)) {
                    auto gx = tp.grad_mut(ix);
                    auto gv = tp.values(ig);
                    std::vector<double> dxhat(d);
                    for (std::size_t i = 0; i < r; ++i) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[i * d + j] * gv[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[i * d + j];
                      }
                      const double n = static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        gx[i * d + j] += rstd[i] / n * (n * dxhat[j] - s1 - xhat[i * d + j] * s2);
                      }
                    }
                  }
                });
}

/// Mean over non-pad positions of -log softmax(logits)[target].
inline Var cross_entropy(Var logits, std::span<const std::uint32_t> targets, std::uint32_t pad_id) {
  Tape& t = detail::tape_of(logits);
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  }
  auto lv = logits.values();
  std::vector<double> probs(lv.size(), 0.0);
  std::vector<char> live(lv.size(), 0);
  std::vector<std::uint32_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] == pad_id) continue;
    if (tgt[i] >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[i]) + " outside vocabulary of " +
                              std::to_string(v));
    }
    const double* x = lv.data() + i * v;
    double* p = probs.data() + i * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      live[i * v + j] = x[j] - mx >= -kExpClamp;
      p[j] = std::exp(detail::clamp_exp_input(x[j] - mx));
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    total += -(detail::clamp_exp_input(x[tgt[i]] - mx) - std::log(z));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target is padding, mean is undefined");
  const std::size_t il = logits.id();
  return t.push({1}, {total / static_cast<double>(count)}, {logits},
                [il, n, v, count, pad_id, tgt = std::move(tgt), probs = std::move(probs),
                 live = std::move(live)](Tape& tp, std::size_t o) {
                  const double g = tp.grad(o)[0] / static_cast<double>(count);
                  auto gl = tp.grad_mut(il);
                  for (std::size_t i = 0; i < n; ++i) {
                    if (tgt[i] == pad_id) continue;
                    for (std::size_t j = 0; j < v; ++j) {
                      const std::size_t k = i * v + j;
                      if (!live[k]) continue;
                      gl[k] += g * (probs[k] - (j == tgt[i] ? 1.0 : 0.0));
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Structural

/// Row gather (embedding lookup / upsampling): out[i] = table[ids[i]].
/// Backward scatters into the table.
inline Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Tape& t = detail::tape_of(table);
  const std::size_t rows = table.rows(), c = table.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  auto tv = table.values();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + ids[i] * c, c, out.data() + i * c);
  }
  const std::size_t it = table.id();
  return t.push({ids.size(), c}, std::move(out), {table},
                [it, c, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Tape& tp, std::size_t o) {
                  auto g = tp.grad(o);
                  auto gt = tp.grad_mut(it);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
                });
}

inline Var embedding(Var table, std::span<const std::uint32_t> tokens) {
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  return gather_rows(table, ids);
}

/// Columns [begin, begin + width) of every row.
inline Var slice_cols(Var a, std::size_t begin, std::size_t width) {
  Tape& t = detail::tape_of(a);
  const std::size_t r = a.rows(), c = a.cols();
  if (width == 0 || begin + width > c) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + width) +
                         ") outside " + to_string(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(r * width);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(av.data() + i * c + begin, width, out.data() + i * width);
  const std::size_t ia = a.id();
  return t.push({r, width}, std::move(out), {a}, [ia, r, c, begin, width](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j) ga[i * c + begin + j] += g[i * width + j];
  });
}

/// Rows [begin, begin + count).
inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = detail::tape_of(a);
  const std::size_t r = a.rows(), c = a.cols();
  if (count == 0 || begin + count > r) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + to_string(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(av.begin() + begin * c, av.begin() + (begin + count) * c);
  const std::size_t ia = a.id();
  return t.push({count, c}, std::move(out), {a}, [ia, c, begin](Tape& tp, std::size_t o) {
    auto g = tp.grad(o);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
  });
}

/// Side-by-side concatenation; all parts share the row count.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = detail::tape_of(parts[0]);
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_cols: operands live on different tapes");
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts[0].shape()) + " vs " +
                           to_string(p.shape()));
    }
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * w, w, out.data() + i * c + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return t.push({r, c}, std::move(out), parts,
                [r, c, ids = std::move(ids), offsets = std::move(offsets), widths = std::move(widths)](
                    Tape& tp, std::size_t o) {
                  auto g = tp.grad(o);
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (!tp.requires_grad(ids[k])) continue;
                    auto gp = tp.grad_mut(ids[k]);
                    const std::size_t w = widths[k];
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * c + offsets[k] + j];
                  }
                });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Vertical concatenation; all parts share the column count.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = detail::tape_of(parts[0]);
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_rows: operands live on different tapes");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + to_string(parts[0].shape()) + " vs " +
                           to_string(p.shape()));
    }
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    offsets.push_back(out.size());
    auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  return t.push({r, c}, std::move(out), parts,
                [ids = std::move(ids), offsets = std::move(offsets)](Tape& tp, std::size_t o) {
                  auto g = tp.grad(o);
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (!tp.requires_grad(ids[k])) continue;
                    auto gp = tp.grad_mut(ids[k]);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
                  }
                });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

}  // namespace nacap
