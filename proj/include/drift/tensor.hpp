#pragma once

// Reverse-mode autodiff over dense double tensors. Ops record a dynamic
// graph; backward() replays it in reverse topological order. Single
// threaded, row-major, shapes checked eagerly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drift/random.hpp"

namespace drift {

using Shape = std::vector<int64_t>;
using EigenRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void op_error(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_mode() { return detail::grad_enabled; }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// sets graph recording to an explicit state for a scope, in either direction
struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool on) : prev(detail::grad_enabled) { detail::grad_enabled = on; }
  ~GradModeGuard() { detail::grad_enabled = prev; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> value) {
    if (shape_numel(shape) != static_cast<int64_t>(value.size()))
      op_error("Tensor", "shape " + shape_str(shape) + " does not match " +
                             std::to_string(value.size()) + " values");
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->value = std::move(value);
  }

  static Tensor zeros(Shape shape) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<double> v(n);
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }

  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& raw() { return impl_->value; }  // leaf mutation only
  double item() const {
    if (numel() != 1) op_error("item", "tensor has " + std::to_string(numel()) + " elements");
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }
  const std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

  // Cuts the graph: a fresh leaf with copied values.
  Tensor detach() const { return Tensor(impl_->shape, impl_->value); }

  bool all_finite() const {
    for (double v : impl_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

inline Tensor make_node(const char* op, Shape shape, std::vector<double> value,
                        const std::vector<Tensor>& parents,
                        std::function<void(TensorImpl&)> backward_fn) {
  Tensor out(std::move(shape), std::move(value));
  bool track = grad_mode();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    auto im = out.impl();
    im->requires_grad = true;
    im->op = op;
    im->parents.reserve(parents.size());
    for (const auto& p : parents) im->parents.push_back(p.impl());
    im->backward_fn = std::move(backward_fn);
  }
  return out;
}

// ---- backward ----------------------------------------------------------

inline void backward(const Tensor& root) {
  if (root.numel() != 1) op_error("backward", "root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) op_error("backward", "root does not require grad");

  // iterative post-order DFS; parent order fixes the topological order
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorImpl* n : topo) {
    n->ensure_grad();
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  root.impl()->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

namespace detail {
inline void accumulate(TensorImpl& dst, const std::vector<double>& g) {
  if (!dst.requires_grad) return;
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}
}  // namespace detail

// ---- elementwise binary ops --------------------------------------------

namespace detail {
enum class BinMode { same, left_scalar, right_scalar };

inline BinMode bin_mode(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BinMode::same;
  if (a.numel() == 1) return BinMode::left_scalar;
  if (b.numel() == 1) return BinMode::right_scalar;
  op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto mode = detail::bin_mode("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = (mode == detail::BinMode::left_scalar) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(shape_numel(shape)));
  for (size_t i = 0; i < out.size(); ++i) {
    double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
    double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
    out[i] = x + y;
  }
  return make_node("add", shape, std::move(out), {a, b}, [mode](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      if (mode == detail::BinMode::left_scalar) {
        double s = 0;
        for (double g : self.grad) s += g;
        pa.grad[0] += s;
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (mode == detail::BinMode::right_scalar) {
        double s = 0;
        for (double g : self.grad) s += g;
        pb.grad[0] += s;
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto mode = detail::bin_mode("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = (mode == detail::BinMode::left_scalar) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(shape_numel(shape)));
  for (size_t i = 0; i < out.size(); ++i) {
    double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
    double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
    out[i] = x - y;
  }
  return make_node("sub", shape, std::move(out), {a, b}, [mode](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      if (mode == detail::BinMode::left_scalar) {
        double s = 0;
        for (double g : self.grad) s += g;
        pa.grad[0] += s;
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (mode == detail::BinMode::right_scalar) {
        double s = 0;
        for (double g : self.grad) s += g;
        pb.grad[0] -= s;
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
      }
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto mode = detail::bin_mode("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = (mode == detail::BinMode::left_scalar) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(shape_numel(shape)));
  for (size_t i = 0; i < out.size(); ++i) {
    double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
    double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
    out[i] = x * y;
  }
  return make_node("mul", shape, std::move(out), {a, b}, [mode](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& av = pa.value;
    const auto& bv = pb.value;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
        double g = self.grad[i] * y;
        if (mode == detail::BinMode::left_scalar)
          pa.grad[0] += g;
        else
          pa.grad[i] += g;
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
        double g = self.grad[i] * x;
        if (mode == detail::BinMode::right_scalar)
          pb.grad[0] += g;
        else
          pb.grad[i] += g;
      }
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  auto mode = detail::bin_mode("div", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = (mode == detail::BinMode::left_scalar) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(shape_numel(shape)));
  for (size_t i = 0; i < out.size(); ++i) {
    double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
    double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
    out[i] = x / y;
  }
  return make_node("div", shape, std::move(out), {a, b}, [mode](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& av = pa.value;
    const auto& bv = pb.value;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
        double g = self.grad[i] / y;
        if (mode == detail::BinMode::left_scalar)
          pa.grad[0] += g;
        else
          pa.grad[i] += g;
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double x = (mode == detail::BinMode::left_scalar) ? av[0] : av[i];
        double y = (mode == detail::BinMode::right_scalar) ? bv[0] : bv[i];
        double g = -self.grad[i] * x / (y * y);
        if (mode == detail::BinMode::right_scalar)
          pb.grad[0] += g;
        else
          pb.grad[i] += g;
      }
    }
  });
}

inline Tensor scalar_mul(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (auto& v : out) v *= c;
  return make_node("scalar_mul", a.shape(), std::move(out), {a}, [c](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scalar_mul(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scalar_mul(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- elementwise unary ops ---------------------------------------------

namespace detail {
template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd f, Bwd dfdx) {
  std::vector<double> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  return make_node(name, a.shape(), std::move(out), {a}, [dfdx](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}
}  // namespace detail

inline Tensor silu(const Tensor& a) {
  return detail::unary_op(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor vsin(const Tensor& a) {
  return detail::unary_op(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

inline Tensor vcos(const Tensor& a) {
  return detail::unary_op(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

inline Tensor vsqrt(const Tensor& a) {
  return detail::unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

// soft threshold: sign(x) * max(|x| - kappa, 0)
inline Tensor shrink(const Tensor& a, double kappa) {
  std::vector<double> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    double m = std::abs(x) - kappa;
    out[i] = m > 0 ? (x > 0 ? m : -m) : 0.0;
  }
  return make_node("shrink", a.shape(), std::move(out), {a}, [kappa](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (std::abs(p.value[i]) > kappa) p.grad[i] += self.grad[i];
  });
}

// ---- reductions ----------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.value()) s += v;
  return make_node("sum", {1}, {s}, {a}, [](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

inline Tensor mean(const Tensor& a) {
  double s = 0;
  for (double v : a.value()) s += v;
  double n = static_cast<double>(a.numel());
  return make_node("mean", {1}, {s / n}, {a}, [n](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0] / n;
    for (auto& v : p.grad) v += g;
  });
}

inline Tensor sumsq(const Tensor& a) {
  double s = 0;
  for (double v : a.value()) s += v * v;
  return make_node("sumsq", {1}, {s}, {a}, [](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = 2.0 * self.grad[0];
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g * p.value[i];
  });
}

inline Tensor l1norm(const Tensor& a) {
  double s = 0;
  for (double v : a.value()) s += std::abs(v);
  return make_node("l1norm", {1}, {s}, {a}, [](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    for (size_t i = 0; i < p.grad.size(); ++i) {
      double x = p.value[i];
      p.grad[i] += g * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
    }
  });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) op_error("dot", "size mismatch");
  return sum(mul(a, b));
}

// ---- shape ops -----------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    op_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  return make_node("reshape", std::move(shape), a.value(), {a}, [](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) op_error("transpose2d", "expected rank 2, got " + shape_str(a.shape()));
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.value()[static_cast<size_t>(i * n + j)];
  return make_node("transpose2d", {n, m}, std::move(out), {a}, [m, n](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        p.grad[static_cast<size_t>(i * n + j)] += self.grad[static_cast<size_t>(j * m + i)];
  });
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.rank()) op_error("slice", "axis out of range");
  int64_t d = a.dim(axis);
  if (start < 0 || len <= 0 || start + len > d)
    op_error("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of bounds for dim " + std::to_string(d));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  Shape shape = a.shape();
  shape[static_cast<size_t>(axis)] = len;
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const double* src = a.value().data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* s = src + (o * d + start) * inner;
    double* t = out.data() + o * len * inner;
    std::copy(s, s + len * inner, t);
  }
  return make_node("slice", std::move(shape), std::move(out), {a},
                   [axis, start, len, outer, inner, d](TensorImpl& self) {
                     (void)axis;
                     auto& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     for (int64_t o = 0; o < outer; ++o) {
                       const double* g = self.grad.data() + o * len * inner;
                       double* t = p.grad.data() + (o * d + start) * inner;
                       for (int64_t i = 0; i < len * inner; ++i) t[i] += g[i];
                     }
                   });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) op_error("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) op_error("concat", "axis out of range");
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s0.size())) op_error("concat", "rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != s0[static_cast<size_t>(i)])
        op_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    total += p.dim(axis);
  }
  Shape shape = s0;
  shape[static_cast<size_t>(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s0.size()); ++i) inner *= s0[static_cast<size_t>(i)];
  std::vector<double> out(static_cast<size_t>(outer * total * inner));
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t len = p.dim(axis);
    lens.push_back(len);
    for (int64_t o = 0; o < outer; ++o) {
      const double* s = p.value().data() + o * len * inner;
      double* t = out.data() + (o * total + off) * inner;
      std::copy(s, s + len * inner, t);
    }
    off += len;
  }
  return make_node("concat", std::move(shape), std::move(out), parts,
                   [lens, outer, inner, total](TensorImpl& self) {
                     int64_t off = 0;
                     for (size_t k = 0; k < self.parents.size(); ++k) {
                       auto& p = *self.parents[k];
                       int64_t len = lens[k];
                       if (p.requires_grad) {
                         p.ensure_grad();
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* g = self.grad.data() + (o * total + off) * inner;
                           double* t = p.grad.data() + o * len * inner;
                           for (int64_t i = 0; i < len * inner; ++i) t[i] += g[i];
                         }
                       }
                       off += len;
                     }
                   });
}

namespace detail {
inline void bcast_copy(const double* src, double* dst, const Shape& sshape, const Shape& dshape,
                       const std::vector<int64_t>& sstride, const std::vector<int64_t>& dstride,
                       size_t axis, int64_t soff, int64_t doff) {
  if (axis == dshape.size()) {
    dst[doff] = src[soff];
    return;
  }
  int64_t sstep = (sshape[axis] == 1) ? 0 : sstride[axis];
  for (int64_t i = 0; i < dshape[axis]; ++i)
    bcast_copy(src, dst, sshape, dshape, sstride, dstride, axis + 1, soff + i * sstep,
               doff + i * dstride[axis]);
}
inline void bcast_reduce(const double* g, double* acc, const Shape& sshape, const Shape& dshape,
                         const std::vector<int64_t>& sstride, const std::vector<int64_t>& dstride,
                         size_t axis, int64_t soff, int64_t doff) {
  if (axis == dshape.size()) {
    acc[soff] += g[doff];
    return;
  }
  int64_t sstep = (sshape[axis] == 1) ? 0 : sstride[axis];
  for (int64_t i = 0; i < dshape[axis]; ++i)
    bcast_reduce(g, acc, sshape, dshape, sstride, dstride, axis + 1, soff + i * sstep,
                 doff + i * dstride[axis]);
}
inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}
}  // namespace detail

inline Tensor broadcast_to(const Tensor& a, Shape target) {
  const Shape& s = a.shape();
  if (s.size() != target.size())
    op_error("broadcast_to", "rank mismatch " + shape_str(s) + " vs " + shape_str(target));
  for (size_t i = 0; i < s.size(); ++i)
    if (s[i] != target[i] && s[i] != 1)
      op_error("broadcast_to", shape_str(s) + " cannot broadcast to " + shape_str(target));
  auto sstride = detail::row_major_strides(s);
  auto dstride = detail::row_major_strides(target);
  std::vector<double> out(static_cast<size_t>(shape_numel(target)));
  detail::bcast_copy(a.value().data(), out.data(), s, target, sstride, dstride, 0, 0, 0);
  Shape src_shape = s;
  return make_node("broadcast_to", std::move(target), std::move(out), {a},
                   [src_shape, sstride, dstride](TensorImpl& self) {
                     auto& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     detail::bcast_reduce(self.grad.data(), p.grad.data(), src_shape, self.shape,
                                          sstride, dstride, 0, 0, 0);
                   });
}

// ---- matmul ---------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    op_error("matmul", "expected rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) op_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n));
  {
    Eigen::Map<const EigenRM> A(a.value().data(), m, k), B(b.value().data(), k, n);
    Eigen::Map<EigenRM> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return make_node("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    Eigen::Map<const EigenRM> G(self.grad.data(), m, n);
    if (pa.requires_grad) {
      pa.ensure_grad();
      Eigen::Map<const EigenRM> B(pb.value.data(), k, n);
      Eigen::Map<EigenRM> GA(pa.grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      Eigen::Map<const EigenRM> A(pa.value.data(), m, k);
      Eigen::Map<EigenRM> GB(pb.grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

inline Tensor stack0(const std::vector<Tensor>& parts) {
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

}  // namespace drift
