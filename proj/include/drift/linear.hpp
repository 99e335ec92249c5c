#pragma once

// Matrix-free linear maps with adjoints, graph-aware application, and a
// conjugate-gradient solver that differentiates by unrolling its own
// iterations.

#include "drift/tensor.hpp"

namespace drift {

struct LinearMap {
  std::string name;
  Shape domain, range;
  std::function<std::vector<double>(const std::vector<double>&)> fwd, adj;
};

using LinearMapPtr = std::shared_ptr<const LinearMap>;

inline Tensor apply_map(const LinearMapPtr& m, const Tensor& x) {
  if (x.shape() != m->domain)
    op_error("apply_map", m->name + " expects domain " + shape_str(m->domain) + ", got " +
                              shape_str(x.shape()));
  auto out = m->fwd(x.value());
  return make_node("apply_map", m->range, std::move(out), {x}, [m](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    auto g = m->adj(self.grad);
    for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
  });
}

inline Tensor apply_adjoint(const LinearMapPtr& m, const Tensor& y) {
  if (y.shape() != m->range)
    op_error("apply_adjoint", m->name + " expects range " + shape_str(m->range) + ", got " +
                                  shape_str(y.shape()));
  auto out = m->adj(y.value());
  return make_node("apply_adjoint", m->domain, std::move(out), {y}, [m](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    auto g = m->fwd(self.grad);
    for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
  });
}

// a symmetric positive definite operator presented as a tensor function
using LinOp = std::function<Tensor(const Tensor&)>;

struct CgInfo {
  std::vector<double> residuals;  // best residual norm seen after each iteration
  int iters = 0;
};

// Solves op(x) = b. Keeps the best-residual iterate, so the reported
// residual sequence never increases. tol is an absolute threshold on
// ||b - op(x)||; tol = 0 runs all max_iter iterations. Differentiable when
// inputs carry grad: the recorded iterations are unrolled by backward().
inline Tensor cg_solve(const LinOp& op, const Tensor& b, const Tensor& x0, int max_iter,
                       double tol = 0.0, CgInfo* info = nullptr) {
  if (b.shape() != x0.shape())
    op_error("cg_solve", "b " + shape_str(b.shape()) + " vs x0 " + shape_str(x0.shape()));
  Tensor x = x0;
  Tensor r = sub(b, op(x));
  Tensor p = r;
  Tensor rr = sumsq(r);
  double res = std::sqrt(rr.item());
  if (!std::isfinite(res)) throw std::runtime_error("cg_solve: non-finite initial residual");
  Tensor best_x = x;
  double best_res = res;
  int it = 0;
  for (; it < max_iter; ++it) {
    if (tol > 0 && best_res <= tol) break;
    if (rr.item() == 0.0) break;
    Tensor Ap = op(p);
    Tensor pAp = dot(p, Ap);
    if (pAp.item() == 0.0) break;
    Tensor alpha = div(rr, pAp);
    x = add(x, mul(p, alpha));
    r = sub(r, mul(Ap, alpha));
    Tensor rr_new = sumsq(r);
    res = std::sqrt(rr_new.item());
    if (!std::isfinite(res)) throw std::runtime_error("cg_solve: non-finite residual");
    if (res < best_res) {
      best_res = res;
      best_x = x;
    }
    if (info) info->residuals.push_back(best_res);
    Tensor beta = div(rr_new, rr);
    p = add(r, mul(p, beta));
    rr = rr_new;
  }
  if (info) info->iters = it;
  return best_x;
}

// least-squares solve x = argmin ||A x - y||^2 + damping ||x||^2 via CG on
// the damped normal equations; the workhorse behind pseudo-inverse
// applications
inline Tensor pinv_apply(const LinearMapPtr& A, const Tensor& y, int max_iter = 30,
                         double damping = 1e-6, double tol = 0.0, CgInfo* info = nullptr) {
  Tensor rhs = apply_adjoint(A, y);
  LinOp normal = [&A, damping](const Tensor& v) {
    return add(apply_adjoint(A, apply_map(A, v)), scalar_mul(v, damping));
  };
  return cg_solve(normal, rhs, Tensor::zeros(A->domain), max_iter, tol, info);
}

}  // namespace drift
