#pragma once

// Central-difference gradient audit for scalar-valued tensor functions.
// Coordinates where the function is locally non-smooth (detected by a
// large second difference) are excluded and reported instead of failing.

#include "drift/tensor.hpp"

namespace drift {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  std::vector<int64_t> excluded;  // non-smooth coordinates
  int64_t checked = 0;
};

inline GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& at,
                                  double eps = 1e-4) {
  Tensor x = at.detach();
  x.set_requires_grad(true);
  Tensor out = f(x);
  if (out.numel() != 1) op_error("grad_check", "function output must be scalar");
  if (!out.all_finite()) throw std::runtime_error("grad_check: non-finite function value");
  backward(out);
  std::vector<double> analytic = x.grad();
  double f0 = out.item();

  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard ng;
    Tensor p(at.shape(), v);
    Tensor r = f(p);
    if (r.numel() != 1) op_error("grad_check", "function output must be scalar");
    double val = r.item();
    if (!std::isfinite(val)) throw std::runtime_error("grad_check: non-finite function value");
    return val;
  };

  GradCheckResult res;
  std::vector<double> v = at.value();
  for (size_t i = 0; i < v.size(); ++i) {
    double orig = v[i];
    v[i] = orig + eps;
    double fp = eval(v);
    v[i] = orig - eps;
    double fm = eval(v);
    v[i] = orig;
    double diff = (fp - fm) / (2 * eps);
    // at a kink the one-sided slopes disagree and the second difference is
    // O(eps) instead of O(eps^2)
    double curvature = std::abs(fp + fm - 2 * f0) / eps;
    if (curvature > 0.05 * (std::abs(diff) + 1.0)) {
      res.excluded.push_back(static_cast<int64_t>(i));
      continue;
    }
    if (std::abs(analytic[i]) < 1e-8 && std::abs(diff) < 1e-8) {
      // both sides vanish: central differences cannot resolve the ratio
      // below their own truncation noise
      ++res.checked;
      continue;
    }
    double rel = std::abs(analytic[i] - diff) / (std::abs(analytic[i]) + std::abs(diff) + 1e-12);
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_coord = static_cast<int64_t>(i);
    }
    ++res.checked;
  }
  return res;
}

}  // namespace drift
