#pragma once

// Variance-preserving noise schedule, forward perturbation, posterior-mean
// conversion, and the DDIM update used by all samplers.

#include "drift/tensor.hpp"

namespace drift {

struct NoiseSchedule {
  int T = 1000;
  double beta_min = 1e-4, beta_max = 2e-2;
  int nfe = 50;
  double eta = 0.85;
  int t_start = 980;
  std::vector<double> beta;       // index 1..T
  std::vector<double> alpha_bar;  // index 0..T, alpha_bar[0] = 1

  double abar(int t) const {
    if (t < 0 || t > T) op_error("abar", "t = " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    return alpha_bar[static_cast<size_t>(t)];
  }

  // descending sub-schedule, nfe values uniformly spaced over [1, t_start]
  std::vector<int> taus() const {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(nfe));
    if (nfe == 1) {
      out.push_back(t_start);
      return out;
    }
    for (int i = 0; i < nfe; ++i) {
      double f = static_cast<double>(nfe - 1 - i) / static_cast<double>(nfe - 1);
      int t = 1 + static_cast<int>(std::llround(f * (t_start - 1)));
      if (!out.empty() && t >= out.back()) t = out.back() - 1;
      if (t < 1) break;
      out.push_back(t);
    }
    return out;
  }
};

inline NoiseSchedule make_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 2e-2,
                                   int nfe = 50, double eta = 0.85, int t_start = 980) {
  if (T < 1) op_error("make_schedule", "T must be positive");
  if (beta_min <= 0 || beta_max >= 1 || beta_min > beta_max)
    op_error("make_schedule", "need 0 < beta_min <= beta_max < 1");
  if (eta < 0 || eta > 1) op_error("make_schedule", "eta must lie in [0,1]");
  if (t_start < 1 || t_start > T) op_error("make_schedule", "t_start outside [1,T]");
  if (nfe < 1 || nfe > t_start) op_error("make_schedule", "nfe outside [1,t_start]");
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.nfe = nfe;
  s.eta = eta;
  s.t_start = t_start;
  s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    double b = (T == 1) ? beta_min : beta_min + (beta_max - beta_min) * (t - 1) / double(T - 1);
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * (1.0 - b);
  }
  return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Tensor perturb(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (eps.shape() != x0.shape()) op_error("perturb", "eps shape mismatch");
  double ab = s.abar(t);
  return add(scalar_mul(x0, std::sqrt(ab)), scalar_mul(eps, std::sqrt(1.0 - ab)));
}

// posterior mean from predicted noise: (x_t - sqrt(1-abar_t) eps) / sqrt(abar_t)
inline Tensor tweedie_mean(const Tensor& x_t, const Tensor& eps_theta, int t,
                           const NoiseSchedule& s) {
  if (eps_theta.shape() != x_t.shape()) op_error("tweedie_mean", "eps shape mismatch");
  double ab = s.abar(t);
  return scalar_mul(sub(x_t, scalar_mul(eps_theta, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

// x_{t_prev} = sqrt(abar_prev) x0 + sqrt(1 - abar_prev) (eta z + (1-eta) eps_theta)
inline Tensor ddim_step(const Tensor& x_t, const Tensor& x0, const Tensor& eps_theta, int t,
                        int t_prev, const NoiseSchedule& s, const Tensor& noise = Tensor()) {
  if (t_prev >= t) op_error("ddim_step", "t_prev must be below t");
  if (x0.shape() != x_t.shape() || eps_theta.shape() != x_t.shape())
    op_error("ddim_step", "shape mismatch");
  double ab = s.abar(t_prev);
  Tensor dir;
  if (s.eta > 0.0) {
    if (!noise.defined()) op_error("ddim_step", "eta > 0 needs a noise sample");
    if (noise.shape() != x_t.shape()) op_error("ddim_step", "noise shape mismatch");
    dir = add(scalar_mul(noise, s.eta), scalar_mul(eps_theta, 1.0 - s.eta));
  } else {
    dir = eps_theta;
  }
  return add(scalar_mul(x0, std::sqrt(ab)), scalar_mul(dir, std::sqrt(1.0 - ab)));
}

}  // namespace drift
