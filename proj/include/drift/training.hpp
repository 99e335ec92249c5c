#pragma once

// Denoising score-matching training loop in noise-prediction form.

#include <iostream>

#include "drift/denoiser.hpp"
#include "drift/optim.hpp"
#include "drift/phantoms.hpp"
#include "drift/schedule.hpp"

namespace drift {

struct TrainConfig {
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  uint64_t seed = 0;
  int log_every = 0;  // 0: silent
};

// minimizes E || eps_theta(x_t, t) - eps ||^2 with Adam; returns the loss
// trace, one value per step
inline std::vector<double> dsm_train(Denoiser& d, const std::function<Tensor(Rng&)>& sample_x0,
                                     const NoiseSchedule& s, const TrainConfig& cfg,
                                     std::ostream* log = nullptr) {
  if (cfg.steps < 1 || cfg.batch < 1) op_error("dsm_train", "steps and batch must be positive");
  d.set_base_trainable(true);
  AdamW opt(d.base_params(), cfg.lr);  // zero weight decay: plain Adam
  Rng rng(mix_seed(cfg.seed, 0x747261696e));
  int C = d.config().in_channels, S = d.config().image_size;
  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> batch_x(static_cast<size_t>(cfg.batch) * C * S * S);
    std::vector<int> ts(static_cast<size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      Tensor x0 = sample_x0(rng);
      if (x0.numel() != C * S * S)
        op_error("dsm_train", "sampler produced " + shape_str(x0.shape()));
      std::copy(x0.value().begin(), x0.value().end(),
                batch_x.begin() + static_cast<int64_t>(b) * C * S * S);
      ts[static_cast<size_t>(b)] = 1 + static_cast<int>(rng.uniform_int(s.T));
    }
    Tensor x0b({cfg.batch, C, S, S}, std::move(batch_x));
    Tensor eps = Tensor::randn(x0b.shape(), rng);
    std::vector<double> xt(x0b.numel());
    for (int b = 0; b < cfg.batch; ++b) {
      double ab = s.abar(ts[static_cast<size_t>(b)]);
      double sa = std::sqrt(ab), sb = std::sqrt(1 - ab);
      for (int64_t i = 0; i < C * S * S; ++i) {
        int64_t k = static_cast<int64_t>(b) * C * S * S + i;
        xt[static_cast<size_t>(k)] =
            sa * x0b.value()[static_cast<size_t>(k)] + sb * eps.value()[static_cast<size_t>(k)];
      }
    }
    Tensor x_t(x0b.shape(), std::move(xt));
    Tensor pred = d.forward(x_t, ts, s.T);
    Tensor loss = scalar_mul(sumsq(sub(pred, eps)), 1.0 / static_cast<double>(pred.numel()));
    double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("dsm_train: non-finite loss at step " +
                                                     std::to_string(step));
    opt.zero_grad();
    backward(loss);
    opt.step();
    losses.push_back(lv);
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      double avg = 0;
      int n = std::min<int>(50, static_cast<int>(losses.size()));
      for (int i = 0; i < n; ++i) avg += losses[losses.size() - 1 - static_cast<size_t>(i)] / n;
      (*log) << "step " << step << " loss " << lv << " avg50 " << avg << "\n";
    }
  }
  return losses;
}

}  // namespace drift
