#pragma once

// Test-time adaptation of a frozen denoiser to out-of-distribution volumes.
// A low-rank adapter is optimized on measurement consistency while the
// reverse diffusion runs: either one adapter per slice (independent runs) or
// one adapter shared across the volume, refreshed each timestep from a small
// Monte-Carlo batch of slices. A Reptile-style interpolation turns the shared
// run into a meta-initialization that per-slice runs can fine-tune.

#include <chrono>
#include <limits>

#include "drift/approximators.hpp"
#include "drift/optim.hpp"

namespace drift {

enum class SamplingMode { random, neighbor };
enum class InitMode { slerp_pinv, noise };

inline const char* sampling_mode_name(SamplingMode m) {
  return m == SamplingMode::random ? "random" : "neighbor";
}

struct AdaptConfig {
  int K = 6;        // Monte-Carlo slice count per timestep
  int L = 10;       // optimizer steps per adapted timestep
  double lr = 1e-3;
  int zeta = 40;    // adapt only while zeta <= t <= T - zeta
  SamplingMode sampling_mode = SamplingMode::random;
  ApproximatorConfig approximator;
  int adapt_cg = 0;  // solver budget for the adaptation loss; 0 = same as sampling
  int lora_rank = 4;
  double lora_scale = 1.0;
  InitMode init = InitMode::slerp_pinv;
  uint64_t seed = 0;
  // meta phase
  double alpha_start = 1.0;
  double alpha_end = 0.5;
  int finetune_L = 0;  // per-slice fine-tune budget; 0 = reuse L
};

inline void validate_adapt_config(const AdaptConfig& cfg, const NoiseSchedule& s) {
  if (cfg.K < 1) op_error("AdaptConfig", "K must be at least 1");
  if (cfg.L < 1) op_error("AdaptConfig", "L must be at least 1");
  if (cfg.lr < 0) op_error("AdaptConfig", "lr must be nonnegative");
  if (cfg.zeta < 0 || 2 * cfg.zeta >= s.t_start)
    op_error("AdaptConfig", "zeta must satisfy 0 <= zeta < t_start/2");
  if (cfg.lora_rank < 1) op_error("AdaptConfig", "lora_rank must be positive");
  if (cfg.adapt_cg < 0) op_error("AdaptConfig", "adapt_cg must be nonnegative");
  validate_approx_config(cfg.approximator);
}

struct RunStats {
  long adapt_steps = 0;  // optimizer updates
  long adapt_cg_iters = 0;
  long sample_cg_iters = 0;
  long denoiser_forwards = 0;
  double seconds = 0;
};

struct AdaptLossRow {
  int t;
  int inner;
  double loss;
};

using AdapterState = std::vector<std::vector<double>>;

struct VolumeRecon {
  Tensor X0;                           // [N, C, S, S]
  std::vector<AdapterState> adapters;  // per slice, or a single shared state
  RunStats stats;
  std::vector<AdaptLossRow> trace;
  std::vector<double> final_slice_losses;  // at the last adapted timestep
  std::vector<double> ref_slice_losses;    // same point, reference adapters
};

// ---- building blocks --------------------------------------------------------

inline bool horizon_gate(int t, int zeta, int T) { return t >= zeta && t <= T - zeta; }

// interpolate along the great circle of the flattened unit vectors, with the
// norm following the f-weighted geometric mean of the endpoint norms so both
// endpoints are reproduced exactly
inline Tensor slerp(const Tensor& a, const Tensor& b, double f) {
  if (a.shape() != b.shape()) op_error("slerp", "endpoint shapes differ");
  if (f < 0 || f > 1) op_error("slerp", "f must lie in [0,1]");
  if (f == 0.0) return a.detach();
  if (f == 1.0) return b.detach();
  NoGradGuard ng;
  double na = 0, nb = 0, d = 0;
  for (size_t i = 0; i < a.value().size(); ++i) {
    na += a.value()[i] * a.value()[i];
    nb += b.value()[i] * b.value()[i];
    d += a.value()[i] * b.value()[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0 || nb == 0) op_error("slerp", "endpoints must be nonzero");
  double c = std::max(-1.0, std::min(1.0, d / (na * nb)));
  double theta = std::acos(c);
  double norm = std::pow(na, 1.0 - f) * std::pow(nb, f);
  std::vector<double> out(a.value().size());
  if (std::sin(theta) < 1e-7) {
    // parallel endpoints reduce to a straight line; antiparallel ones have no
    // unique great circle, so fall back to linear interpolation there too
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = (1.0 - f) * a.value()[i] + f * b.value()[i];
    return Tensor(a.shape(), std::move(out));
  }
  double wa = std::sin((1.0 - f) * theta) / std::sin(theta) / na;
  double wb = std::sin(f * theta) / std::sin(theta) / nb;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = norm * (wa * a.value()[i] + wb * b.value()[i]);
  return Tensor(a.shape(), std::move(out));
}

// start the volume at t_start: damped least-squares content plus noise that
// rotates smoothly from one endpoint draw to another across the stack
inline Tensor slerp_init(const Tensor& Y, const OperatorSpec& spec, const NoiseSchedule& s,
                         uint64_t seed, int pinv_iters = 30) {
  NoGradGuard ng;
  int64_t N = Y.dim(0);
  auto A = make_linear_map(spec);
  Rng rng(mix_seed(seed, 0x736c6572));
  Tensor e1 = Tensor::randn(A->domain, rng);
  Tensor eN = Tensor::randn(A->domain, rng);
  double sa = std::sqrt(s.abar(s.t_start));
  double sb = std::sqrt(1.0 - s.abar(s.t_start));
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    double f = N > 1 ? static_cast<double>(i) / static_cast<double>(N - 1) : 0.0;
    Tensor yi = reshape(slice(Y, 0, i, 1), A->range);
    Tensor content = pinv_apply(A, yi, pinv_iters);
    rows.push_back(add(scalar_mul(content, sa), scalar_mul(slerp(e1, eN, f), sb)));
  }
  return stack0(rows);
}

inline Tensor noise_init(const Shape& domain, int64_t N, uint64_t seed) {
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i), 0x696e6974));
    rows.push_back(Tensor::randn(domain, rng));
  }
  return stack0(rows);
}

inline std::vector<int> mc_sample(int N, int K, SamplingMode mode, Rng& rng) {
  if (K < 1 || K > N) op_error("mc_sample", "K must lie in [1, N]");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(K));
  if (mode == SamplingMode::neighbor) {
    int start = static_cast<int>(rng.uniform_int(N - K + 1));
    for (int k = 0; k < K; ++k) out.push_back(start + k);
    return out;
  }
  std::vector<int> pool(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) pool[static_cast<size_t>(i)] = i;
  for (int k = 0; k < K; ++k) {
    int j = k + static_cast<int>(rng.uniform_int(N - k));
    std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
  }
  out.assign(pool.begin(), pool.begin() + K);
  std::sort(out.begin(), out.end());
  return out;
}

inline AdapterState reptile_update(const AdapterState& theta, const AdapterState& tilde,
                                   double alpha) {
  if (alpha <= 0 || alpha > 1) op_error("reptile_update", "alpha must lie in (0, 1]");
  if (theta.size() != tilde.size()) op_error("reptile_update", "states are incongruent");
  if (alpha == 1.0) return tilde;
  AdapterState out = theta;
  for (size_t i = 0; i < out.size(); ++i) {
    if (theta[i].size() != tilde[i].size()) op_error("reptile_update", "states are incongruent");
    for (size_t j = 0; j < out[i].size(); ++j)
      out[i][j] = theta[i][j] + alpha * (tilde[i][j] - theta[i][j]);
  }
  return out;
}

inline Tensor gather_rows(const Tensor& X, const std::vector<int>& idx) {
  std::vector<Tensor> rows;
  rows.reserve(idx.size());
  for (int i : idx) rows.push_back(slice(X, 0, i, 1));
  return concat(rows, 0);
}

// ---- engine ------------------------------------------------------------------

namespace detail {

// mean over the chosen slices of the squared residual of the guided estimate;
// this is the objective the adapters are trained on
inline Tensor adaptation_loss(Denoiser& net, const LinearMapPtr& A, const Tensor& X,
                              const Tensor& Y, const std::vector<int>& idx, int t,
                              const NoiseSchedule& s, const ApproximatorConfig& acfg,
                              ApproxStats* as) {
  if (acfg.method == ApproxMethod::mbir) {
    Tensor Xb = gather_rows(X, idx);
    Tensor Yb = gather_rows(Y, idx);
    auto est = mbir_mean(Xb, Yb, A, net, s, t, acfg, as, &idx);
    Tensor r = sub(Yb, volume_apply(A, est.x0));
    return scalar_mul(sumsq(r), 1.0 / static_cast<double>(idx.size()));
  }
  Tensor acc;
  for (size_t k = 0; k < idx.size(); ++k) {
    Tensor xi = reshape(slice(X, 0, idx[k], 1), A->domain);
    Tensor yi = reshape(slice(Y, 0, idx[k], 1), A->range);
    auto est = guided_mean(xi, yi, A, net, s, t, acfg, as);
    Tensor li = sumsq(sub(yi, apply_map(A, est.x0)));
    acc = k == 0 ? li : add(acc, li);
  }
  return scalar_mul(acc, 1.0 / static_cast<double>(idx.size()));
}

inline std::vector<double> slice_losses(Denoiser& net, const LinearMapPtr& A, const Tensor& X,
                                        const Tensor& Y, int t, const NoiseSchedule& s,
                                        const ApproximatorConfig& acfg) {
  NoGradGuard ng;
  int64_t N = X.dim(0);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(N));
  if (acfg.method == ApproxMethod::mbir) {
    auto est = mbir_mean(X, Y, A, net, s, t, acfg);
    for (int64_t i = 0; i < N; ++i) {
      Tensor yi = reshape(slice(Y, 0, i, 1), A->range);
      Tensor xi = reshape(slice(est.x0, 0, i, 1), A->domain);
      out.push_back(sumsq(sub(yi, apply_map(A, xi))).item());
    }
    return out;
  }
  for (int64_t i = 0; i < N; ++i) {
    std::vector<int> one = {static_cast<int>(i)};
    out.push_back(adaptation_loss(net, A, X, Y, one, t, s, acfg, nullptr).item());
  }
  return out;
}

inline double inner_loop(Denoiser& net, AdamW& opt, const LinearMapPtr& A, const Tensor& X,
                         const Tensor& Y, const std::vector<int>& idx, int t,
                         const NoiseSchedule& s, const ApproximatorConfig& acfg, int L,
                         std::vector<AdaptLossRow>* trace, RunStats& stats) {
  GradModeGuard gm(true);
  double last = std::numeric_limits<double>::quiet_NaN();
  for (int l = 0; l < L; ++l) {
    ApproxStats as;
    Tensor loss = adaptation_loss(net, A, X, Y, idx, t, s, acfg, &as);
    stats.adapt_cg_iters += as.cg_iters;
    stats.denoiser_forwards += as.denoiser_forwards;
    last = loss.item();
    if (!std::isfinite(last))
      throw std::runtime_error("adaptation loss diverged at t=" + std::to_string(t));
    if (trace) trace->push_back({t, l, last});
    opt.zero_grad();
    backward(loss);
    opt.step();
    stats.adapt_steps += 1;
  }
  return last;
}

inline Tensor volume_sample_step(Denoiser& net, const LinearMapPtr& A, const Tensor& X,
                                 const Tensor& Y, int t, int t_prev, const NoiseSchedule& s,
                                 const ApproximatorConfig& scfg, uint64_t seed, int slice_offset,
                                 RunStats& stats) {
  NoGradGuard ng;
  int64_t N = X.dim(0);
  ApproxStats as;
  auto step_noise = [&](int64_t i) {
    if (s.eta == 0.0) return Tensor();
    Rng rng(mix_seed(seed, static_cast<uint64_t>(slice_offset + i), static_cast<uint64_t>(t)));
    return Tensor::randn(A->domain, rng);
  };
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(N));
  if (scfg.method == ApproxMethod::mbir) {
    auto est = mbir_mean(X, Y, A, net, s, t, scfg, &as);
    for (int64_t i = 0; i < N; ++i) {
      Tensor xi = reshape(slice(X, 0, i, 1), A->domain);
      Tensor x0i = reshape(slice(est.x0, 0, i, 1), A->domain);
      Tensor ei = reshape(slice(est.eps, 0, i, 1), A->domain);
      rows.push_back(ddim_step(xi, x0i, ei, t, t_prev, s, step_noise(i)));
    }
  } else {
    for (int64_t i = 0; i < N; ++i) {
      Tensor xi = reshape(slice(X, 0, i, 1), A->domain);
      Tensor yi = reshape(slice(Y, 0, i, 1), A->range);
      auto est = guided_mean(xi, yi, A, net, s, t, scfg, &as);
      rows.push_back(ddim_step(xi, est.x0, est.eps, t, t_prev, s, step_noise(i)));
    }
  }
  stats.sample_cg_iters += as.cg_iters;
  stats.denoiser_forwards += as.denoiser_forwards;
  return stack0(rows);
}

struct EngineOptions {
  bool adapt = true;
  int K = 1;
  int L = 1;
  const AdapterState* init_adapters = nullptr;  // null: factory reset
  const AdapterState* ref_adapters = nullptr;   // extra loss probe at the end
  double alpha_start = 1.0;
  double alpha_end = 1.0;
  int slice_offset = 0;
};

struct EngineOut {
  Tensor X0;
  AdapterState adapters;
  std::vector<double> final_slice_losses;
  std::vector<double> ref_slice_losses;
};

inline void ensure_adapters(Denoiser& net, const AdaptConfig& cfg) {
  if (net.lora_rank() == 0)
    net.inject_lora(cfg.lora_rank, cfg.lora_scale, mix_seed(cfg.seed, 0x6c6f7261));
}

inline EngineOut run_volume(const Tensor& X_init, const Tensor& Y, const LinearMapPtr& A,
                            Denoiser& net, const NoiseSchedule& s, const AdaptConfig& cfg,
                            const EngineOptions& eo, RunStats& stats,
                            std::vector<AdaptLossRow>* trace) {
  auto t0 = std::chrono::steady_clock::now();
  ensure_adapters(net, cfg);
  if (eo.init_adapters)
    net.set_adapter_state(*eo.init_adapters);
  else
    net.reset_adapters();
  net.set_base_trainable(false);
  net.set_adapters_trainable(eo.adapt);
  AdamW opt(net.adapter_params(), cfg.lr);

  ApproximatorConfig scfg = cfg.approximator;
  ApproximatorConfig acfg = scfg;
  if (cfg.adapt_cg > 0) {
    acfg.M = cfg.adapt_cg;
    acfg.inner_cg_iters = cfg.adapt_cg;
  }

  auto taus = s.taus();
  std::vector<int> gated;
  if (eo.adapt)
    for (int t : taus)
      if (horizon_gate(t, cfg.zeta, s.T)) gated.push_back(t);

  Rng mc_rng(mix_seed(cfg.seed, 0x6d63726e));
  EngineOut out;
  Tensor X = X_init;
  int gate_pos = 0;
  for (size_t k = 0; k < taus.size(); ++k) {
    int t = taus[k];
    int t_prev = k + 1 < taus.size() ? taus[k + 1] : 0;
    if (eo.adapt && horizon_gate(t, cfg.zeta, s.T)) {
      std::vector<int> idx =
          mc_sample(static_cast<int>(X.dim(0)), eo.K, cfg.sampling_mode, mc_rng);
      double alpha = eo.alpha_start;
      if (gated.size() > 1)
        alpha += (eo.alpha_end - eo.alpha_start) * gate_pos /
                 static_cast<double>(gated.size() - 1);
      AdapterState before;
      bool interpolate = alpha != 1.0;
      if (interpolate) before = net.adapter_state();
      inner_loop(net, opt, A, X, Y, idx, t, s, acfg, eo.L, trace, stats);
      if (interpolate)
        net.set_adapter_state(reptile_update(before, net.adapter_state(), alpha));
      if (t == gated.back()) {
        out.final_slice_losses = slice_losses(net, A, X, Y, t, s, acfg);
        if (eo.ref_adapters) {
          AdapterState cur = net.adapter_state();
          net.set_adapter_state(*eo.ref_adapters);
          out.ref_slice_losses = slice_losses(net, A, X, Y, t, s, acfg);
          net.set_adapter_state(cur);
        }
      }
      ++gate_pos;
    }
    X = volume_sample_step(net, A, X, Y, t, t_prev, s, scfg, cfg.seed, eo.slice_offset, stats);
  }
  out.X0 = X;
  out.adapters = net.adapter_state();
  stats.seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline Tensor initial_state(const Tensor& Y, const OperatorSpec& spec, const NoiseSchedule& s,
                            const AdaptConfig& cfg) {
  if (cfg.init == InitMode::slerp_pinv) return slerp_init(Y, spec, s, cfg.seed);
  return noise_init(spec.domain_shape(), Y.dim(0), cfg.seed);
}

}  // namespace detail

// ---- public reconstruction drivers -------------------------------------------

// guided sampling without any adaptation
inline VolumeRecon sample_volume(const Tensor& Y, const OperatorSpec& spec, Denoiser& net,
                                 const NoiseSchedule& s, const AdaptConfig& cfg) {
  validate_adapt_config(cfg, s);
  VolumeRecon rec;
  auto A = make_linear_map(spec);
  detail::EngineOptions eo;
  eo.adapt = false;
  auto out = detail::run_volume(detail::initial_state(Y, spec, s, cfg), Y, A, net, s, cfg, eo,
                                rec.stats, nullptr);
  rec.X0 = out.X0;
  return rec;
}

// one adapter per slice, each slice reconstructed independently
inline VolumeRecon ddip_reconstruct(const Tensor& Y, const OperatorSpec& spec, Denoiser& net,
                                    const NoiseSchedule& s, const AdaptConfig& cfg,
                                    const AdapterState* init_adapters = nullptr) {
  validate_adapt_config(cfg, s);
  if (cfg.approximator.method == ApproxMethod::mbir)
    op_error("ddip_reconstruct", "slice-coupled estimator needs the shared-adapter driver");
  VolumeRecon rec;
  auto A = make_linear_map(spec);
  int64_t N = Y.dim(0);
  Tensor X_init = detail::initial_state(Y, spec, s, cfg);
  std::vector<Tensor> rows;
  const AdapterState ref = init_adapters ? *init_adapters : AdapterState();
  for (int64_t i = 0; i < N; ++i) {
    detail::EngineOptions eo;
    eo.adapt = true;
    eo.K = 1;
    eo.L = cfg.L;
    eo.slice_offset = static_cast<int>(i);
    eo.init_adapters = init_adapters;
    if (init_adapters) eo.ref_adapters = &ref;
    auto out = detail::run_volume(gather_rows(X_init, {static_cast<int>(i)}),
                                  gather_rows(Y, {static_cast<int>(i)}), A, net, s, cfg, eo,
                                  rec.stats, &rec.trace);
    rows.push_back(reshape(out.X0, A->domain));
    rec.adapters.push_back(out.adapters);
    for (double v : out.final_slice_losses) rec.final_slice_losses.push_back(v);
    for (double v : out.ref_slice_losses) rec.ref_slice_losses.push_back(v);
  }
  rec.X0 = stack0(rows);
  net.reset_adapters();
  return rec;
}

// one shared adapter for the whole volume, refreshed from a Monte-Carlo slice
// batch at every adapted timestep
inline VolumeRecon d3ip_reconstruct(const Tensor& Y, const OperatorSpec& spec, Denoiser& net,
                                    const NoiseSchedule& s, const AdaptConfig& cfg,
                                    bool meta_phase = false,
                                    const AdapterState* init_adapters = nullptr) {
  validate_adapt_config(cfg, s);
  int64_t N = Y.dim(0);
  if (cfg.K > N) op_error("d3ip_reconstruct", "K exceeds the slice count");
  if (cfg.approximator.method == ApproxMethod::mbir) {
    if (cfg.sampling_mode != SamplingMode::neighbor)
      op_error("d3ip_reconstruct", "slice-coupled estimator needs neighbor sampling");
    if (cfg.K < 2) op_error("d3ip_reconstruct", "slice-coupled estimator needs K >= 2");
  }
  VolumeRecon rec;
  auto A = make_linear_map(spec);
  detail::EngineOptions eo;
  eo.adapt = true;
  eo.K = cfg.K;
  eo.L = cfg.L;
  eo.init_adapters = init_adapters;
  if (meta_phase) {
    eo.alpha_start = cfg.alpha_start;
    eo.alpha_end = cfg.alpha_end;
  }
  auto out = detail::run_volume(detail::initial_state(Y, spec, s, cfg), Y, A, net, s, cfg, eo,
                                rec.stats, &rec.trace);
  rec.X0 = out.X0;
  rec.adapters.push_back(out.adapters);
  rec.final_slice_losses = out.final_slice_losses;
  rec.ref_slice_losses = out.ref_slice_losses;
  return rec;
}

// shared-adapter run with a decaying interpolation step produces a
// meta-initialization; each slice then fine-tunes its own copy of it
inline VolumeRecon d3ip_meta_reconstruct(const Tensor& Y, const OperatorSpec& spec, Denoiser& net,
                                         const NoiseSchedule& s, const AdaptConfig& cfg) {
  validate_adapt_config(cfg, s);
  VolumeRecon phase1 = d3ip_reconstruct(Y, spec, net, s, cfg, true);
  AdapterState theta_vol = phase1.adapters.front();

  AdaptConfig fcfg = cfg;
  if (cfg.finetune_L > 0) fcfg.L = cfg.finetune_L;
  if (fcfg.approximator.method == ApproxMethod::mbir) {
    // per-slice fine-tuning is slice-local; fall back to the plain proximal
    // estimator for phase 2
    fcfg.approximator.method = ApproxMethod::dds;
  }
  VolumeRecon rec = ddip_reconstruct(Y, spec, net, s, fcfg, &theta_vol);
  rec.adapters.insert(rec.adapters.begin(), theta_vol);
  for (const auto& row : phase1.trace) rec.trace.push_back(row);
  rec.stats.adapt_steps += phase1.stats.adapt_steps;
  rec.stats.adapt_cg_iters += phase1.stats.adapt_cg_iters;
  rec.stats.sample_cg_iters += phase1.stats.sample_cg_iters;
  rec.stats.denoiser_forwards += phase1.stats.denoiser_forwards;
  rec.stats.seconds += phase1.stats.seconds;
  return rec;
}

// ---- plain deep-image-prior baseline ------------------------------------------

struct DipResult {
  Tensor x;
  std::vector<double> train_trace;
  std::vector<double> holdout_trace;
  int best_step = -1;
};

// fit the network itself to one measurement from a fixed random input; a
// held-out subset of measurement entries picks the checkpoint to keep
inline DipResult dip_baseline(const Tensor& y, const OperatorSpec& spec, Denoiser& net, int steps,
                              double lr, uint64_t seed, double holdout_frac = 0.1) {
  if (steps < 1) op_error("dip_baseline", "steps must be positive");
  if (holdout_frac <= 0 || holdout_frac >= 1)
    op_error("dip_baseline", "holdout_frac must lie in (0,1)");
  auto A = make_linear_map(spec);
  Rng rng(mix_seed(seed, 0x646970));
  Tensor z = Tensor::randn(A->domain, rng);
  auto support = range_support(spec);

  // split the acquired entries into train and held-out sets
  size_t rn = static_cast<size_t>(shape_numel(A->range));
  std::vector<double> wtrain(rn, 0.0), whold(rn, 0.0);
  long n_train = 0, n_hold = 0;
  for (size_t i = 0; i < rn; ++i) {
    if (!support[i]) continue;
    if (rng.uniform() < holdout_frac) {
      whold[i] = 1.0;
      ++n_hold;
    } else {
      wtrain[i] = 1.0;
      ++n_train;
    }
  }
  if (n_train == 0 || n_hold == 0) op_error("dip_baseline", "holdout split degenerated");
  Tensor mtrain(A->range, std::move(wtrain));
  Tensor mhold(A->range, std::move(whold));

  net.set_base_trainable(true);
  net.set_adapters_trainable(false);
  AdamW opt(net.base_params(), lr);
  const int t_embed = 500;  // fixed conditioning, the schedule plays no role here

  DipResult res;
  double best = std::numeric_limits<double>::infinity();
  Tensor zb = reshape(z, {1, z.dim(0), z.dim(1), z.dim(2)});
  for (int step = 0; step < steps; ++step) {
    Tensor img = reshape(net.forward(zb, {t_embed}, 1000), A->domain);
    Tensor resid = sub(y, apply_map(A, img));
    Tensor loss = scalar_mul(sumsq(mul(resid, mtrain)), 1.0 / static_cast<double>(n_train));
    double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("dip training diverged");
    double hv;
    {
      NoGradGuard ng;
      hv = sumsq(mul(resid, mhold)).item() / static_cast<double>(n_hold);
    }
    res.train_trace.push_back(lv);
    res.holdout_trace.push_back(hv);
    if (hv < best) {
      best = hv;
      res.best_step = step;
      res.x = img.detach();
    }
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  return res;
}

}  // namespace drift
