#pragma once

// End-to-end experiment driver: build a task, simulate measurements of a
// held-out volume, reconstruct with a chosen method, score the result, and
// write everything to disk in formats the CLI understands.

#include <json.hpp>

#include <filesystem>

#include "drift/adaptation.hpp"
#include "drift/image_io.hpp"
#include "drift/metrics.hpp"
#include "drift/phantoms.hpp"
#include "drift/training.hpp"

namespace drift {

enum class TaskKind { ct3d, mri3d, csmri2d };
enum class MethodKind { ddnm, dps, dds, mbir, admm_tv, dip, ddip, d3ip_base, d3ip_mbir, d3ip_meta };

inline const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::ct3d: return "ct3d";
    case TaskKind::mri3d: return "mri3d";
    default: return "csmri2d";
  }
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "ct3d") return TaskKind::ct3d;
  if (s == "mri3d") return TaskKind::mri3d;
  if (s == "csmri2d") return TaskKind::csmri2d;
  op_error("task_from_string", "unknown task " + s);
}

inline const char* method_name(MethodKind m) {
  switch (m) {
    case MethodKind::ddnm: return "ddnm";
    case MethodKind::dps: return "dps";
    case MethodKind::dds: return "dds";
    case MethodKind::mbir: return "mbir";
    case MethodKind::admm_tv: return "admm_tv";
    case MethodKind::dip: return "dip";
    case MethodKind::ddip: return "ddip";
    case MethodKind::d3ip_base: return "d3ip_base";
    case MethodKind::d3ip_mbir: return "d3ip_mbir";
    default: return "d3ip_meta";
  }
}

inline MethodKind method_from_string(const std::string& s) {
  for (MethodKind m : {MethodKind::ddnm, MethodKind::dps, MethodKind::dds, MethodKind::mbir,
                       MethodKind::admm_tv, MethodKind::dip, MethodKind::ddip,
                       MethodKind::d3ip_base, MethodKind::d3ip_mbir, MethodKind::d3ip_meta})
    if (s == method_name(m)) return m;
  op_error("method_from_string", "unknown method " + s);
}

inline OodKind ood_kind_from_string(const std::string& s) {
  for (OodKind k : {OodKind::rectangles, OodKind::disks_and_bars, OodKind::smooth_blobs})
    if (s == ood_kind_name(k)) return k;
  op_error("ood_kind_from_string", "unknown volume family " + s);
}

struct ExperimentConfig {
  TaskKind task = TaskKind::ct3d;
  MethodKind method = MethodKind::d3ip_base;
  int image_size = 32;
  int num_slices = 16;
  OodKind ood = OodKind::rectangles;
  double drift = 0.9;
  uint64_t seed = 0;
  // operator
  int ct_angles = 15;
  double sigma_y = 0.01;
  // reverse chain
  int T = 1000;
  int nfe = 50;
  double eta = 0.85;
  int t_start = 980;
  // adaptation knobs (approximator is filled in from the method)
  AdaptConfig adapt;
  double gamma = 0;  // >0 overrides the estimator's data weight
  // baselines
  int dip_steps = 2000;
  double dip_lr = 1e-3;
  double admm_lambda = 1e-3;
  int admm_iters = 30;
};

inline OperatorSpec make_task_spec(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::ct3d: return make_ct_spec(cfg.image_size, cfg.ct_angles, cfg.sigma_y);
    case TaskKind::mri3d: return make_mri3d_spec(cfg.image_size, cfg.seed, cfg.sigma_y);
    default: return make_csmri_spec(cfg.image_size, cfg.seed, cfg.sigma_y);
  }
}

// the guidance estimator, chain length, and stochasticity all follow from the
// method; everything else in cfg stays untouched
inline ExperimentConfig apply_method_defaults(ExperimentConfig cfg) {
  OpKind kind = cfg.task == TaskKind::ct3d ? OpKind::ct_parallel
                : cfg.task == TaskKind::mri3d ? OpKind::mri_single
                                              : OpKind::mri_multicoil;
  switch (cfg.method) {
    case MethodKind::ddnm:
      cfg.adapt.approximator = make_approx_config(ApproxMethod::ddnm, kind);
      break;
    case MethodKind::dps:
      cfg.adapt.approximator = make_approx_config(ApproxMethod::dps, kind);
      cfg.nfe = cfg.t_start;  // every step of the chain, fully stochastic
      cfg.eta = 1.0;
      break;
    case MethodKind::mbir:
    case MethodKind::d3ip_mbir:
      cfg.adapt.approximator = make_approx_config(ApproxMethod::mbir, kind);
      cfg.adapt.sampling_mode = SamplingMode::neighbor;
      if (cfg.adapt.K < 2) cfg.adapt.K = 2;
      break;
    default:
      cfg.adapt.approximator = make_approx_config(ApproxMethod::dds, kind);
      break;
  }
  if (cfg.gamma > 0) cfg.adapt.approximator.gamma = cfg.gamma;
  cfg.adapt.seed = cfg.seed;
  return cfg;
}

// truth volumes are real; the MRI tasks embed them as complex with zero
// imaginary part
inline Tensor embed_domain(const Tensor& vol, const OperatorSpec& spec) {
  if (spec.kind == OpKind::ct_parallel) return vol.detach();
  int64_t N = vol.dim(0), S = vol.dim(2);
  std::vector<double> out(static_cast<size_t>(N) * 2 * S * S, 0.0);
  for (int64_t i = 0; i < N; ++i)
    std::copy(vol.value().begin() + i * S * S, vol.value().begin() + (i + 1) * S * S,
              out.begin() + i * 2 * S * S);
  return Tensor({N, 2, S, S}, std::move(out));
}

inline Tensor measure_volume(const Tensor& X_true, const OperatorSpec& spec, uint64_t seed) {
  std::vector<Tensor> ys;
  for (int64_t i = 0; i < X_true.dim(0); ++i) {
    Tensor xi = reshape(slice(X_true, 0, i, 1), spec.domain_shape());
    ys.push_back(simulate_measurement(spec, xi, mix_seed(seed, static_cast<uint64_t>(i))));
  }
  return stack0(ys);
}

struct SliceScore {
  int slice;
  double psnr;
  double ssim;
};

struct ExperimentResult {
  Tensor X_true;  // [N,1,S,S] ground truth
  Tensor Y;       // stacked measurements
  Tensor X_hat;   // reconstruction in the operator domain
  std::vector<SliceScore> scores;
  double mean_psnr = 0;
  double mean_ssim = 0;
  RunStats stats;
  std::vector<AdaptLossRow> trace;
  std::vector<double> final_slice_losses;
  std::vector<double> ref_slice_losses;
};

inline void score_result(const OperatorSpec& spec, ExperimentResult& r) {
  int64_t N = r.X_true.dim(0);
  r.scores.clear();
  double sp = 0, ss = 0;
  for (int64_t i = 0; i < N; ++i) {
    Tensor truth = magnitude_image(reshape(slice(r.X_true, 0, i, 1), {1, spec.image_size,
                                                                      spec.image_size}));
    Tensor hat = magnitude_image(reshape(slice(r.X_hat, 0, i, 1), spec.domain_shape()));
    double p = psnr(hat, truth, 1.0);
    double s = ssim(hat, truth, 1.0);
    r.scores.push_back({static_cast<int>(i), p, s});
    sp += p;
    ss += s;
  }
  r.mean_psnr = sp / static_cast<double>(N);
  r.mean_ssim = ss / static_cast<double>(N);
}

// reconstruct Y with the configured method; net is the trained prior (unused
// by admm_tv, and only its architecture is reused by dip)
inline ExperimentResult reconstruct_volume(const ExperimentConfig& cfg0, const OperatorSpec& spec,
                                           const Tensor& Y, Denoiser& net) {
  ExperimentConfig cfg = apply_method_defaults(cfg0);
  NoiseSchedule s = make_schedule(cfg.T, 1e-4, 2e-2, cfg.nfe, cfg.eta, cfg.t_start);
  ExperimentResult r;
  r.Y = Y;
  auto t0 = std::chrono::steady_clock::now();
  switch (cfg.method) {
    case MethodKind::ddnm:
    case MethodKind::dps:
    case MethodKind::dds:
    case MethodKind::mbir: {
      auto rec = sample_volume(Y, spec, net, s, cfg.adapt);
      r.X_hat = rec.X0;
      r.stats = rec.stats;
      break;
    }
    case MethodKind::admm_tv: {
      auto A = make_linear_map(spec);
      std::vector<Tensor> rows;
      for (int64_t i = 0; i < Y.dim(0); ++i)
        rows.push_back(admm_tv_baseline(reshape(slice(Y, 0, i, 1), A->range), A,
                                        cfg.admm_lambda, cfg.admm_iters));
      r.X_hat = stack0(rows);
      break;
    }
    case MethodKind::dip: {
      std::vector<Tensor> rows;
      for (int64_t i = 0; i < Y.dim(0); ++i) {
        Denoiser fresh(net.config(), mix_seed(cfg.seed, 0x646970, static_cast<uint64_t>(i)));
        auto res = dip_baseline(reshape(slice(Y, 0, i, 1), spec.range_shape()), spec, fresh,
                                cfg.dip_steps, cfg.dip_lr,
                                mix_seed(cfg.seed, static_cast<uint64_t>(i)));
        rows.push_back(res.x);
        r.stats.adapt_steps += cfg.dip_steps;
      }
      r.X_hat = stack0(rows);
      break;
    }
    case MethodKind::ddip: {
      auto rec = ddip_reconstruct(Y, spec, net, s, cfg.adapt);
      r.X_hat = rec.X0;
      r.stats = rec.stats;
      r.trace = rec.trace;
      r.final_slice_losses = rec.final_slice_losses;
      break;
    }
    case MethodKind::d3ip_base:
    case MethodKind::d3ip_mbir: {
      auto rec = d3ip_reconstruct(Y, spec, net, s, cfg.adapt);
      r.X_hat = rec.X0;
      r.stats = rec.stats;
      r.trace = rec.trace;
      r.final_slice_losses = rec.final_slice_losses;
      break;
    }
    default: {
      auto rec = d3ip_meta_reconstruct(Y, spec, net, s, cfg.adapt);
      r.X_hat = rec.X0;
      r.stats = rec.stats;
      r.trace = rec.trace;
      r.final_slice_losses = rec.final_slice_losses;
      r.ref_slice_losses = rec.ref_slice_losses;
      break;
    }
  }
  r.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Denoiser& net) {
  OperatorSpec spec = make_task_spec(cfg);
  OodVolumeSpec vspec;
  vspec.image_size = cfg.image_size;
  vspec.num_slices = cfg.num_slices;
  vspec.kind = cfg.ood;
  vspec.drift = cfg.drift;
  Tensor truth = sample_ood_volume(vspec, cfg.seed);
  Tensor X_true = embed_domain(truth, spec);
  Tensor Y = measure_volume(X_true, spec, cfg.seed);
  ExperimentResult r = reconstruct_volume(cfg, spec, Y, net);
  r.X_true = truth;
  score_result(spec, r);
  return r;
}

// ---- CSV and manifest output ---------------------------------------------------

struct ScoreRow {
  int volume;
  int slice;
  std::string method;
  double psnr;
  double ssim;
  long adapt_steps;
  double seconds;
};

inline void write_scores_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_scores_csv: cannot open " + path);
  out << "volume,slice,method,psnr,ssim,adapt_steps,seconds\n";
  for (const auto& r : rows)
    out << r.volume << ',' << r.slice << ',' << r.method << ',' << r.psnr << ',' << r.ssim << ','
        << r.adapt_steps << ',' << r.seconds << '\n';
}

inline void write_loss_csv(const std::string& path, const std::vector<AdaptLossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_loss_csv: cannot open " + path);
  out << "t,inner_step,loss\n";
  for (const auto& r : rows) out << r.t << ',' << r.inner << ',' << r.loss << '\n';
}

inline std::vector<ScoreRow> to_score_rows(const ExperimentResult& r, MethodKind method,
                                           int volume) {
  std::vector<ScoreRow> rows;
  for (const auto& s : r.scores)
    rows.push_back({volume, s.slice, method_name(method), s.psnr, s.ssim, r.stats.adapt_steps,
                    r.stats.seconds});
  return rows;
}

inline nlohmann::json experiment_manifest(const ExperimentConfig& cfg,
                                          const ExperimentResult& r) {
  nlohmann::json j;
  j["task"] = task_name(cfg.task);
  j["method"] = method_name(cfg.method);
  j["image_size"] = cfg.image_size;
  j["num_slices"] = cfg.num_slices;
  j["volume_family"] = ood_kind_name(cfg.ood);
  j["drift"] = cfg.drift;
  j["seed"] = cfg.seed;
  j["sigma_y"] = cfg.sigma_y;
  if (cfg.task == TaskKind::ct3d) j["ct_angles"] = cfg.ct_angles;
  ExperimentConfig eff = apply_method_defaults(cfg);
  j["chain"] = {{"T", eff.T}, {"nfe", eff.nfe}, {"eta", eff.eta}, {"t_start", eff.t_start}};
  j["adapt"] = {{"K", eff.adapt.K},
                {"L", eff.adapt.L},
                {"lr", eff.adapt.lr},
                {"zeta", eff.adapt.zeta},
                {"sampling", sampling_mode_name(eff.adapt.sampling_mode)},
                {"adapt_cg", eff.adapt.adapt_cg},
                {"lora_rank", eff.adapt.lora_rank}};
  j["mean_psnr"] = r.mean_psnr;
  j["mean_ssim"] = r.mean_ssim;
  j["stats"] = {{"adapt_steps", r.stats.adapt_steps},
                {"adapt_cg_iters", r.stats.adapt_cg_iters},
                {"sample_cg_iters", r.stats.sample_cg_iters},
                {"denoiser_forwards", r.stats.denoiser_forwards},
                {"seconds", r.stats.seconds}};
  return j;
}

// writes recon + truth volumes, per-slice PNGs, scores, loss trace, manifest
inline void save_experiment(const std::string& dir, const ExperimentConfig& cfg,
                            const ExperimentResult& r, int volume = 0) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_tensor(dir + "/recon.bin", r.X_hat);
  if (r.X_true.defined()) write_tensor(dir + "/truth.bin", r.X_true);
  for (int64_t i = 0; i < r.X_hat.dim(0); ++i) {
    Tensor hat = magnitude_image(reshape(slice(r.X_hat, 0, i, 1),
                                         Shape(r.X_hat.shape().begin() + 1,
                                               r.X_hat.shape().end())));
    char name[64];
    std::snprintf(name, sizeof(name), "/slice_%03d.png", static_cast<int>(i));
    write_png16(dir + name, hat);
  }
  if (!r.scores.empty()) write_scores_csv(dir + "/scores.csv", to_score_rows(r, cfg.method, volume));
  if (!r.trace.empty()) write_loss_csv(dir + "/adapt_loss.csv", r.trace);
  std::ofstream mf(dir + "/manifest.json");
  mf << experiment_manifest(cfg, r).dump(2) << "\n";
}

// run several methods on the same measurements and collect one score table
inline std::vector<ScoreRow> compare_methods(const ExperimentConfig& base,
                                             const std::vector<MethodKind>& methods,
                                             Denoiser& net, int volume = 0) {
  std::vector<ScoreRow> rows;
  for (MethodKind m : methods) {
    ExperimentConfig cfg = base;
    cfg.method = m;
    ExperimentResult r = run_experiment(cfg, net);
    auto part = to_score_rows(r, m, volume);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

}  // namespace drift
