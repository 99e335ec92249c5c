// Command-line front end: sample phantoms, train the prior, simulate
// measurements, reconstruct, score, and sweep methods across seeds.

#include <CLI11.hpp>

#include <iostream>

#include "drift/experiment.hpp"
#include "drift/grad_check.hpp"

using namespace drift;

namespace {

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  if (out.empty()) throw CLI::ValidationError("--seeds", "expected a comma-separated list");
  return out;
}

std::vector<MethodKind> parse_methods(const std::string& s) {
  std::vector<MethodKind> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(method_from_string(tok));
  if (out.empty()) throw CLI::ValidationError("--methods", "expected a comma-separated list");
  return out;
}

void write_task_meta(const std::string& dir, const ExperimentConfig& cfg) {
  std::ofstream f(dir + "/task.meta");
  f << "task=" << task_name(cfg.task) << "\n";
  f << "image_size=" << cfg.image_size << "\n";
  f << "num_slices=" << cfg.num_slices << "\n";
  f << "sigma_y=" << cfg.sigma_y << "\n";
  f << "seed=" << cfg.seed << "\n";
  f << "ct_angles=" << cfg.ct_angles << "\n";
  if (!f) throw std::runtime_error("cannot write " + dir + "/task.meta");
}

ExperimentConfig read_task_meta(const std::string& dir) {
  std::ifstream f(dir + "/task.meta");
  if (!f) throw std::runtime_error("missing " + dir + "/task.meta");
  ExperimentConfig cfg;
  std::string line;
  while (std::getline(f, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "task") cfg.task = task_from_string(v);
    else if (k == "image_size") cfg.image_size = std::stoi(v);
    else if (k == "num_slices") cfg.num_slices = std::stoi(v);
    else if (k == "sigma_y") cfg.sigma_y = std::stod(v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "ct_angles") cfg.ct_angles = std::stoi(v);
  }
  return cfg;
}

std::string slice_path(const std::string& dir, int i) {
  char name[32];
  std::snprintf(name, sizeof(name), "/y_%03d.bin", i);
  return dir + name;
}

void save_volume_pngs(const std::string& dir, const Tensor& vol) {
  for (int64_t i = 0; i < vol.dim(0); ++i) {
    Tensor img = magnitude_image(
        reshape(slice(vol, 0, i, 1), Shape(vol.shape().begin() + 1, vol.shape().end())));
    char name[32];
    std::snprintf(name, sizeof(name), "/slice_%03d.png", static_cast<int>(i));
    write_png16(dir + name, img);
  }
}

// per-slice psnr/ssim of magnitudes, independent of any operator
std::vector<ScoreRow> score_volumes(const Tensor& hat, const Tensor& truth,
                                    const std::string& label, int volume) {
  if (hat.dim(0) != truth.dim(0)) op_error("eval", "slice counts differ");
  std::vector<ScoreRow> rows;
  for (int64_t i = 0; i < hat.dim(0); ++i) {
    Tensor h = magnitude_image(
        reshape(slice(hat, 0, i, 1), Shape(hat.shape().begin() + 1, hat.shape().end())));
    Tensor t = magnitude_image(
        reshape(slice(truth, 0, i, 1), Shape(truth.shape().begin() + 1, truth.shape().end())));
    rows.push_back({volume, static_cast<int>(i), label, psnr(h, t, 1.0), ssim(h, t, 1.0), 0, 0.0});
  }
  return rows;
}

int run_gradcheck(uint64_t seed) {
  // composite pipelines exercising every differentiable piece end to end
  Rng rng(mix_seed(seed, 0x6763));
  auto s = make_schedule(100, 1e-4, 2e-2, 8, 0.85, 96);
  DenoiserConfig dc;
  dc.image_size = 8;
  dc.base_channels = 8;
  dc.channel_multipliers = {1};
  dc.time_embed_dim = 16;
  Denoiser net(dc, seed);
  for (auto& p : net.base_params()) {
    auto& v = p.raw();
    for (auto& e : v) e += 0.05 * rng.normal();
  }
  auto ct = make_ct_spec(8, 5, 0.0);
  auto A = make_linear_map(ct);
  Tensor y = Tensor::randn(ct.range_shape(), rng);

  struct Probe {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    Shape shape;
  };
  std::vector<Probe> probes;
  probes.push_back({"denoiser+tweedie+op", [&](const Tensor& v) {
                      Tensor eps = reshape(net.forward(reshape(v, {1, 1, 8, 8}), {37}, s.T),
                                           Shape{1, 8, 8});
                      Tensor x0 = tweedie_mean(v, eps, 37, s);
                      return sumsq(sub(y, apply_map(A, x0)));
                    },
                    {1, 8, 8}});
  probes.push_back({"cg_solve", [&](const Tensor& v) {
                      LinOp op = [&](const Tensor& u) {
                        return add(apply_adjoint(A, apply_map(A, u)), scalar_mul(u, 1.0));
                      };
                      return sumsq(cg_solve(op, v, Tensor::zeros({1, 8, 8}), 5));
                    },
                    {1, 8, 8}});
  probes.push_back({"softmax+norm", [&](const Tensor& v) {
                      return sumsq(softmax_rows(reshape(v, {4, 16})));
                    },
                    {4, 16}});

  double worst = 0;
  for (auto& p : probes) {
    Tensor at = Tensor::randn(p.shape, rng);
    auto res = grad_check(p.f, at, 1e-4);
    std::cout << p.name << ": max_rel_err " << res.max_rel_err << " (checked " << res.checked
              << ", excluded " << res.excluded.size() << ")\n";
    worst = std::max(worst, res.max_rel_err);
  }
  std::cout << (worst < 1e-3 ? "PASS" : "FAIL") << " worst " << worst << "\n";
  return worst < 1e-3 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-prior tomography toolkit"};
  app.require_subcommand(1);
  app.set_config("--config");
  namespace fs = std::filesystem;

  // ---- phantom ----
  auto* ph = app.add_subcommand("phantom", "sample a procedural volume");
  std::string ph_family = "rectangles", ph_out = "phantom_out";
  int ph_size = 32, ph_slices = 16;
  double ph_drift = 0.9;
  uint64_t ph_seed = 0;
  bool ph_png = false;
  ph->add_option("--family", ph_family, "ellipse|rectangles|disks_and_bars|smooth_blobs");
  ph->add_option("--size", ph_size);
  ph->add_option("--slices", ph_slices);
  ph->add_option("--drift", ph_drift, "slice-to-slice latent correlation");
  ph->add_option("--seed", ph_seed);
  ph->add_option("--out", ph_out)->required();
  ph->add_flag("--png", ph_png, "also write per-slice previews");
  ph->callback([&] {
    Tensor vol;
    if (ph_family == "ellipse") {
      EllipsePhantomSpec es;
      es.image_size = ph_size;
      std::vector<Tensor> rows;
      for (int i = 0; i < ph_slices; ++i) {
        Rng rng(mix_seed(ph_seed, static_cast<uint64_t>(i)));
        rows.push_back(sample_ellipse_phantom(es, rng));
      }
      vol = stack0(rows);
    } else {
      OodVolumeSpec vs;
      vs.image_size = ph_size;
      vs.num_slices = ph_slices;
      vs.kind = ood_kind_from_string(ph_family);
      vs.drift = ph_drift;
      vol = sample_ood_volume(vs, ph_seed);
    }
    fs::create_directories(ph_out);
    write_tensor(ph_out + "/volume.bin", vol);
    if (ph_png) save_volume_pngs(ph_out, vol);
    std::cout << "wrote " << ph_out << "/volume.bin " << shape_str(vol.shape()) << "\n";
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train the denoising prior on random ellipses");
  std::string tr_out = "prior.ckpt";
  int tr_size = 32, tr_steps = 2000, tr_batch = 16, tr_base = 16, tr_channels = 1,
      tr_log = 100, tr_blocks = 1;
  std::vector<int> tr_mult = {1, 2};
  double tr_lr = 1e-3;
  uint64_t tr_seed = 0;
  tr->add_option("--size", tr_size);
  tr->add_option("--channels", tr_channels, "1 for CT, 2 for complex MRI");
  tr->add_option("--steps", tr_steps);
  tr->add_option("--batch", tr_batch);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--base-channels", tr_base);
  tr->add_option("--mult", tr_mult, "per-level channel multipliers")->delimiter(',');
  tr->add_option("--res-blocks", tr_blocks);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--log-every", tr_log);
  tr->add_option("--out", tr_out)->required();
  tr->callback([&] {
    DenoiserConfig dc;
    dc.image_size = tr_size;
    dc.in_channels = tr_channels;
    dc.base_channels = tr_base;
    dc.channel_multipliers = tr_mult;
    dc.num_res_blocks = tr_blocks;
    Denoiser net(dc, tr_seed);
    EllipsePhantomSpec es;
    es.image_size = tr_size;
    auto sampler = [&](Rng& rng) {
      Tensor x = sample_ellipse_phantom(es, rng);
      if (tr_channels == 1) return x;
      std::vector<double> v(static_cast<size_t>(2) * tr_size * tr_size, 0.0);
      std::copy(x.value().begin(), x.value().end(), v.begin());
      return Tensor({2, tr_size, tr_size}, std::move(v));
    };
    TrainConfig tc;
    tc.steps = tr_steps;
    tc.batch = tr_batch;
    tc.lr = tr_lr;
    tc.seed = tr_seed;
    tc.log_every = tr_log;
    auto s = make_schedule();
    auto losses = dsm_train(net, sampler, s, tc, &std::cout);
    net.save_base(tr_out);
    std::ofstream lf(tr_out + ".loss.csv");
    lf << "step,loss\n";
    for (size_t i = 0; i < losses.size(); ++i) lf << i << ',' << losses[i] << '\n';
    std::cout << "saved " << tr_out << "\n";
  });

  // ---- measure ----
  auto* me = app.add_subcommand("measure", "simulate measurements of a volume");
  std::string me_task = "ct3d", me_volume, me_out = "meas_out";
  int me_angles = 15;
  double me_sigma = 0.01;
  uint64_t me_seed = 0;
  me->add_option("--task", me_task, "ct3d|mri3d|csmri2d");
  me->add_option("--volume", me_volume, "raw volume from the phantom command")->required();
  me->add_option("--angles", me_angles, "projection count for ct3d");
  me->add_option("--sigma-y", me_sigma);
  me->add_option("--seed", me_seed);
  me->add_option("--out", me_out)->required();
  me->callback([&] {
    Tensor vol = read_tensor(me_volume);
    ExperimentConfig cfg;
    cfg.task = task_from_string(me_task);
    cfg.image_size = static_cast<int>(vol.dim(vol.rank() - 1));
    cfg.num_slices = static_cast<int>(vol.dim(0));
    cfg.ct_angles = me_angles;
    cfg.sigma_y = me_sigma;
    cfg.seed = me_seed;
    OperatorSpec spec = make_task_spec(cfg);
    Tensor X = embed_domain(vol, spec);
    fs::create_directories(me_out);
    for (int64_t i = 0; i < X.dim(0); ++i) {
      Tensor xi = reshape(slice(X, 0, i, 1), spec.domain_shape());
      Tensor y = simulate_measurement(spec, xi, mix_seed(me_seed, static_cast<uint64_t>(i)));
      write_measurement(slice_path(me_out, static_cast<int>(i)), spec, y, me_seed);
    }
    write_task_meta(me_out, cfg);
    write_tensor(me_out + "/truth.bin", vol);
    std::cout << "wrote " << cfg.num_slices << " measurements to " << me_out << "\n";
  });

  // ---- reconstruct ----
  auto* rc = app.add_subcommand("reconstruct", "reconstruct a measured volume");
  std::string rc_meas, rc_ckpt, rc_out = "recon_out", rc_method = "d3ip_base",
              rc_sampling = "random", rc_init = "slerp", rc_truth;
  ExperimentConfig rcfg;
  rc->add_option("--measurements", rc_meas, "directory from the measure command")->required();
  rc->add_option("--ckpt", rc_ckpt, "trained prior (optional for admm_tv)");
  rc->add_option("--method", rc_method,
                 "ddnm|dps|dds|mbir|admm_tv|dip|ddip|d3ip_base|d3ip_mbir|d3ip_meta");
  rc->add_option("--out", rc_out)->required();
  rc->add_option("--truth", rc_truth, "ground-truth volume for scoring");
  rc->add_option("--K", rcfg.adapt.K);
  rc->add_option("--L", rcfg.adapt.L);
  rc->add_option("--adapt-lr", rcfg.adapt.lr);
  rc->add_option("--zeta", rcfg.adapt.zeta);
  rc->add_option("--adapt-cg", rcfg.adapt.adapt_cg);
  rc->add_option("--rank", rcfg.adapt.lora_rank);
  rc->add_option("--sampling", rc_sampling, "random|neighbor");
  rc->add_option("--init", rc_init, "slerp|noise");
  rc->add_option("--nfe", rcfg.nfe);
  rc->add_option("--eta", rcfg.eta);
  rc->add_option("--t-start", rcfg.t_start);
  rc->add_option("--gamma", rcfg.gamma, "data weight of the guidance estimator");
  rc->add_option("--alpha-start", rcfg.adapt.alpha_start);
  rc->add_option("--alpha-end", rcfg.adapt.alpha_end);
  rc->add_option("--finetune-L", rcfg.adapt.finetune_L);
  rc->add_option("--dip-steps", rcfg.dip_steps);
  rc->add_option("--dip-lr", rcfg.dip_lr);
  rc->add_option("--admm-lambda", rcfg.admm_lambda);
  rc->add_option("--admm-iters", rcfg.admm_iters);
  rc->callback([&] {
    ExperimentConfig meta = read_task_meta(rc_meas);
    ExperimentConfig cfg = rcfg;
    cfg.task = meta.task;
    cfg.image_size = meta.image_size;
    cfg.num_slices = meta.num_slices;
    cfg.sigma_y = meta.sigma_y;
    cfg.seed = meta.seed;
    cfg.ct_angles = meta.ct_angles;
    cfg.method = method_from_string(rc_method);
    cfg.adapt.sampling_mode =
        rc_sampling == "neighbor" ? SamplingMode::neighbor : SamplingMode::random;
    cfg.adapt.init = rc_init == "noise" ? InitMode::noise : InitMode::slerp_pinv;
    if (cfg.adapt.K > cfg.num_slices) cfg.adapt.K = cfg.num_slices;

    OperatorSpec spec = make_task_spec(cfg);
    std::vector<Tensor> ys;
    for (int i = 0; i < cfg.num_slices; ++i)
      ys.push_back(read_measurement(slice_path(rc_meas, i), spec));
    Tensor Y = stack0(ys);

    Denoiser net;
    if (!rc_ckpt.empty()) {
      net = Denoiser::load_base(rc_ckpt);
      if (net.config().image_size != cfg.image_size)
        throw std::runtime_error("checkpoint image size does not match the measurements");
    } else if (cfg.method != MethodKind::admm_tv) {
      throw CLI::ValidationError("--ckpt", "this method needs a trained prior");
    } else {
      DenoiserConfig dc;
      dc.image_size = cfg.image_size;
      net = Denoiser(dc, 0);
    }

    ExperimentResult r = reconstruct_volume(cfg, spec, Y, net);
    if (!rc_truth.empty()) {
      r.X_true = read_tensor(rc_truth);
      score_result(spec, r);
    }
    save_experiment(rc_out, cfg, r);
    std::cout << "method " << rc_method;
    if (!r.scores.empty())
      std::cout << " psnr " << r.mean_psnr << " ssim " << r.mean_ssim;
    std::cout << " seconds " << r.stats.seconds << "\n";
  });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "score a reconstruction against ground truth");
  std::string ev_recon, ev_truth, ev_out = "scores.csv", ev_label = "recon";
  int ev_volume = 0;
  ev->add_option("--recon", ev_recon)->required();
  ev->add_option("--truth", ev_truth)->required();
  ev->add_option("--method-label", ev_label);
  ev->add_option("--volume-id", ev_volume);
  ev->add_option("--out", ev_out);
  ev->callback([&] {
    auto rows = score_volumes(read_tensor(ev_recon), read_tensor(ev_truth), ev_label, ev_volume);
    write_scores_csv(ev_out, rows);
    double p = 0, s = 0;
    for (const auto& r : rows) {
      p += r.psnr;
      s += r.ssim;
    }
    std::cout << "mean psnr " << p / rows.size() << " mean ssim " << s / rows.size() << "\n";
  });

  // ---- sweep ----
  auto* sw = app.add_subcommand("sweep", "compare methods across seeds on fresh volumes");
  std::string sw_task = "ct3d", sw_methods = "dds,d3ip_base", sw_seeds = "0", sw_ckpt,
              sw_family = "rectangles", sw_out = "sweep_out";
  ExperimentConfig swcfg;
  sw->add_option("--task", sw_task);
  sw->add_option("--methods", sw_methods);
  sw->add_option("--seeds", sw_seeds);
  sw->add_option("--ckpt", sw_ckpt)->required();
  sw->add_option("--family", sw_family);
  sw->add_option("--size", swcfg.image_size);
  sw->add_option("--slices", swcfg.num_slices);
  sw->add_option("--drift", swcfg.drift);
  sw->add_option("--angles", swcfg.ct_angles);
  sw->add_option("--sigma-y", swcfg.sigma_y);
  sw->add_option("--K", swcfg.adapt.K);
  sw->add_option("--L", swcfg.adapt.L);
  sw->add_option("--adapt-lr", swcfg.adapt.lr);
  sw->add_option("--zeta", swcfg.adapt.zeta);
  sw->add_option("--nfe", swcfg.nfe);
  sw->add_option("--out", sw_out)->required();
  sw->callback([&] {
    ExperimentConfig cfg = swcfg;
    cfg.task = task_from_string(sw_task);
    cfg.ood = ood_kind_from_string(sw_family);
    if (cfg.adapt.K > cfg.num_slices) cfg.adapt.K = cfg.num_slices;
    auto methods = parse_methods(sw_methods);
    auto seeds = parse_seeds(sw_seeds);
    Denoiser net = Denoiser::load_base(sw_ckpt);
    fs::create_directories(sw_out);
    std::vector<ScoreRow> rows;
    for (size_t v = 0; v < seeds.size(); ++v) {
      cfg.seed = seeds[v];
      auto part = compare_methods(cfg, methods, net, static_cast<int>(v));
      rows.insert(rows.end(), part.begin(), part.end());
      std::cout << "seed " << seeds[v] << " done\n";
    }
    write_scores_csv(sw_out + "/scores.csv", rows);

    nlohmann::json summary;
    for (MethodKind m : methods) {
      double p = 0, s = 0;
      int n = 0;
      for (const auto& r : rows)
        if (r.method == method_name(m)) {
          p += r.psnr;
          s += r.ssim;
          ++n;
        }
      summary[method_name(m)] = {{"mean_psnr", p / n}, {"mean_ssim", s / n}, {"slices", n}};
    }
    std::ofstream jf(sw_out + "/summary.json");
    jf << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
  });

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the autodiff core");
  uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed);
  int gc_status = 0;
  gc->callback([&] { gc_status = run_gradcheck(gc_seed); });

  CLI11_PARSE(app, argc, argv);
  return gc_status;
}
