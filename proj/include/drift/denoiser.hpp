#pragma once

// Small UNet noise predictor with sinusoidal time conditioning, optional
// mid-block self-attention, and low-rank adapters that can be trained
// while the base weights stay frozen.

#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "drift/nn_ops.hpp"
#include "drift/tensor.hpp"

namespace drift {

struct DenoiserConfig {
  int image_size = 32;
  int in_channels = 1;
  int base_channels = 16;
  std::vector<int> channel_multipliers = {1, 2};
  int num_res_blocks = 1;
  int time_embed_dim = 32;
  std::vector<int> attention_resolutions = {};  // spatial sizes given self-attention
  int norm_groups = 4;
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"in_channels", c.in_channels},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"num_res_blocks", c.num_res_blocks},
                     {"time_embed_dim", c.time_embed_dim},
                     {"attention_resolutions", c.attention_resolutions},
                     {"norm_groups", c.norm_groups}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("in_channels").get_to(c.in_channels);
  j.at("base_channels").get_to(c.base_channels);
  j.at("channel_multipliers").get_to(c.channel_multipliers);
  j.at("num_res_blocks").get_to(c.num_res_blocks);
  j.at("time_embed_dim").get_to(c.time_embed_dim);
  j.at("attention_resolutions").get_to(c.attention_resolutions);
  j.at("norm_groups").get_to(c.norm_groups);
}

class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(DenoiserConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    validate_config();
    Rng rng(mix_seed(seed, 0x64656e6f));
    int L = levels();
    int ted = cfg_.time_embed_dim, tdim = 4 * ted;

    add_linear("temb.fc1", tdim, ted, rng);
    add_linear("temb.fc2", tdim, tdim, rng);
    add_conv("stem", ch(0), cfg_.in_channels, 3, rng);
    for (int l = 0; l < L; ++l)
      for (int r = 0; r < cfg_.num_res_blocks; ++r) {
        int in = (r == 0) ? (l == 0 ? ch(0) : ch(l - 1)) : ch(l);
        add_res_block("down" + std::to_string(l) + ".rb" + std::to_string(r), in, ch(l), tdim, rng);
      }
    add_res_block("mid.rb0", ch(L - 1), ch(L - 1), tdim, rng);
    if (mid_attention()) {
      int C = ch(L - 1);
      add_param("mid.attn.gn.g", Tensor::full({C}, 1.0));
      add_param("mid.attn.gn.b", Tensor::zeros({C}));
      for (const char* p : {"q", "k", "v", "o"}) {
        add_param("mid.attn." + std::string(p) + ".w",
                  Tensor::randn({C, C}, rng, 1.0 / std::sqrt(double(C))));
        add_param("mid.attn." + std::string(p) + ".b", Tensor::zeros({C}));
      }
    }
    for (int l = L - 1; l >= 0; --l)
      for (int r = 0; r < cfg_.num_res_blocks; ++r) {
        int below = (l == L - 1) ? ch(L - 1) : ch(l + 1);
        int in = (r == 0) ? below + ch(l) : ch(l);
        add_res_block("up" + std::to_string(l) + ".rb" + std::to_string(r), in, ch(l), tdim, rng);
      }
    add_param("out.gn.g", Tensor::full({ch(0)}, 1.0));
    add_param("out.gn.b", Tensor::zeros({ch(0)}));
    // zero output projection: the untrained net predicts zero noise
    add_param("out.conv.w", Tensor::zeros({cfg_.in_channels, ch(0), 3, 3}));
    add_param("out.conv.b", Tensor::zeros({cfg_.in_channels}));
  }

  const DenoiserConfig& config() const { return cfg_; }

  Tensor forward(const Tensor& x, const std::vector<int>& ts, int T) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.image_size ||
        x.dim(3) != cfg_.image_size)
      op_error("Denoiser::forward", "expected [B," + std::to_string(cfg_.in_channels) + "," +
                                        std::to_string(cfg_.image_size) + "," +
                                        std::to_string(cfg_.image_size) + "], got " +
                                        shape_str(x.shape()));
    int64_t B = x.dim(0);
    if (static_cast<int64_t>(ts.size()) != B)
      op_error("Denoiser::forward", "need one timestep per batch element");
    for (int t : ts)
      if (t < 1 || t > T)
        op_error("Denoiser::forward", "t = " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");

    int L = levels();
    Tensor temb = time_embedding(ts);                      // [B, ted]
    temb = linear("temb.fc1", temb);
    temb = linear("temb.fc2", silu(temb));
    Tensor temb_act = silu(temb);                          // shared by all res blocks

    Tensor h = conv2d(x, P("stem.w"), P("stem.b"));
    std::vector<Tensor> skips;
    for (int l = 0; l < L; ++l) {
      for (int r = 0; r < cfg_.num_res_blocks; ++r)
        h = res_block("down" + std::to_string(l) + ".rb" + std::to_string(r), h, temb_act);
      skips.push_back(h);
      if (l < L - 1) h = avg_pool2(h);
    }
    h = res_block("mid.rb0", h, temb_act);
    if (mid_attention()) h = attention("mid.attn", h);
    for (int l = L - 1; l >= 0; --l) {
      h = concat({h, skips[static_cast<size_t>(l)]}, 1);
      for (int r = 0; r < cfg_.num_res_blocks; ++r)
        h = res_block("up" + std::to_string(l) + ".rb" + std::to_string(r), h, temb_act);
      if (l > 0) h = upsample_nearest2(h);
    }
    h = silu(group_norm(h, P("out.gn.g"), P("out.gn.b"), cfg_.norm_groups));
    return conv2d(h, P("out.conv.w"), P("out.conv.b"));
  }

  Tensor forward(const Tensor& x, int t, int T) const {
    return forward(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t), T);
  }

  // ---- parameters ----

  std::vector<Tensor> base_params() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& it : params_) out.push_back(it.t);
    return out;
  }
  std::vector<Tensor> adapter_params() const {
    std::vector<Tensor> out;
    out.reserve(2 * adapters_.size());
    for (const auto& a : adapters_) {
      out.push_back(a.B);
      out.push_back(a.A);
    }
    return out;
  }
  int64_t base_param_count() const {
    int64_t n = 0;
    for (const auto& it : params_) n += it.t.numel();
    return n;
  }
  int64_t adapter_param_count() const {
    int64_t n = 0;
    for (const auto& a : adapters_) n += a.A.numel() + a.B.numel();
    return n;
  }
  void set_base_trainable(bool on) {
    for (auto& it : params_) it.t.set_requires_grad(on);
  }
  void set_adapters_trainable(bool on) {
    for (auto& a : adapters_) {
      a.A.set_requires_grad(on);
      a.B.set_requires_grad(on);
    }
  }

  uint64_t base_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& it : params_)
      for (double v : it.t.value()) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int k = 0; k < 8; ++k) {
          h ^= (bits >> (8 * k)) & 0xff;
          h *= 1099511628211ull;
        }
      }
    return h;
  }

  // ---- low-rank adapters ----

  void inject_lora(int rank, double scale, uint64_t seed) {
    if (rank < 1) op_error("inject_lora", "rank must be positive");
    if (!adapters_.empty()) op_error("inject_lora", "adapters already injected");
    lora_rank_ = rank;
    lora_scale_ = scale;
    Rng rng(mix_seed(seed, 0x6c6f7261));
    for (const auto& it : params_) {
      if (!lora_target(it.name)) continue;
      Lora a;
      a.target = it.name;
      int64_t out = it.t.dim(0);
      int64_t in = it.t.numel() / out;
      a.B = Tensor::zeros({out, rank});
      a.A = Tensor::randn({rank, in}, rng, 1.0 / std::sqrt(double(in)));
      aindex_[a.target] = adapters_.size();
      adapters_.push_back(std::move(a));
    }
    init_state_ = adapter_state();
  }

  bool has_adapters() const { return !adapters_.empty(); }
  int lora_rank() const { return lora_rank_; }
  double lora_scale() const { return lora_scale_; }
  size_t adapter_layer_count() const { return adapters_.size(); }

  std::vector<std::vector<double>> adapter_state() const {
    std::vector<std::vector<double>> out;
    out.reserve(2 * adapters_.size());
    for (const auto& a : adapters_) {
      out.push_back(a.B.value());
      out.push_back(a.A.value());
    }
    return out;
  }
  void set_adapter_state(const std::vector<std::vector<double>>& st) {
    if (st.size() != 2 * adapters_.size()) op_error("set_adapter_state", "state size mismatch");
    for (size_t i = 0; i < adapters_.size(); ++i) {
      if (st[2 * i].size() != adapters_[i].B.value().size() ||
          st[2 * i + 1].size() != adapters_[i].A.value().size())
        op_error("set_adapter_state", "tensor size mismatch at " + adapters_[i].target);
      adapters_[i].B.raw() = st[2 * i];
      adapters_[i].A.raw() = st[2 * i + 1];
    }
  }
  void reset_adapters() { set_adapter_state(init_state_); }

  // ---- checkpoints ----

  void save_base(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_header(f, 0);
    write_u64(f, params_.size());
    for (const auto& it : params_) write_tensor(f, it.name, it.t);
  }

  static Denoiser load_base(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json meta = read_header(f, 0, path);
    Denoiser d(meta.at("config").get<DenoiserConfig>(), 0);
    uint64_t n = read_u64(f);
    if (n != d.params_.size()) throw std::runtime_error(path + ": parameter count mismatch");
    for (uint64_t i = 0; i < n; ++i) {
      auto [name, t] = read_tensor(f, path);
      auto it = d.index_.find(name);
      if (it == d.index_.end()) throw std::runtime_error(path + ": unknown parameter " + name);
      Tensor& dst = d.params_[it->second].t;
      if (dst.shape() != t.shape()) throw std::runtime_error(path + ": shape mismatch for " + name);
      dst.raw() = t.value();
    }
    return d;
  }

  void save_adapters(const std::string& path) const {
    if (adapters_.empty()) op_error("save_adapters", "no adapters injected");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_header(f, 1);
    write_u64(f, 2 * adapters_.size());
    for (const auto& a : adapters_) {
      write_tensor(f, a.target + ".B", a.B);
      write_tensor(f, a.target + ".A", a.A);
    }
  }

  void load_adapters(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json meta = read_header(f, 1, path);
    int rank = meta.at("lora_rank").get<int>();
    double scale = meta.at("lora_scale").get<double>();
    if (adapters_.empty()) inject_lora(rank, scale, 0);
    if (rank != lora_rank_) throw std::runtime_error(path + ": adapter rank mismatch");
    lora_scale_ = scale;
    uint64_t n = read_u64(f);
    if (n != 2 * adapters_.size()) throw std::runtime_error(path + ": adapter count mismatch");
    for (uint64_t i = 0; i < n; ++i) {
      auto [name, t] = read_tensor(f, path);
      bool isB = name.size() > 2 && name.substr(name.size() - 2) == ".B";
      std::string target = name.substr(0, name.size() - 2);
      auto it = aindex_.find(target);
      if (it == aindex_.end()) throw std::runtime_error(path + ": unknown adapter target " + target);
      Tensor& dst = isB ? adapters_[it->second].B : adapters_[it->second].A;
      if (dst.shape() != t.shape()) throw std::runtime_error(path + ": shape mismatch for " + name);
      dst.raw() = t.value();
    }
    init_state_ = adapter_state();
  }

 private:
  struct Item {
    std::string name;
    Tensor t;
  };
  struct Lora {
    std::string target;
    Tensor B, A;  // delta = scale * B A applied to the flattened weight
  };

  DenoiserConfig cfg_;
  std::vector<Item> params_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<Lora> adapters_;
  std::unordered_map<std::string, size_t> aindex_;
  std::vector<std::vector<double>> init_state_;
  int lora_rank_ = 0;
  double lora_scale_ = 1.0;

  int levels() const { return static_cast<int>(cfg_.channel_multipliers.size()); }
  int ch(int l) const { return cfg_.base_channels * cfg_.channel_multipliers[static_cast<size_t>(l)]; }
  bool mid_attention() const {
    int mid_res = cfg_.image_size >> (levels() - 1);
    for (int r : cfg_.attention_resolutions)
      if (r == mid_res) return true;
    return false;
  }

  void validate_config() const {
    int s = cfg_.image_size;
    if (s < 4 || s > 64 || (s & (s - 1)))
      op_error("Denoiser", "image_size must be a power of two in [4,64]");
    if (cfg_.channel_multipliers.empty()) op_error("Denoiser", "need at least one level");
    if (s >> (levels() - 1) < 2)
      op_error("Denoiser", "too many levels for image_size " + std::to_string(s));
    if (cfg_.base_channels % cfg_.norm_groups)
      op_error("Denoiser", "base_channels must be divisible by norm_groups");
    for (int m : cfg_.channel_multipliers)
      if (m < 1) op_error("Denoiser", "channel multipliers must be positive");
    if (cfg_.time_embed_dim % 2) op_error("Denoiser", "time_embed_dim must be even");
  }

  void add_param(const std::string& name, Tensor t) {
    index_[name] = params_.size();
    params_.push_back({name, std::move(t)});
  }
  void add_conv(const std::string& name, int out, int in, int k, Rng& rng) {
    add_param(name + ".w", Tensor::randn({out, in, k, k}, rng, 1.0 / std::sqrt(double(in * k * k))));
    add_param(name + ".b", Tensor::zeros({out}));
  }
  void add_linear(const std::string& name, int out, int in, Rng& rng) {
    add_param(name + ".w", Tensor::randn({out, in}, rng, 1.0 / std::sqrt(double(in))));
    add_param(name + ".b", Tensor::zeros({out}));
  }
  void add_res_block(const std::string& pre, int in, int out, int tdim, Rng& rng) {
    add_param(pre + ".gn1.g", Tensor::full({in}, 1.0));
    add_param(pre + ".gn1.b", Tensor::zeros({in}));
    add_conv(pre + ".conv1", out, in, 3, rng);
    add_linear(pre + ".temb", out, tdim, rng);
    add_param(pre + ".gn2.g", Tensor::full({out}, 1.0));
    add_param(pre + ".gn2.b", Tensor::zeros({out}));
    add_conv(pre + ".conv2", out, out, 3, rng);
    if (in != out) add_conv(pre + ".skip", out, in, 1, rng);
  }

  const Tensor& P(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) op_error("Denoiser", "no parameter named " + name);
    return params_[it->second].t;
  }

  static bool lora_target(const std::string& name) {
    auto ends = [&](const char* suf) {
      size_t n = std::strlen(suf);
      return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
    };
    bool rb_conv = (name.rfind("down", 0) == 0 || name.rfind("up", 0) == 0 ||
                    name.rfind("mid.rb", 0) == 0) &&
                   (ends(".conv1.w") || ends(".conv2.w") || ends(".skip.w"));
    bool attn = name.rfind("mid.attn.", 0) == 0 && ends(".w") && !ends(".gn.w");
    return rb_conv || attn;
  }

  // weight with its low-rank delta composed in-graph
  Tensor W(const std::string& name) const {
    const Tensor& w = P(name);
    auto it = aindex_.find(name);
    if (it == aindex_.end()) return w;
    const Lora& a = adapters_[it->second];
    Tensor delta = scalar_mul(matmul(a.B, a.A), lora_scale_);
    Tensor flat = reshape(w, {w.dim(0), w.numel() / w.dim(0)});
    return reshape(add(flat, delta), w.shape());
  }

  Tensor time_embedding(const std::vector<int>& ts) const {
    int ted = cfg_.time_embed_dim, half = ted / 2;
    int64_t B = static_cast<int64_t>(ts.size());
    std::vector<double> v(static_cast<size_t>(B * ted));
    for (int64_t b = 0; b < B; ++b)
      for (int i = 0; i < half; ++i) {
        double f = std::pow(10000.0, -double(i) / double(half));
        v[static_cast<size_t>(b * ted + i)] = std::sin(ts[static_cast<size_t>(b)] * f);
        v[static_cast<size_t>(b * ted + half + i)] = std::cos(ts[static_cast<size_t>(b)] * f);
      }
    return Tensor({B, ted}, std::move(v));
  }

  Tensor linear(const std::string& pre, const Tensor& x) const {
    const Tensor& w = P(pre + ".w");
    const Tensor& b = P(pre + ".b");
    int64_t B = x.dim(0), out = w.dim(0);
    return add(matmul(x, transpose2d(w)), broadcast_to(reshape(b, {1, out}), {B, out}));
  }

  Tensor res_block(const std::string& pre, const Tensor& x, const Tensor& temb_act) const {
    int64_t B = x.dim(0), H = x.dim(2), Wd = x.dim(3);
    int64_t out = P(pre + ".conv1.w").dim(0);
    Tensor h = conv2d(silu(group_norm(x, P(pre + ".gn1.g"), P(pre + ".gn1.b"), cfg_.norm_groups)),
                      W(pre + ".conv1.w"), P(pre + ".conv1.b"));
    Tensor tp = linear(pre + ".temb", temb_act);  // [B,out]
    h = add(h, broadcast_to(reshape(tp, {B, out, 1, 1}), {B, out, H, Wd}));
    h = conv2d(silu(group_norm(h, P(pre + ".gn2.g"), P(pre + ".gn2.b"), cfg_.norm_groups)),
               W(pre + ".conv2.w"), P(pre + ".conv2.b"));
    Tensor skip = (x.dim(1) == out) ? x : conv2d(x, W(pre + ".skip.w"), P(pre + ".skip.b"));
    return add(h, skip);
  }

  Tensor attention(const std::string& pre, const Tensor& x) const {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3), HW = H * Wd;
    Tensor n = group_norm(x, P(pre + ".gn.g"), P(pre + ".gn.b"), cfg_.norm_groups);
    auto proj = [&](const char* name, const Tensor& flat) {
      Tensor w = W(pre + "." + name + ".w");
      const Tensor& b = P(pre + "." + std::string(name) + ".b");
      return add(matmul(w, flat), broadcast_to(reshape(b, {C, 1}), {C, HW}));
    };
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
      Tensor flat = reshape(slice(n, 0, b, 1), {C, HW});
      Tensor q = proj("q", flat), k = proj("k", flat), v = proj("v", flat);
      Tensor logits = scalar_mul(matmul(transpose2d(q), k), 1.0 / std::sqrt(double(C)));
      Tensor attn = softmax_rows(logits);                      // [HW,HW]
      Tensor o = proj("o", matmul(v, transpose2d(attn)));      // [C,HW]
      outs.push_back(reshape(o, {1, C, H, Wd}));
    }
    return add(x, concat(outs, 0));
  }

  // ---- checkpoint plumbing ----

  static void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  void write_header(std::ofstream& f, uint8_t kind) const {
    write_u32(f, 0x54465244u);  // "DRFT"
    write_u32(f, 1u);
    f.put(static_cast<char>(kind));
    nlohmann::json meta;
    meta["config"] = cfg_;
    if (kind == 1) {
      meta["lora_rank"] = lora_rank_;
      meta["lora_scale"] = lora_scale_;
    }
    std::string s = meta.dump();
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static nlohmann::json read_header(std::ifstream& f, uint8_t kind, const std::string& path) {
    if (read_u32(f) != 0x54465244u) throw std::runtime_error(path + ": not a checkpoint file");
    if (read_u32(f) != 1u) throw std::runtime_error(path + ": unsupported checkpoint version");
    int k = f.get();
    if (k != kind) throw std::runtime_error(path + ": wrong checkpoint kind");
    uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw std::runtime_error(path + ": truncated header");
    return nlohmann::json::parse(s);
  }

  static void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_u64(f, static_cast<uint64_t>(d));
    f.write(reinterpret_cast<const char*>(t.value().data()),
            static_cast<std::streamsize>(8 * t.value().size()));
  }

  static std::pair<std::string, Tensor> read_tensor(std::ifstream& f, const std::string& path) {
    uint32_t nl = read_u32(f);
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    uint32_t nd = read_u32(f);
    Shape shape(nd);
    for (auto& d : shape) d = static_cast<int64_t>(read_u64(f));
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(8 * data.size()));
    if (!f) throw std::runtime_error(path + ": truncated tensor data");
    return {name, Tensor(shape, std::move(data))};
  }
};

}  // namespace drift
