#pragma once

// Simulated measurement operators: parallel-beam CT with a pixel-driven
// bilinear footprint, single- and multi-coil Cartesian MRI via an
// unnormalized DFT, exact adjoints, noisy measurement simulation, and
// raw-file measurement I/O.
//
// Conventions: CT images are [1,S,S]; MRI images are [2,S,S] (real and
// imaginary planes). MRI measurements keep the full k-space shape with
// unsampled entries structurally zero. The DFT is unnormalized, so a full
// mask satisfies ||y||^2 = S^2 ||x||^2.

#include <algorithm>
#include <complex>
#include <fstream>

#include "drift/linear.hpp"
#include "drift/random.hpp"
#include "drift/tensor.hpp"

namespace drift {

enum class OpKind { ct_parallel, mri_single, mri_multicoil };

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::ct_parallel: return "ct_parallel";
    case OpKind::mri_single: return "mri_single";
    default: return "mri_multicoil";
  }
}

struct OperatorSpec {
  OpKind kind = OpKind::ct_parallel;
  int image_size = 32;
  double sigma_y = 0.01;
  // ct
  std::vector<double> angles_deg;
  int detectors = 0;  // 0: same as image side
  // mri
  std::vector<uint8_t> mask;                  // S*S, row major, 1 = sampled
  std::vector<std::complex<double>> coils;    // C * S * S maps

  int num_coils() const {
    int s2 = image_size * image_size;
    return coils.empty() ? 0 : static_cast<int>(coils.size()) / s2;
  }
  int detector_count() const { return detectors > 0 ? detectors : image_size; }

  Shape domain_shape() const {
    int64_t S = image_size;
    return kind == OpKind::ct_parallel ? Shape{1, S, S} : Shape{2, S, S};
  }
  Shape range_shape() const {
    int64_t S = image_size;
    switch (kind) {
      case OpKind::ct_parallel:
        return {static_cast<int64_t>(angles_deg.size()), detector_count()};
      case OpKind::mri_single:
        return {2, S, S};
      default:
        return {num_coils(), 2, S, S};
    }
  }
};

inline void validate_spec(const OperatorSpec& spec) {
  int S = spec.image_size;
  if (S < 2) op_error("OperatorSpec", "image_size too small");
  if (spec.sigma_y < 0) op_error("OperatorSpec", "sigma_y must be nonnegative");
  if (spec.kind == OpKind::ct_parallel) {
    if (spec.angles_deg.empty()) op_error("OperatorSpec", "ct needs at least one angle");
    return;
  }
  if (static_cast<int>(spec.mask.size()) != S * S)
    op_error("OperatorSpec", "mask must have image_size^2 entries");
  for (uint8_t m : spec.mask)
    if (m > 1) op_error("OperatorSpec", "mask values must be 0 or 1");
  if (spec.kind == OpKind::mri_multicoil) {
    int C = spec.num_coils();
    if (C < 1 || static_cast<int>(spec.coils.size()) != C * S * S)
      op_error("OperatorSpec", "coil maps must be C full images");
    for (int i = 0; i < S * S; ++i) {
      double joint = 0;
      for (int c = 0; c < C; ++c) joint += std::norm(spec.coils[static_cast<size_t>(c * S * S + i)]);
      if (joint <= 0) op_error("OperatorSpec", "coil maps vanish jointly at a pixel");
    }
  }
}

namespace detail {

struct CtWeight {
  int32_t pixel;
  int32_t det;
  double w;
};

// pixel-driven: each pixel center projects onto the detector axis and its
// value is split linearly between the two nearest detector bins; weights
// carry the pixel footprint h so line integrals are resolution-consistent
inline std::vector<std::vector<CtWeight>> ct_weights(const OperatorSpec& spec) {
  int S = spec.image_size, D = spec.detector_count();
  double h = 1.0 / S;
  double det_spacing = std::sqrt(2.0) * h;
  std::vector<std::vector<CtWeight>> per_angle(spec.angles_deg.size());
  for (size_t k = 0; k < spec.angles_deg.size(); ++k) {
    double th = spec.angles_deg[k] * 3.14159265358979323846 / 180.0;
    double c = std::cos(th), s = std::sin(th);
    auto& ws = per_angle[k];
    ws.reserve(static_cast<size_t>(2 * S * S));
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        double x = (j + 0.5) * h - 0.5, y = (i + 0.5) * h - 0.5;
        double u = x * c + y * s;
        double fd = u / det_spacing + 0.5 * (D - 1);
        int d0 = static_cast<int>(std::floor(fd));
        double w1 = fd - d0;
        if (d0 >= 0 && d0 < D && w1 < 1.0)
          ws.push_back({i * S + j, d0, (1.0 - w1) * h});
        if (d0 + 1 >= 0 && d0 + 1 < D && w1 > 0.0)
          ws.push_back({i * S + j, d0 + 1, w1 * h});
      }
  }
  return per_angle;
}

using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline CMat dft_matrix(int S) {
  CMat F(S, S);
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) {
      double ph = -2.0 * 3.14159265358979323846 * a * b / S;
      F(a, b) = std::complex<double>(std::cos(ph), std::sin(ph));
    }
  return F;
}

inline CMat planes_to_complex(const double* v, int S) {
  CMat X(S, S);
  for (int i = 0; i < S * S; ++i)
    X.data()[i] = std::complex<double>(v[i], v[S * S + i]);
  return X;
}

inline void complex_to_planes(const CMat& X, double* v, int S) {
  for (int i = 0; i < S * S; ++i) {
    v[i] = X.data()[i].real();
    v[S * S + i] = X.data()[i].imag();
  }
}

}  // namespace detail

inline LinearMapPtr make_linear_map(const OperatorSpec& spec) {
  validate_spec(spec);
  auto m = std::make_shared<LinearMap>();
  m->name = op_kind_name(spec.kind);
  m->domain = spec.domain_shape();
  m->range = spec.range_shape();
  int S = spec.image_size;

  if (spec.kind == OpKind::ct_parallel) {
    auto weights = std::make_shared<std::vector<std::vector<detail::CtWeight>>>(
        detail::ct_weights(spec));
    int D = spec.detector_count();
    m->fwd = [weights, D](const std::vector<double>& x) {
      std::vector<double> y(weights->size() * static_cast<size_t>(D), 0.0);
      for (size_t k = 0; k < weights->size(); ++k) {
        double* row = y.data() + k * static_cast<size_t>(D);
        for (const auto& w : (*weights)[k]) row[w.det] += w.w * x[static_cast<size_t>(w.pixel)];
      }
      return y;
    };
    m->adj = [weights, D, S](const std::vector<double>& y) {
      std::vector<double> x(static_cast<size_t>(S) * S, 0.0);
      for (size_t k = 0; k < weights->size(); ++k) {
        const double* row = y.data() + k * static_cast<size_t>(D);
        for (const auto& w : (*weights)[k]) x[static_cast<size_t>(w.pixel)] += w.w * row[w.det];
      }
      return x;
    };
    return m;
  }

  auto F = std::make_shared<detail::CMat>(detail::dft_matrix(S));
  auto mask = std::make_shared<std::vector<uint8_t>>(spec.mask);

  if (spec.kind == OpKind::mri_single) {
    m->fwd = [F, mask, S](const std::vector<double>& v) {
      detail::CMat X = detail::planes_to_complex(v.data(), S);
      detail::CMat Y = (*F) * X * (*F);
      for (int i = 0; i < S * S; ++i)
        if (!(*mask)[static_cast<size_t>(i)]) Y.data()[i] = 0.0;
      std::vector<double> out(static_cast<size_t>(2) * S * S);
      detail::complex_to_planes(Y, out.data(), S);
      return out;
    };
    m->adj = [F, mask, S](const std::vector<double>& v) {
      detail::CMat Y = detail::planes_to_complex(v.data(), S);
      for (int i = 0; i < S * S; ++i)
        if (!(*mask)[static_cast<size_t>(i)]) Y.data()[i] = 0.0;
      detail::CMat X = F->adjoint() * Y * F->adjoint();
      std::vector<double> out(static_cast<size_t>(2) * S * S);
      detail::complex_to_planes(X, out.data(), S);
      return out;
    };
    return m;
  }

  auto coils = std::make_shared<std::vector<std::complex<double>>>(spec.coils);
  int C = spec.num_coils();
  m->fwd = [F, mask, coils, S, C](const std::vector<double>& v) {
    detail::CMat X = detail::planes_to_complex(v.data(), S);
    std::vector<double> out(static_cast<size_t>(C) * 2 * S * S);
    for (int c = 0; c < C; ++c) {
      detail::CMat Xc = X;
      for (int i = 0; i < S * S; ++i) Xc.data()[i] *= (*coils)[static_cast<size_t>(c * S * S + i)];
      detail::CMat Y = (*F) * Xc * (*F);
      for (int i = 0; i < S * S; ++i)
        if (!(*mask)[static_cast<size_t>(i)]) Y.data()[i] = 0.0;
      detail::complex_to_planes(Y, out.data() + static_cast<size_t>(c) * 2 * S * S, S);
    }
    return out;
  };
  m->adj = [F, mask, coils, S, C](const std::vector<double>& v) {
    detail::CMat acc = detail::CMat::Zero(S, S);
    for (int c = 0; c < C; ++c) {
      detail::CMat Y = detail::planes_to_complex(v.data() + static_cast<size_t>(c) * 2 * S * S, S);
      for (int i = 0; i < S * S; ++i)
        if (!(*mask)[static_cast<size_t>(i)]) Y.data()[i] = 0.0;
      detail::CMat X = F->adjoint() * Y * F->adjoint();
      for (int i = 0; i < S * S; ++i)
        acc.data()[i] += std::conj((*coils)[static_cast<size_t>(c * S * S + i)]) * X.data()[i];
    }
    std::vector<double> out(static_cast<size_t>(2) * S * S);
    detail::complex_to_planes(acc, out.data(), S);
    return out;
  };
  return m;
}

inline Tensor apply_op(const OperatorSpec& spec, const Tensor& x) {
  return apply_map(make_linear_map(spec), x);
}
inline Tensor adjoint_op(const OperatorSpec& spec, const Tensor& y) {
  return apply_adjoint(make_linear_map(spec), y);
}

// 1 where the range entry is actually acquired; noise is only added there
inline std::vector<uint8_t> range_support(const OperatorSpec& spec) {
  size_t n = static_cast<size_t>(shape_numel(spec.range_shape()));
  if (spec.kind == OpKind::ct_parallel) return std::vector<uint8_t>(n, 1);
  int S = spec.image_size;
  int reps = static_cast<int>(n) / (S * S);
  std::vector<uint8_t> sup(n);
  for (int r = 0; r < reps; ++r)
    for (int i = 0; i < S * S; ++i) sup[static_cast<size_t>(r * S * S + i)] = spec.mask[static_cast<size_t>(i)];
  return sup;
}

inline Tensor simulate_measurement(const OperatorSpec& spec, const Tensor& x, uint64_t seed) {
  NoGradGuard ng;
  Tensor y = apply_op(spec, x);
  if (spec.sigma_y == 0.0) return y;
  Rng rng(mix_seed(seed, 0x6d656173));
  auto sup = range_support(spec);
  std::vector<double> v = y.value();
  for (size_t i = 0; i < v.size(); ++i)
    if (sup[i]) v[i] += spec.sigma_y * rng.normal();
  return Tensor(y.shape(), std::move(v));
}

// Tikhonov-damped least squares via cg on (A^T A + delta I); behaves like
// zero-filled adjoint reconstruction (up to scale) for orthogonal-row ops
inline Tensor pseudo_inverse(const OperatorSpec& spec, const Tensor& y, int max_iter = 30,
                             double damping = 1e-6) {
  return pinv_apply(make_linear_map(spec), y, max_iter, damping);
}

// ---- mask and coil factories ---------------------------------------------

// variable-density Bernoulli mask: fully sampled low-frequency square plus
// Gaussian-decaying keep probability outside
inline std::vector<uint8_t> make_vd_mask(int S, double center_frac, double outer_rate,
                                         uint64_t seed) {
  if (center_frac < 0 || center_frac > 1 || outer_rate < 0 || outer_rate > 1)
    op_error("make_vd_mask", "fractions must lie in [0,1]");
  Rng rng(mix_seed(seed, 0x6d61736b));
  std::vector<uint8_t> mask(static_cast<size_t>(S) * S, 0);
  double half = 0.5 * center_frac * S;
  double sigma = 0.25 * S;
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) {
      // centered frequency coordinates (DC at index 0)
      int fa = ((a + S / 2) % S) - S / 2;
      int fb = ((b + S / 2) % S) - S / 2;
      bool center = std::abs(fa) <= half && std::abs(fb) <= half;
      double p = outer_rate * std::exp(-(fa * fa + fb * fb) / (2 * sigma * sigma)) / 0.5;
      mask[static_cast<size_t>(a * S + b)] = (center || rng.uniform() < p) ? 1 : 0;
    }
  return mask;
}

// 1D undersampling: keep a fraction of full columns uniformly at random
// plus a fully sampled center band of acs_frac columns
inline std::vector<uint8_t> make_line_mask(int S, double accel, double acs_frac, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6c696e65));
  std::vector<uint8_t> keep_col(static_cast<size_t>(S), 0);
  int acs = std::max(1, static_cast<int>(acs_frac * S));
  for (int b = 0; b < S; ++b) {
    int fb = ((b + S / 2) % S) - S / 2;
    if (std::abs(fb) <= acs / 2) keep_col[static_cast<size_t>(b)] = 1;
  }
  int want = static_cast<int>(S / accel);
  std::vector<int> rest;
  for (int b = 0; b < S; ++b)
    if (!keep_col[static_cast<size_t>(b)]) rest.push_back(b);
  // random subset of the remaining columns up to the target rate
  for (int n = static_cast<int>(std::count(keep_col.begin(), keep_col.end(), 1));
       n < want && !rest.empty(); ++n) {
    size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(rest.size())));
    keep_col[static_cast<size_t>(rest[pick])] = 1;
    rest.erase(rest.begin() + static_cast<int64_t>(pick));
  }
  std::vector<uint8_t> mask(static_cast<size_t>(S) * S);
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) mask[static_cast<size_t>(a * S + b)] = keep_col[static_cast<size_t>(b)];
  return mask;
}

// C smooth complex Gaussian coil maps, jointly normalized to sum |s|^2 = 1
inline std::vector<std::complex<double>> make_coil_maps(int S, int C) {
  std::vector<std::complex<double>> coils(static_cast<size_t>(C) * S * S);
  for (int c = 0; c < C; ++c) {
    double ang = 2 * 3.14159265358979323846 * c / C;
    double cx = 0.5 + 0.45 * std::cos(ang), cy = 0.5 + 0.45 * std::sin(ang);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        double x = (j + 0.5) / S, y = (i + 0.5) / S;
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        double mag = std::exp(-d2 / 0.5);
        double ph = 0.5 * (c + 1) * (x - y);
        coils[static_cast<size_t>(c * S * S + i * S + j)] =
            std::polar(mag, ph);
      }
  }
  for (int i = 0; i < S * S; ++i) {
    double joint = 0;
    for (int c = 0; c < C; ++c) joint += std::norm(coils[static_cast<size_t>(c * S * S + i)]);
    double inv = 1.0 / std::sqrt(joint);
    for (int c = 0; c < C; ++c) coils[static_cast<size_t>(c * S * S + i)] *= inv;
  }
  return coils;
}

// ---- task factories --------------------------------------------------------

inline OperatorSpec make_ct_spec(int S, int num_angles, double sigma_y = 0.01) {
  OperatorSpec spec;
  spec.kind = OpKind::ct_parallel;
  spec.image_size = S;
  spec.sigma_y = sigma_y;
  for (int k = 0; k < num_angles; ++k) spec.angles_deg.push_back(180.0 * k / num_angles);
  return spec;
}

inline OperatorSpec make_mri3d_spec(int S, uint64_t seed, double sigma_y = 0.01) {
  OperatorSpec spec;
  spec.kind = OpKind::mri_single;
  spec.image_size = S;
  spec.sigma_y = sigma_y;
  spec.mask = make_vd_mask(S, 0.12, 0.35, seed);
  return spec;
}

inline OperatorSpec make_csmri_spec(int S, uint64_t seed, double sigma_y = 0.01) {
  OperatorSpec spec;
  spec.kind = OpKind::mri_multicoil;
  spec.image_size = S;
  spec.sigma_y = sigma_y;
  spec.mask = make_line_mask(S, 4.0, 0.08, seed);
  spec.coils = make_coil_maps(S, 4);
  return spec;
}

// ---- measurement files ------------------------------------------------------

inline uint64_t bytes_hash(const void* data, size_t n) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

// raw little-endian float32 (CT) or interleaved complex64 (MRI) plus a text
// sidecar describing the acquisition
inline void write_measurement(const std::string& path, const OperatorSpec& spec, const Tensor& y,
                              uint64_t seed) {
  if (y.shape() != spec.range_shape()) op_error("write_measurement", "tensor does not match range");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  std::vector<float> buf(y.value().size());
  if (spec.kind == OpKind::ct_parallel) {
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(y.value()[i]);
  } else {
    // planes -> interleaved re,im per sample
    int S = spec.image_size;
    size_t planes = buf.size() / (2 * static_cast<size_t>(S) * S);
    for (size_t c = 0; c < planes; ++c) {
      const double* re = y.value().data() + c * 2 * S * S;
      const double* im = re + S * S;
      float* dst = buf.data() + c * 2 * S * S;
      for (int i = 0; i < S * S; ++i) {
        dst[2 * i] = static_cast<float>(re[i]);
        dst[2 * i + 1] = static_cast<float>(im[i]);
      }
    }
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));

  std::ofstream meta(path + ".meta");
  meta << "kind=" << op_kind_name(spec.kind) << "\n";
  meta << "image_size=" << spec.image_size << "\n";
  meta << "shape=";
  auto rs = spec.range_shape();
  for (size_t i = 0; i < rs.size(); ++i) meta << (i ? "," : "") << rs[i];
  meta << "\n";
  meta << "dtype=" << (spec.kind == OpKind::ct_parallel ? "float32" : "complex64") << "\n";
  meta << "sigma_y=" << spec.sigma_y << "\n";
  meta << "seed=" << seed << "\n";
  if (spec.kind == OpKind::ct_parallel) {
    meta << "angles=";
    for (size_t i = 0; i < spec.angles_deg.size(); ++i)
      meta << (i ? "," : "") << spec.angles_deg[i];
    meta << "\n";
    meta << "detectors=" << spec.detector_count() << "\n";
  } else {
    meta << "mask_hash=" << bytes_hash(spec.mask.data(), spec.mask.size()) << "\n";
    if (!spec.coils.empty()) {
      meta << "coils=" << spec.num_coils() << "\n";
      meta << "coils_hash=" << bytes_hash(spec.coils.data(), 16 * spec.coils.size()) << "\n";
    }
  }
}

inline Tensor read_measurement(const std::string& path, const OperatorSpec& spec) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  size_t n = static_cast<size_t>(shape_numel(spec.range_shape()));
  std::vector<float> buf(n);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * n));
  if (!f) throw std::runtime_error(path + ": truncated measurement file");
  std::vector<double> v(n);
  if (spec.kind == OpKind::ct_parallel) {
    for (size_t i = 0; i < n; ++i) v[i] = buf[i];
  } else {
    int S = spec.image_size;
    size_t planes = n / (2 * static_cast<size_t>(S) * S);
    for (size_t c = 0; c < planes; ++c) {
      const float* src = buf.data() + c * 2 * S * S;
      double* re = v.data() + c * 2 * S * S;
      double* im = re + S * S;
      for (int i = 0; i < S * S; ++i) {
        re[i] = src[2 * i];
        im[i] = src[2 * i + 1];
      }
    }
  }
  return Tensor(spec.range_shape(), std::move(v));
}

}  // namespace drift
