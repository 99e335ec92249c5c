#pragma once

// Procedural training phantoms (random ellipses) and held-out volume
// families whose slices drift smoothly via an AR(1) latent walk.

#include "drift/tensor.hpp"

namespace drift {

struct EllipsePhantomSpec {
  int image_size = 32;
  int min_count = 3, max_count = 8;
  double min_axis = 0.06, max_axis = 0.30;      // fractions of the unit square
  double min_intensity = 0.2, max_intensity = 0.7;
  double background = 0.0;
  double center_margin = 0.2;
};

inline Tensor sample_ellipse_phantom(const EllipsePhantomSpec& spec, Rng& rng) {
  int S = spec.image_size;
  int n = spec.min_count + static_cast<int>(rng.uniform_int(spec.max_count - spec.min_count + 1));
  struct E {
    double cx, cy, a, b, phi, v;
  };
  std::vector<E> es(static_cast<size_t>(n));
  for (auto& e : es) {
    e.cx = rng.uniform(spec.center_margin, 1.0 - spec.center_margin);
    e.cy = rng.uniform(spec.center_margin, 1.0 - spec.center_margin);
    e.a = rng.uniform(spec.min_axis, spec.max_axis);
    e.b = rng.uniform(spec.min_axis, spec.max_axis);
    e.phi = rng.uniform(0.0, 3.14159265358979323846);
    e.v = rng.uniform(spec.min_intensity, spec.max_intensity);
  }
  std::vector<double> img(static_cast<size_t>(S) * S, spec.background);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double px = (x + 0.5) / S, py = (y + 0.5) / S;
      double acc = img[static_cast<size_t>(y * S + x)];
      for (const auto& e : es) {
        double dx = px - e.cx, dy = py - e.cy;
        double u = (dx * std::cos(e.phi) + dy * std::sin(e.phi)) / e.a;
        double v = (-dx * std::sin(e.phi) + dy * std::cos(e.phi)) / e.b;
        if (u * u + v * v <= 1.0) acc += e.v;
      }
      img[static_cast<size_t>(y * S + x)] = std::min(1.0, std::max(0.0, acc));
    }
  return Tensor({1, S, S}, std::move(img));
}

enum class OodKind { rectangles, disks_and_bars, smooth_blobs };

inline const char* ood_kind_name(OodKind k) {
  switch (k) {
    case OodKind::rectangles: return "rectangles";
    case OodKind::disks_and_bars: return "disks_and_bars";
    default: return "smooth_blobs";
  }
}

struct OodVolumeSpec {
  int image_size = 32;
  int num_slices = 16;
  OodKind kind = OodKind::rectangles;
  double drift = 0.9;  // AR(1) coefficient: 0 independent slices, 1 identical
  int min_shapes = 2, max_shapes = 4;
  double min_intensity = 0.3, max_intensity = 0.8;
};

namespace detail {

inline double std_normal_cdf(double u) { return 0.5 * (1.0 + std::erf(u / 1.4142135623730951)); }

// squash a unit-normal latent into [lo,hi]
inline double latent_to(double u, double lo, double hi) { return lo + (hi - lo) * std_normal_cdf(u); }

}  // namespace detail

// [N,1,S,S]; every slice is rendered from its own latent vector, and the
// latents follow theta_k = drift * theta_{k-1} + sqrt(1-drift^2) * noise
inline Tensor sample_ood_volume(const OodVolumeSpec& spec, uint64_t seed) {
  if (spec.drift < 0.0 || spec.drift > 1.0) op_error("sample_ood_volume", "drift must lie in [0,1]");
  if (spec.num_slices < 1) op_error("sample_ood_volume", "need at least one slice");
  int S = spec.image_size, N = spec.num_slices;
  Rng rng(mix_seed(seed, 0x6f6f64));
  int shapes = spec.min_shapes +
               static_cast<int>(rng.uniform_int(spec.max_shapes - spec.min_shapes + 1));
  const int lat_per_shape = 5;
  int D = shapes * lat_per_shape;
  std::vector<double> theta(static_cast<size_t>(D));
  for (auto& v : theta) v = rng.normal();

  std::vector<double> vol(static_cast<size_t>(N) * S * S, 0.0);
  double c = spec.drift, cc = std::sqrt(std::max(0.0, 1.0 - c * c));
  for (int k = 0; k < N; ++k) {
    if (k > 0)
      for (auto& v : theta) v = c * v + cc * rng.normal();
    double* img = vol.data() + static_cast<size_t>(k) * S * S;
    for (int si = 0; si < shapes; ++si) {
      const double* u = theta.data() + si * lat_per_shape;
      double inten = detail::latent_to(u[4], spec.min_intensity, spec.max_intensity);
      if (spec.kind == OodKind::rectangles ||
          (spec.kind == OodKind::disks_and_bars && si % 2 == 1)) {
        // axis-aligned rectangle; odd shapes become thin bars, the farthest
        // this family gets from anything elliptical
        double cx = detail::latent_to(u[0], 0.2, 0.8), cy = detail::latent_to(u[1], 0.2, 0.8);
        double hw = detail::latent_to(u[2], 0.08, 0.3), hh = detail::latent_to(u[3], 0.08, 0.3);
        if (spec.kind == OodKind::disks_and_bars) {
          if (u[2] > 0)
            hw = 0.5, hh = detail::latent_to(u[3], 0.03, 0.08);
          else
            hh = 0.5, hw = detail::latent_to(u[3], 0.03, 0.08);
        } else if (si % 2 == 1) {
          if (u[2] > 0)
            hw = detail::latent_to(u[2], 0.2, 0.45), hh = detail::latent_to(u[3], 0.02, 0.06);
          else
            hh = detail::latent_to(u[2], 0.2, 0.45), hw = detail::latent_to(u[3], 0.02, 0.06);
        }
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            double px = (x + 0.5) / S, py = (y + 0.5) / S;
            if (std::abs(px - cx) <= hw && std::abs(py - cy) <= hh)
              img[y * S + x] += inten;
          }
      } else if (spec.kind == OodKind::disks_and_bars) {
        double cx = detail::latent_to(u[0], 0.2, 0.8), cy = detail::latent_to(u[1], 0.2, 0.8);
        double r = detail::latent_to(u[2], 0.06, 0.25);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            double dx = (x + 0.5) / S - cx, dy = (y + 0.5) / S - cy;
            if (dx * dx + dy * dy <= r * r) img[y * S + x] += inten;
          }
      } else {
        double cx = detail::latent_to(u[0], 0.15, 0.85), cy = detail::latent_to(u[1], 0.15, 0.85);
        double sx = detail::latent_to(u[2], 0.05, 0.2), sy = detail::latent_to(u[3], 0.05, 0.2);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            double dx = ((x + 0.5) / S - cx) / sx, dy = ((y + 0.5) / S - cy) / sy;
            img[y * S + x] += inten * std::exp(-0.5 * (dx * dx + dy * dy));
          }
      }
    }
    for (int i = 0; i < S * S; ++i) img[i] = std::min(1.0, std::max(0.0, img[i]));
  }
  return Tensor({N, 1, S, S}, std::move(vol));
}

// 16-bin intensity histogram + 8-bin gradient-orientation histogram,
// both normalized; returned per image
inline std::vector<double> shape_features(const Tensor& img) {
  int S = static_cast<int>(img.dim(img.rank() - 1));
  int H = static_cast<int>(img.dim(img.rank() - 2));
  const double* p = img.value().data();
  std::vector<double> f(24, 0.0);
  for (int64_t i = 0; i < img.numel(); ++i) {
    int b = std::min(15, std::max(0, static_cast<int>(p[i] * 16.0)));
    f[static_cast<size_t>(b)] += 1.0;
  }
  for (int i = 0; i < 16; ++i) f[static_cast<size_t>(i)] /= static_cast<double>(img.numel());
  double wsum = 0;
  std::vector<double> ori(8, 0.0);
  for (int y = 1; y + 1 < H; ++y)
    for (int x = 1; x + 1 < S; ++x) {
      double gx = 0.5 * (p[y * S + x + 1] - p[y * S + x - 1]);
      double gy = 0.5 * (p[(y + 1) * S + x] - p[(y - 1) * S + x]);
      double mag = std::hypot(gx, gy);
      if (mag < 1e-12) continue;
      double ang = std::atan2(gy, gx);  // fold to [0,pi)
      if (ang < 0) ang += 3.14159265358979323846;
      int b = std::min(7, static_cast<int>(ang / 3.14159265358979323846 * 8.0));
      ori[static_cast<size_t>(b)] += mag;
      wsum += mag;
    }
  if (wsum > 0)
    for (int i = 0; i < 8; ++i) f[static_cast<size_t>(16 + i)] = ori[static_cast<size_t>(i)] / wsum;
  return f;
}

// L1 distance between mean feature vectors of two image sets
inline double shape_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || b.empty()) op_error("shape_distance", "empty sample set");
  std::vector<double> fa(24, 0.0), fb(24, 0.0);
  for (const auto& t : a) {
    auto f = shape_features(t);
    for (int i = 0; i < 24; ++i) fa[static_cast<size_t>(i)] += f[static_cast<size_t>(i)] / a.size();
  }
  for (const auto& t : b) {
    auto f = shape_features(t);
    for (int i = 0; i < 24; ++i) fb[static_cast<size_t>(i)] += f[static_cast<size_t>(i)] / b.size();
  }
  double d = 0;
  for (int i = 0; i < 24; ++i) d += std::abs(fa[static_cast<size_t>(i)] - fb[static_cast<size_t>(i)]);
  return d;
}

}  // namespace drift
