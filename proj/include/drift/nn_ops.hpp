#pragma once

// Neural-net building blocks on top of the tensor graph: same-padded
// stride-1 conv2d (im2col + gemm), 2x pooling and nearest upsampling,
// fused group norm, row softmax.

#include "drift/tensor.hpp"

namespace drift {

namespace detail {

// col is [Cin*kh*kw, H*W] for one image [Cin,H,W], zero padded
inline void im2col(const double* src, double* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                   int64_t kw, int64_t ph, int64_t pw) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        double* dst = col + ((c * kh + ki) * kw + kj) * H * W;
        for (int64_t y = 0; y < H; ++y) {
          int64_t sy = y + ki - ph;
          double* row = dst + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(row, row + W, 0.0);
            continue;
          }
          int64_t x0 = std::max<int64_t>(0, pw - kj);
          int64_t x1 = std::min<int64_t>(W, W + pw - kj);
          std::fill(row, row + x0, 0.0);
          const double* s = src + (c * H + sy) * W + (x0 + kj - pw);
          std::copy(s, s + (x1 - x0), row + x0);
          std::fill(row + x1, row + W, 0.0);
        }
      }
    }
  }
}

inline void col2im_add(const double* col, double* dst, int64_t C, int64_t H, int64_t W, int64_t kh,
                       int64_t kw, int64_t ph, int64_t pw) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const double* src = col + ((c * kh + ki) * kw + kj) * H * W;
        for (int64_t y = 0; y < H; ++y) {
          int64_t sy = y + ki - ph;
          if (sy < 0 || sy >= H) continue;
          int64_t x0 = std::max<int64_t>(0, pw - kj);
          int64_t x1 = std::min<int64_t>(W, W + pw - kj);
          double* d = dst + (c * H + sy) * W + (x0 + kj - pw);
          const double* s = src + y * W + x0;
          for (int64_t i = 0; i < x1 - x0; ++i) d[i] += s[i];
        }
      }
    }
  }
}

}  // namespace detail

// stride 1, zero padded to keep H,W; odd kernels
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor()) {
  if (x.rank() != 4) op_error("conv2d", "input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) op_error("conv2d", "weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape()));
  int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Cin)
    op_error("conv2d", "channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
  if (kh % 2 == 0 || kw % 2 == 0) op_error("conv2d", "kernel dims must be odd");
  bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
    op_error("conv2d", "bias must be [Cout]");
  int64_t ph = kh / 2, pw = kw / 2, HW = H * W, K = Cin * kh * kw;

  std::vector<double> out(static_cast<size_t>(B * Cout * HW));
  std::vector<double> col(static_cast<size_t>(K * HW));
  Eigen::Map<const EigenRM> Wm(w.value().data(), Cout, K);
  for (int64_t b = 0; b < B; ++b) {
    detail::im2col(x.value().data() + b * Cin * HW, col.data(), Cin, H, W, kh, kw, ph, pw);
    Eigen::Map<const EigenRM> Cm(col.data(), K, HW);
    Eigen::Map<EigenRM> Y(out.data() + b * Cout * HW, Cout, HW);
    Y.noalias() = Wm * Cm;
    if (has_bias) {
      for (int64_t c = 0; c < Cout; ++c) {
        double bv = bias.value()[static_cast<size_t>(c)];
        double* row = out.data() + (b * Cout + c) * HW;
        for (int64_t i = 0; i < HW; ++i) row[i] += bv;
      }
    }
  }

  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  auto bw = [B, Cin, H, W, Cout, kh, kw, ph, pw, HW, K, has_bias](TensorImpl& self) {
    auto& px = *self.parents[0];
    auto& pw_ = *self.parents[1];
    std::vector<double> col(static_cast<size_t>(K * HW));
    std::vector<double> dcol(static_cast<size_t>(K * HW));
    Eigen::Map<const EigenRM> Wm(pw_.value.data(), Cout, K);
    if (px.requires_grad) px.ensure_grad();
    if (pw_.requires_grad) pw_.ensure_grad();
    for (int64_t b = 0; b < B; ++b) {
      Eigen::Map<const EigenRM> G(self.grad.data() + b * Cout * HW, Cout, HW);
      if (pw_.requires_grad) {
        detail::im2col(px.value.data() + b * Cin * HW, col.data(), Cin, H, W, kh, kw, ph, pw);
        Eigen::Map<const EigenRM> Cm(col.data(), K, HW);
        Eigen::Map<EigenRM> GW(pw_.grad.data(), Cout, K);
        GW.noalias() += G * Cm.transpose();
      }
      if (px.requires_grad) {
        Eigen::Map<EigenRM> DC(dcol.data(), K, HW);
        DC.noalias() = Wm.transpose() * G;
        detail::col2im_add(dcol.data(), px.grad.data() + b * Cin * HW, Cin, H, W, kh, kw, ph, pw);
      }
    }
    if (has_bias) {
      auto& pb = *self.parents[2];
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < Cout; ++c) {
            const double* row = self.grad.data() + (b * Cout + c) * HW;
            double s = 0;
            for (int64_t i = 0; i < HW; ++i) s += row[i];
            pb.grad[static_cast<size_t>(c)] += s;
          }
      }
    }
  };
  return make_node("conv2d", {B, Cout, H, W}, std::move(out), parents, std::move(bw));
}

inline Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4) op_error("avg_pool2", "input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) op_error("avg_pool2", "H and W must be even, got " + shape_str(x.shape()));
  int64_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<size_t>(B * C * Ho * Wo));
  const double* src = x.value().data();
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xx = 0; xx < Wo; ++xx) {
        const double* s = src + bc * H * W + 2 * y * W + 2 * xx;
        out[static_cast<size_t>(bc * Ho * Wo + y * Wo + xx)] =
            0.25 * (s[0] + s[1] + s[W] + s[W + 1]);
      }
  return make_node("avg_pool2", {B, C, Ho, Wo}, std::move(out), {x},
                   [B, C, H, W, Ho, Wo](TensorImpl& self) {
                     auto& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     for (int64_t bc = 0; bc < B * C; ++bc)
                       for (int64_t y = 0; y < Ho; ++y)
                         for (int64_t xx = 0; xx < Wo; ++xx) {
                           double g = 0.25 * self.grad[static_cast<size_t>(bc * Ho * Wo + y * Wo + xx)];
                           double* d = p.grad.data() + bc * H * W + 2 * y * W + 2 * xx;
                           d[0] += g;
                           d[1] += g;
                           d[W] += g;
                           d[W + 1] += g;
                         }
                   });
}

inline Tensor upsample_nearest2(const Tensor& x) {
  if (x.rank() != 4) op_error("upsample_nearest2", "input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Ho = 2 * H, Wo = 2 * W;
  std::vector<double> out(static_cast<size_t>(B * C * Ho * Wo));
  const double* src = x.value().data();
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xx = 0; xx < Wo; ++xx)
        out[static_cast<size_t>(bc * Ho * Wo + y * Wo + xx)] =
            src[bc * H * W + (y / 2) * W + (xx / 2)];
  return make_node("upsample_nearest2", {B, C, Ho, Wo}, std::move(out), {x},
                   [B, C, H, W, Ho, Wo](TensorImpl& self) {
                     auto& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     for (int64_t bc = 0; bc < B * C; ++bc)
                       for (int64_t y = 0; y < Ho; ++y)
                         for (int64_t xx = 0; xx < Wo; ++xx)
                           p.grad[static_cast<size_t>(bc * H * W + (y / 2) * W + (xx / 2))] +=
                               self.grad[static_cast<size_t>(bc * Ho * Wo + y * Wo + xx)];
                   });
}

// normalizes over channel groups of a [B,C,H,W] tensor, then scales/shifts
// per channel; fused forward and backward
inline Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int64_t groups,
                         double eps = 1e-5) {
  if (x.rank() != 4) op_error("group_norm", "input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % groups) op_error("group_norm", std::to_string(C) + " channels not divisible by " +
                                             std::to_string(groups) + " groups");
  if (gamma.numel() != C || beta.numel() != C) op_error("group_norm", "gamma/beta must be [C]");
  int64_t m = C / groups, HW = H * W, L = m * HW;

  std::vector<double> out(x.value().size());
  std::vector<double> mu(static_cast<size_t>(B * groups)), inv(static_cast<size_t>(B * groups));
  const double* src = x.value().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t g = 0; g < groups; ++g) {
      const double* s = src + (b * C + g * m) * HW;
      double s1 = 0, s2 = 0;
      for (int64_t i = 0; i < L; ++i) {
        s1 += s[i];
        s2 += s[i] * s[i];
      }
      double mean = s1 / static_cast<double>(L);
      double var = s2 / static_cast<double>(L) - mean * mean;
      double iv = 1.0 / std::sqrt(var + eps);
      mu[static_cast<size_t>(b * groups + g)] = mean;
      inv[static_cast<size_t>(b * groups + g)] = iv;
      for (int64_t c = 0; c < m; ++c) {
        double ga = gamma.value()[static_cast<size_t>(g * m + c)];
        double be = beta.value()[static_cast<size_t>(g * m + c)];
        const double* xs = s + c * HW;
        double* ys = out.data() + (b * C + g * m + c) * HW;
        for (int64_t i = 0; i < HW; ++i) ys[i] = (xs[i] - mean) * iv * ga + be;
      }
    }

  auto bw = [B, C, groups, m, HW, L, mu, inv](TensorImpl& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    std::vector<double> xhat(static_cast<size_t>(L)), dxh(static_cast<size_t>(L));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t g = 0; g < groups; ++g) {
        double mean = mu[static_cast<size_t>(b * groups + g)];
        double iv = inv[static_cast<size_t>(b * groups + g)];
        const double* xs = px.value.data() + (b * C + g * m) * HW;
        const double* gy = self.grad.data() + (b * C + g * m) * HW;
        double s1 = 0, s2 = 0;
        for (int64_t c = 0; c < m; ++c) {
          double ga = pg.value[static_cast<size_t>(g * m + c)];
          for (int64_t i = 0; i < HW; ++i) {
            int64_t k = c * HW + i;
            xhat[static_cast<size_t>(k)] = (xs[k] - mean) * iv;
            dxh[static_cast<size_t>(k)] = gy[k] * ga;
            s1 += dxh[static_cast<size_t>(k)];
            s2 += dxh[static_cast<size_t>(k)] * xhat[static_cast<size_t>(k)];
          }
        }
        double dL = static_cast<double>(L);
        if (px.requires_grad) {
          double* gx = px.grad.data() + (b * C + g * m) * HW;
          for (int64_t k = 0; k < L; ++k)
            gx[k] += iv * (dxh[static_cast<size_t>(k)] - s1 / dL -
                           xhat[static_cast<size_t>(k)] * s2 / dL);
        }
        if (pg.requires_grad || pb.requires_grad) {
          for (int64_t c = 0; c < m; ++c) {
            double sg = 0, sb = 0;
            for (int64_t i = 0; i < HW; ++i) {
              sg += gy[c * HW + i] * xhat[static_cast<size_t>(c * HW + i)];
              sb += gy[c * HW + i];
            }
            if (pg.requires_grad) pg.grad[static_cast<size_t>(g * m + c)] += sg;
            if (pb.requires_grad) pb.grad[static_cast<size_t>(g * m + c)] += sb;
          }
        }
      }
  };
  return make_node("group_norm", x.shape(), std::move(out), {x, gamma, beta}, std::move(bw));
}

inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) op_error("softmax_rows", "input must be [R,C]");
  int64_t R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.value().size());
  for (int64_t r = 0; r < R; ++r) {
    const double* s = x.value().data() + r * C;
    double* d = out.data() + r * C;
    double mx = s[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, s[c]);
    double z = 0;
    for (int64_t c = 0; c < C; ++c) {
      d[c] = std::exp(s[c] - mx);
      z += d[c];
    }
    for (int64_t c = 0; c < C; ++c) d[c] /= z;
  }
  return make_node("softmax_rows", x.shape(), std::move(out), {x}, [R, C](TensorImpl& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t r = 0; r < R; ++r) {
      const double* y = self.value.data() + r * C;
      const double* g = self.grad.data() + r * C;
      double dotv = 0;
      for (int64_t c = 0; c < C; ++c) dotv += g[c] * y[c];
      double* d = p.grad.data() + r * C;
      for (int64_t c = 0; c < C; ++c) d[c] += y[c] * (g[c] - dotv);
    }
  });
}

}  // namespace drift
