#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "knotseg/common.hpp"
#include "knotseg/rng.hpp"
#include "knotseg/tape.hpp"
#include "knotseg/tensor.hpp"

namespace knotseg {

enum class Act { kRelu, kSigmoid, kTanh };

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
void debug_check_finite(const Tensor<Scalar>& t, const char* op) {
#ifndef NDEBUG
  for (const Scalar v : t.vec()) {
    if (!std::isfinite(static_cast<double>(v))) {
      fail_runtime(op, ": non-finite value in output");
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

template <typename Scalar>
using MatRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

/// Unrolls one input sample [Cin,H,W] into the [Cin*k*k, H*W] patch matrix of
/// a same-padded k x k cross-correlation.
template <typename Scalar>
void im2col(const Scalar* x, std::int64_t cin, std::int64_t h, std::int64_t w,
            std::int64_t k, MatRM<Scalar>& col) {
  const std::int64_t pad = (k - 1) / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    const Scalar* plane = x + c * h * w;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        Scalar* row = col.data() + ((c * k + ky) * k + kx) * (h * w);
        const std::int64_t ox_lo = std::max<std::int64_t>(0, pad - kx);
        const std::int64_t ox_hi = std::min<std::int64_t>(w, w + pad - kx);
        for (std::int64_t oy = 0; oy < h; ++oy) {
          Scalar* dst = row + oy * w;
          const std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + w, Scalar(0));
            continue;
          }
          std::fill(dst, dst + ox_lo, Scalar(0));
          if (ox_hi > ox_lo) {
            std::memcpy(dst + ox_lo, plane + iy * w + (ox_lo + kx - pad),
                        static_cast<std::size_t>(ox_hi - ox_lo) *
                            sizeof(Scalar));
          }
          std::fill(dst + std::max(ox_hi, ox_lo), dst + w, Scalar(0));
        }
      }
    }
  }
}

/// Transpose of im2col: scatters patch-matrix gradients back onto the input.
template <typename Scalar>
void col2im_add(const MatRM<Scalar>& col, std::int64_t cin, std::int64_t h,
                std::int64_t w, std::int64_t k, Scalar* dx) {
  const std::int64_t pad = (k - 1) / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    Scalar* plane = dx + c * h * w;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const Scalar* row = col.data() + ((c * k + ky) * k + kx) * (h * w);
        const std::int64_t ox_lo = std::max<std::int64_t>(0, pad - kx);
        const std::int64_t ox_hi = std::min<std::int64_t>(w, w + pad - kx);
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const Scalar* src = row + oy * w;
          Scalar* dst = plane + iy * w + (kx - pad);
          for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Same-padded k x k cross-correlation with optional per-channel bias.
/// x: [N,Cin,H,W], w: [Cout,Cin,k,k] with k odd, b: [Cout] or undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& b, Tape<Scalar>* tape) {
  require(x.rank() == 4, "conv2d: input must be 4-d, got ",
          shape_str(x.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be "
          "[Cout,Cin,k,k], got ", shape_str(w.shape()));
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  require(k % 2 == 1, "conv2d: kernel size must be odd, got ", k);
  if (w.dim(1) != cin) {
    fail("conv2d: weight expects Cin=", w.dim(1), " but input has Cin=", cin,
         " (input ", shape_str(x.shape()), ", weight ", shape_str(w.shape()),
         ")");
  }
  if (b.defined()) {
    require(b.numel() == cout, "conv2d: bias has ", b.numel(),
            " entries, expected ", cout);
  }

  auto out = Tensor<Scalar>::zeros({n, cout, h, wd});
  const std::int64_t hw = h * wd;
  const std::int64_t ckk = cin * k * k;
  MatRM<Scalar> col(ckk, hw);
  Eigen::Map<const MatRM<Scalar>> wm(w.data(), cout, ckk);
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col(x.data() + i * cin * hw, cin, h, wd, k, col);
    Eigen::Map<MatRM<Scalar>> ym(out.data() + i * cout * hw, cout, hw);
    ym.noalias() = wm * col;
    if (b.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        ym.row(c).array() += b[c];
      }
    }
  }
  debug_check_finite(out, "conv2d");

  if (should_record<Scalar>(tape, {&x, &w, &b})) {
    out.set_requires_grad();
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    std::vector<Tensor<Scalar>> ins{x, w};
    if (b.defined()) ins.push_back(b);
    tape->record("conv2d", ins, out, [xi, wi, bi, oi, n, cin, cout, h, wd,
                                      k]() {
      const std::int64_t hw = h * wd;
      const std::int64_t ckk = cin * k * k;
      auto* gx = grad_sink<Scalar>(xi);
      auto* gw = grad_sink<Scalar>(wi);
      auto* gb = bi ? grad_sink<Scalar>(bi) : nullptr;
      MatRM<Scalar> col(ckk, hw);
      MatRM<Scalar> dcol(ckk, hw);
      Eigen::Map<const MatRM<Scalar>> wm(wi->data.data(), cout, ckk);
      for (std::int64_t i = 0; i < n; ++i) {
        Eigen::Map<const MatRM<Scalar>> dy(oi->grad.data() + i * cout * hw,
                                           cout, hw);
        if (gw) {
          detail::im2col(xi->data.data() + i * cin * hw, cin, h, wd, k, col);
          Eigen::Map<MatRM<Scalar>> dwm(gw->data(), cout, ckk);
          dwm.noalias() += dy * col.transpose();
        }
        if (gx) {
          dcol.noalias() = wm.transpose() * dy;
          detail::col2im_add(dcol, cin, h, wd, k,
                             gx->data() + i * cin * hw);
        }
        if (gb) {
          for (std::int64_t c = 0; c < cout; ++c) {
            (*gb)[c] += dy.row(c).sum();
          }
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      Tape<Scalar>* tape) {
  return conv2d(x, w, Tensor<Scalar>(), tape);
}

/// Running statistics owned by a batchnorm layer (not tape tensors).
template <typename Scalar>
struct BnState {
  std::vector<Scalar> running_mean;
  std::vector<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
  std::uint64_t batches_tracked = 0;

  explicit BnState(std::int64_t channels = 0)
      : running_mean(static_cast<std::size_t>(channels), Scalar(0)),
        running_var(static_cast<std::size_t>(channels), Scalar(1)) {}
};

/// Per-channel batch normalization over the N,H,W axes. Train mode uses batch
/// statistics (biased variance) and folds them into the running estimates
/// (unbiased variance, momentum 0.1); eval mode uses the running estimates.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, BnState<Scalar>& state,
                           Mode mode, Tape<Scalar>* tape) {
  require(x.rank() == 4, "batchnorm2d: input must be 4-d, got ",
          shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(gamma.numel() == c && beta.numel() == c,
          "batchnorm2d: gamma/beta must have ", c, " entries");
  require(static_cast<std::int64_t>(state.running_mean.size()) == c,
          "batchnorm2d: state tracks ", state.running_mean.size(),
          " channels, input has ", c);
  const std::int64_t m = n * h * w;
  const std::int64_t hw = h * w;

  std::vector<Scalar> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    require(m >= 2, "batchnorm2d: train mode needs at least 2 samples per "
            "channel, got N*H*W=", m);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const Scalar* p = x.data() + (i * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
          s += p[j];
          s2 += static_cast<double>(p[j]) * p[j];
        }
      }
      const double mu = s / static_cast<double>(m);
      const double var = s2 / static_cast<double>(m) - mu * mu;
      const double var_c = var < 0.0 ? 0.0 : var;
      mean[ch] = static_cast<Scalar>(mu);
      inv_std[ch] = static_cast<Scalar>(
          1.0 / std::sqrt(var_c + static_cast<double>(state.eps)));
      const double unbiased = var_c * static_cast<double>(m) /
                              static_cast<double>(m - 1);
      state.running_mean[ch] = static_cast<Scalar>(
          (1.0 - state.momentum) * state.running_mean[ch] +
          state.momentum * mu);
      state.running_var[ch] = static_cast<Scalar>(
          (1.0 - state.momentum) * state.running_var[ch] +
          state.momentum * unbiased);
    }
    state.batches_tracked += 1;
  } else {
    if (state.batches_tracked == 0) {
      fail_runtime("batchnorm2d: eval mode requested before any running "
                   "statistics were recorded; train the model or load a "
                   "checkpoint first");
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = static_cast<Scalar>(
          1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) +
                          static_cast<double>(state.eps)));
    }
  }

  auto out = Tensor<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const Scalar* p = x.data() + (i * c + ch) * hw;
      Scalar* q = out.data() + (i * c + ch) * hw;
      const Scalar mu = mean[ch], is = inv_std[ch];
      const Scalar g = gamma[ch], bt = beta[ch];
      for (std::int64_t j = 0; j < hw; ++j) {
        q[j] = (p[j] - mu) * is * g + bt;
      }
    }
  }
  debug_check_finite(out, "batchnorm2d");

  if (should_record<Scalar>(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad();
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    const bool train = mode == Mode::kTrain;
    tape->record("batchnorm2d", {x, gamma, beta}, out,
                 [xi, gi, bi, oi, mean, inv_std, n, c, hw, m, train]() {
      auto* gx = grad_sink<Scalar>(xi);
      auto* gg = grad_sink<Scalar>(gi);
      auto* gb = grad_sink<Scalar>(bi);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const Scalar mu = mean[ch], is = inv_std[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const Scalar* xp = xi->data.data() + (i * c + ch) * hw;
          const Scalar* dy = oi->grad.data() + (i * c + ch) * hw;
          for (std::int64_t j = 0; j < hw; ++j) {
            sum_dy += dy[j];
            sum_dy_xhat += static_cast<double>(dy[j]) * (xp[j] - mu) * is;
          }
        }
        if (gg) (*gg)[ch] += static_cast<Scalar>(sum_dy_xhat);
        if (gb) (*gb)[ch] += static_cast<Scalar>(sum_dy);
        if (gx) {
          const Scalar g = gi->data[ch];
          const Scalar k1 = static_cast<Scalar>(sum_dy / m);
          const Scalar k2 = static_cast<Scalar>(sum_dy_xhat / m);
          for (std::int64_t i = 0; i < n; ++i) {
            const Scalar* xp = xi->data.data() + (i * c + ch) * hw;
            const Scalar* dy = oi->grad.data() + (i * c + ch) * hw;
            Scalar* dx = gx->data() + (i * c + ch) * hw;
            if (train) {
              for (std::int64_t j = 0; j < hw; ++j) {
                const Scalar xhat = (xp[j] - mu) * is;
                dx[j] += g * is * (dy[j] - k1 - xhat * k2);
              }
            } else {
              for (std::int64_t j = 0; j < hw; ++j) {
                dx[j] += g * is * dy[j];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// 2x2 stride-2 max pooling. Gradient is routed to the argmax cell only; ties
/// go to the first cell in row-major window order.
template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  require(x.rank() == 4, "maxpool2: input must be 4-d, got ",
          shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0,
          "maxpool2: spatial dims must be even, got ", h, "x", w);
  const std::int64_t oh = h / 2, ow = w / 2;
  auto out = Tensor<Scalar>::zeros({n, c, oh, ow});
  std::vector<std::int64_t> argmax(
      static_cast<std::size_t>(out.numel()));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const Scalar* p = x.data() + nc * h * w;
    Scalar* q = out.data() + nc * oh * ow;
    std::int64_t* am = argmax.data() + nc * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t base = (2 * oy) * w + 2 * ox;
        std::int64_t best = base;
        Scalar bv = p[base];
        const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
        for (std::int64_t idx : cand) {
          if (p[idx] > bv) {
            bv = p[idx];
            best = idx;
          }
        }
        q[oy * ow + ox] = bv;
        am[oy * ow + ox] = nc * h * w + best;
      }
    }
  }

  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("maxpool2", {x}, out, [xi, oi, argmax = std::move(argmax)]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      const auto& dy = oi->grad;
      for (std::size_t i = 0; i < argmax.size(); ++i) {
        (*gx)[static_cast<std::size_t>(argmax[i])] += dy[i];
      }
    });
  }
  return out;
}

/// Nearest-neighbour 2x upsampling; each source pixel fills a 2x2 block.
template <typename Scalar>
Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  require(x.rank() == 4, "upsample_nearest2: input must be 4-d, got ",
          shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto out = Tensor<Scalar>::zeros({n, c, 2 * h, 2 * w});
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const Scalar* p = x.data() + nc * h * w;
    Scalar* q = out.data() + nc * 4 * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        const Scalar v = p[y * w + xx];
        Scalar* row0 = q + (2 * y) * 2 * w + 2 * xx;
        row0[0] = v;
        row0[1] = v;
        row0[2 * w] = v;
        row0[2 * w + 1] = v;
      }
    }
  }

  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("upsample_nearest2", {x}, out, [xi, oi, n, c, h, w]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const Scalar* dy = oi->grad.data() + nc * 4 * h * w;
        Scalar* dx = gx->data() + nc * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
          for (std::int64_t xx = 0; xx < w; ++xx) {
            const Scalar* row0 = dy + (2 * y) * 2 * w + 2 * xx;
            dx[y * w + xx] += row0[0] + row0[1] + row0[2 * w] + row0[2 * w + 1];
          }
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Act kind,
                          Tape<Scalar>* tape) {
  auto out = Tensor<Scalar>::zeros(x.shape());
  const std::int64_t n = x.numel();
  switch (kind) {
    case Act::kRelu:
      for (std::int64_t i = 0; i < n; ++i)
        out[i] = x[i] > Scalar(0) ? x[i] : Scalar(0);
      break;
    case Act::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = stable_sigmoid(x[i]);
      break;
    case Act::kTanh:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
      break;
  }
  debug_check_finite(out, "activation");

  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("activation", {x}, out, [xi, oi, kind]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      const auto& y = oi->data;
      const auto& dy = oi->grad;
      switch (kind) {
        case Act::kRelu:
          for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] > Scalar(0)) (*gx)[i] += dy[i];
          break;
        case Act::kSigmoid:
          for (std::size_t i = 0; i < y.size(); ++i)
            (*gx)[i] += dy[i] * y[i] * (Scalar(1) - y[i]);
          break;
        case Act::kTanh:
          for (std::size_t i = 0; i < y.size(); ++i)
            (*gx)[i] += dy[i] * (Scalar(1) - y[i] * y[i]);
          break;
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  return activation(x, Act::kRelu, tape);
}
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  return activation(x, Act::kSigmoid, tape);
}
template <typename Scalar>
Tensor<Scalar> tanh_act(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  return activation(x, Act::kTanh, tape);
}

/// Inverted dropout: train mode zeroes each element with probability p and
/// scales survivors by 1/(1-p); eval mode (and p=0) is the identity.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, Mode mode, Rng& rng,
                       Tape<Scalar>* tape) {
  require(p >= 0.0 && p < 1.0, "dropout: probability must be in [0,1), got ",
          p);
  if (mode == Mode::kEval || p == 0.0) return x;

  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - p));
  std::vector<Scalar> mask(static_cast<std::size_t>(x.numel()));
  for (auto& mv : mask) mv = rng.uniform() < p ? Scalar(0) : scale;

  auto out = Tensor<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[i];

  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("dropout", {x}, out, [xi, oi, mask = std::move(mask)]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      const auto& dy = oi->grad;
      for (std::size_t i = 0; i < dy.size(); ++i) (*gx)[i] += dy[i] * mask[i];
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                   Tape<Scalar>* tape) {
  require(same_shape(a, b), "add: shape mismatch ", shape_str(a.shape()),
          " vs ", shape_str(b.shape()));
  auto out = Tensor<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (should_record<Scalar>(tape, {&a, &b})) {
    out.set_requires_grad();
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("add", {a, b}, out, [ai, bi, oi]() {
      const auto& dy = oi->grad;
      if (auto* ga = grad_sink<Scalar>(ai)) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i];
      }
      if (auto* gb = grad_sink<Scalar>(bi)) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*gb)[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                   Tape<Scalar>* tape) {
  require(same_shape(a, b), "mul: shape mismatch ", shape_str(a.shape()),
          " vs ", shape_str(b.shape()));
  auto out = Tensor<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (should_record<Scalar>(tape, {&a, &b})) {
    out.set_requires_grad();
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("mul", {a, b}, out, [ai, bi, oi]() {
      const auto& dy = oi->grad;
      if (auto* ga = grad_sink<Scalar>(ai)) {
        for (std::size_t i = 0; i < dy.size(); ++i)
          (*ga)[i] += dy[i] * bi->data[i];
      }
      if (auto* gb = grad_sink<Scalar>(bi)) {
        for (std::size_t i = 0; i < dy.size(); ++i)
          (*gb)[i] += dy[i] * ai->data[i];
      }
    });
  }
  return out;
}

/// Concatenates two [N,C,H,W] tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                               Tape<Scalar>* tape) {
  require(a.rank() == 4 && b.rank() == 4, "concat_channels: inputs must be "
          "4-d");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: shapes ", shape_str(a.shape()), " and ",
          shape_str(b.shape()), " differ outside the channel axis");
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::int64_t hw = a.dim(2) * a.dim(3);
  auto out = Tensor<Scalar>::zeros({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * hw, a.data() + i * ca * hw,
                static_cast<std::size_t>(ca * hw) * sizeof(Scalar));
    std::memcpy(out.data() + (i * (ca + cb) + ca) * hw, b.data() + i * cb * hw,
                static_cast<std::size_t>(cb * hw) * sizeof(Scalar));
  }
  if (should_record<Scalar>(tape, {&a, &b})) {
    out.set_requires_grad();
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("concat_channels", {a, b}, out, [ai, bi, oi, n, ca, cb,
                                                  hw]() {
      auto* ga = grad_sink<Scalar>(ai);
      auto* gb = grad_sink<Scalar>(bi);
      for (std::int64_t i = 0; i < n; ++i) {
        const Scalar* dy = oi->grad.data() + i * (ca + cb) * hw;
        if (ga) {
          Scalar* d = ga->data() + i * ca * hw;
          for (std::int64_t j = 0; j < ca * hw; ++j) d[j] += dy[j];
        }
        if (gb) {
          Scalar* d = gb->data() + i * cb * hw;
          for (std::int64_t j = 0; j < cb * hw; ++j) d[j] += dy[ca * hw + j];
        }
      }
    });
  }
  return out;
}

/// Selects index t along axis 0, keeping a leading axis of extent 1.
template <typename Scalar>
Tensor<Scalar> slice0(const Tensor<Scalar>& x, std::int64_t t,
                      Tape<Scalar>* tape) {
  require(x.rank() >= 1 && t >= 0 && t < x.dim(0), "slice0: index ", t,
          " out of range for shape ", shape_str(x.shape()));
  Shape oshape = x.shape();
  oshape[0] = 1;
  const std::int64_t block = numel_of(oshape);
  auto out = Tensor<Scalar>::zeros(oshape);
  std::memcpy(out.data(), x.data() + t * block,
              static_cast<std::size_t>(block) * sizeof(Scalar));
  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("slice0", {x}, out, [xi, oi, t, block]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      Scalar* d = gx->data() + t * block;
      for (std::int64_t j = 0; j < block; ++j) d[j] += oi->grad[j];
    });
  }
  return out;
}

/// Concatenates tensors along axis 0 (each typically [1,C,H,W]).
template <typename Scalar>
Tensor<Scalar> concat0(const std::vector<Tensor<Scalar>>& parts,
                       Tape<Scalar>* tape) {
  require(!parts.empty(), "concat0: no inputs");
  Shape oshape = parts[0].shape();
  std::int64_t total0 = 0;
  for (const auto& p : parts) {
    require(p.rank() == parts[0].rank(), "concat0: rank mismatch");
    for (std::size_t d = 1; d < oshape.size(); ++d) {
      require(p.dim(d) == oshape[d], "concat0: trailing shape mismatch");
    }
    total0 += p.dim(0);
  }
  oshape[0] = total0;
  auto out = Tensor<Scalar>::zeros(oshape);
  Shape one = oshape;
  one[0] = 1;
  const std::int64_t block = numel_of(one);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p.data(),
                static_cast<std::size_t>(p.numel()) * sizeof(Scalar));
    off += p.numel();
  }
  bool rec = tape != nullptr;
  if (rec) {
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    rec = any;
  }
  if (rec) {
    out.set_requires_grad();
    std::vector<typename Tape<Scalar>::ImplPtr> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    tape->record("concat0", parts, out, [impls, oi, block]() {
      std::int64_t off = 0;
      for (const auto& pi : impls) {
        const std::int64_t cnt =
            static_cast<std::int64_t>(pi->data.size());
        if (auto* g = grad_sink<Scalar>(pi)) {
          for (std::int64_t j = 0; j < cnt; ++j) (*g)[j] += oi->grad[off + j];
        }
        off += cnt;
      }
      (void)block;
    });
  }
  return out;
}

/// Sum of all elements, as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, Tape<Scalar>* tape) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  auto out = Tensor<Scalar>::scalar(static_cast<Scalar>(acc));
  if (should_record<Scalar>(tape, {&x})) {
    out.set_requires_grad();
    auto xi = x.impl(), oi = out.impl();
    tape->record("sum", {x}, out, [xi, oi]() {
      auto* gx = grad_sink<Scalar>(xi);
      if (!gx) return;
      const Scalar up = oi->grad[0];
      for (auto& g : *gx) g += up;
    });
  }
  return out;
}

/// Mean binary cross entropy on logits, in the numerically stable form
/// max(z,0) - z*y + log(1+exp(-|z|)). Targets must be exactly 0 or 1.
template <typename Scalar>
Tensor<Scalar> bce_with_logits(const Tensor<Scalar>& logits,
                               const Tensor<Scalar>& targets,
                               Tape<Scalar>* tape) {
  require(same_shape(logits, targets), "bce_with_logits: shape mismatch ",
          shape_str(logits.shape()), " vs ", shape_str(targets.shape()));
  const std::int64_t n = logits.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (targets[i] != Scalar(0) && targets[i] != Scalar(1)) {
      fail("bce_with_logits: target value ", targets[i], " at index ", i,
           " is not in {0,1}");
    }
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = targets[i];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  auto out =
      Tensor<Scalar>::scalar(static_cast<Scalar>(acc / static_cast<double>(n)));
  debug_check_finite(out, "bce_with_logits");
  if (should_record<Scalar>(tape, {&logits, &targets})) {
    out.set_requires_grad();
    auto li = logits.impl(), ti = targets.impl(), oi = out.impl();
    tape->record("bce_with_logits", {logits, targets}, out, [li, ti, oi, n]() {
      auto* gz = grad_sink<Scalar>(li);
      if (!gz) return;
      const Scalar up = oi->grad[0];
      const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        (*gz)[i] += up * (stable_sigmoid(li->data[i]) - ti->data[i]) * inv_n;
      }
    });
  }
  return out;
}

}  // namespace knotseg
