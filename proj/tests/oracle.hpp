// Reference implementations used to cross-check the production kernels.
// Everything here runs in double precision end to end, in the most direct
// gather form, per output element. Keep this file independent of
// src/kernels.cpp internals: it must only agree on the operator contracts.
//
// The double path matters for gradient checks: central differences with a
// 1e-3 step on a float32 forward pass drown in quantization noise, so the
// numeric side of every gradient check evaluates the mirror below instead.
// The float32 kernels are separately pinned to the mirror on the forward
// side, which closes the loop.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "yoloret/tensor.hpp"

namespace yoloret::oracle {

struct DTensor {
  Shape shape{0, 0, 0, 0};
  std::vector<double> v;

  DTensor() = default;
  explicit DTensor(Shape s) : shape(s), v(static_cast<size_t>(s.numel()), 0.0) {}
  DTensor(Shape s, std::vector<double> data) : shape(s), v(std::move(data)) {}

  double at(int n, int c, int y, int x) const {
    return v[((static_cast<size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
  double& at(int n, int c, int y, int x) {
    return v[((static_cast<size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
};

inline DTensor to_d(const Tensor& t) {
  DTensor d(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) d.v[static_cast<size_t>(i)] = t.data()[i];
  return d;
}

inline Tensor to_f(const DTensor& d) {
  std::vector<float> f(d.v.size());
  for (size_t i = 0; i < d.v.size(); ++i) f[i] = static_cast<float>(d.v[i]);
  return Tensor(d.shape, std::move(f));
}

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

inline DTensor conv2d_d(const DTensor& input, const DTensor& weight,
                        const DTensor* bias, const ConvSpec& spec) {
  const Shape is = input.shape;
  const Shape ws = weight.shape;
  const int k = ws.h;
  const int cpg = ws.c;
  const int co_per_g = ws.n / spec.groups;
  const int oh = (is.h + 2 * spec.padding - k) / spec.stride + 1;
  const int ow = (is.w + 2 * spec.padding - k) / spec.stride + 1;
  DTensor out(Shape{is.n, ws.n, oh, ow});
  size_t idx = 0;
  for (int n = 0; n < is.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      const int g = oc / co_per_g;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias->v[static_cast<size_t>(oc)] : 0.0;
          for (int ic = 0; ic < cpg; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * spec.stride - spec.padding + ky;
              if (iy < 0 || iy >= is.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * spec.stride - spec.padding + kx;
                if (ix < 0 || ix >= is.w) continue;
                acc += input.at(n, g * cpg + ic, iy, ix) * weight.at(oc, ic, ky, kx);
              }
            }
          }
          out.v[idx++] = acc;
        }
      }
    }
  }
  return out;
}

// Normalize with externally supplied statistics (inference form).
inline DTensor batchnorm_d(const DTensor& x, const DTensor& gamma, const DTensor& beta,
                           const DTensor& mean, const DTensor& var, double eps) {
  const Shape s = x.shape;
  DTensor out(s);
  size_t idx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(var.v[static_cast<size_t>(c)] + eps);
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw)
          out.v[idx++] = (x.at(n, c, y, xw) - mean.v[static_cast<size_t>(c)]) * inv *
                             gamma.v[static_cast<size_t>(c)] +
                         beta.v[static_cast<size_t>(c)];
    }
  return out;
}

// Training form: statistics are recomputed from the batch, so finite
// differences see their dependence on x.
inline DTensor batchnorm_train_d(const DTensor& x, const DTensor& gamma,
                                 const DTensor& beta, double eps) {
  const Shape s = x.shape;
  DTensor mean(Shape{1, s.c, 1, 1});
  DTensor var(Shape{1, s.c, 1, 1});
  const double count = static_cast<double>(s.n) * s.h * s.w;
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw) sum += x.at(n, c, y, xw);
    const double mu = sum / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw) {
          const double d = x.at(n, c, y, xw) - mu;
          sq += d * d;
        }
    mean.v[static_cast<size_t>(c)] = mu;
    var.v[static_cast<size_t>(c)] = sq / count;
  }
  return batchnorm_d(x, gamma, beta, mean, var, eps);
}

enum class DAct { relu6, sigmoid, swish };

inline DTensor act_d(const DTensor& x, DAct kind) {
  DTensor out(x.shape);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const double v = x.v[i];
    switch (kind) {
      case DAct::relu6: out.v[i] = std::min(std::max(v, 0.0), 6.0); break;
      case DAct::sigmoid: out.v[i] = 1.0 / (1.0 + std::exp(-v)); break;
      case DAct::swish: out.v[i] = v / (1.0 + std::exp(-v)); break;
    }
  }
  return out;
}

inline DTensor upsample_nearest_d(const DTensor& x, int factor) {
  const Shape s = x.shape;
  DTensor out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  size_t idx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h * factor; ++y)
        for (int xw = 0; xw < s.w * factor; ++xw)
          out.v[idx++] = x.at(n, c, y / factor, xw / factor);
  return out;
}

inline DTensor downsample_avg_d(const DTensor& x, int factor) {
  const Shape s = x.shape;
  DTensor out(Shape{s.n, s.c, s.h / factor, s.w / factor});
  size_t idx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / factor; ++y)
        for (int xw = 0; xw < s.w / factor; ++xw) {
          double acc = 0.0;
          for (int ky = 0; ky < factor; ++ky)
            for (int kx = 0; kx < factor; ++kx)
              acc += x.at(n, c, y * factor + ky, xw * factor + kx);
          out.v[idx++] = acc / (factor * factor);
        }
  return out;
}

inline DTensor fusion_d(const std::vector<DTensor>& xs, const std::vector<double>& w,
                        double eps) {
  double denom = eps;
  for (double v : w) denom += std::max(v, 0.0);
  DTensor out(xs[0].shape);
  for (size_t i = 0; i < out.v.size(); ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < xs.size(); ++j) acc += (std::max(w[j], 0.0) / denom) * xs[j].v[i];
    out.v[i] = acc;
  }
  return out;
}

inline DTensor gap_d(const DTensor& x) {
  const Shape s = x.shape;
  DTensor out(Shape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw) acc += x.at(n, c, y, xw);
      out.v[static_cast<size_t>(n) * s.c + c] = acc / (s.h * s.w);
    }
  return out;
}

inline DTensor scale_d(const DTensor& x, const DTensor& gate) {
  const Shape s = x.shape;
  DTensor out(s);
  size_t idx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double g = gate.v[static_cast<size_t>(n) * s.c + c];
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw) out.v[idx++] = x.at(n, c, y, xw) * g;
    }
  return out;
}

inline DTensor add_d(const DTensor& a, const DTensor& b) {
  DTensor out(a.shape);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
  return out;
}

inline DTensor mul_d(const DTensor& a, const DTensor& b) {
  DTensor out(a.shape);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

inline DTensor concat_d(const std::vector<DTensor>& xs) {
  const Shape s0 = xs[0].shape;
  int total_c = 0;
  for (const auto& t : xs) total_c += t.shape.c;
  DTensor out(Shape{s0.n, total_c, s0.h, s0.w});
  for (int n = 0; n < s0.n; ++n) {
    int coff = 0;
    for (const auto& t : xs) {
      for (int c = 0; c < t.shape.c; ++c)
        for (int y = 0; y < s0.h; ++y)
          for (int xw = 0; xw < s0.w; ++xw)
            out.at(n, coff + c, y, xw) = t.at(n, c, y, xw);
      coff += t.shape.c;
    }
  }
  return out;
}

// Scalar probe: dot product with a fixed direction tensor, so gradient checks
// exercise every output coordinate at once.
inline double probe_d(const DTensor& out, const Tensor& direction) {
  double acc = 0.0;
  for (size_t i = 0; i < out.v.size(); ++i) {
    acc += out.v[i] * direction.data()[static_cast<int64_t>(i)];
  }
  return acc;
}

// Central-difference derivative of a scalar function at every coordinate of x.
// The function receives float32 tensors (the type everything under test
// consumes) but should evaluate through the double mirror; the realized step
// is measured after float32 rounding so it cancels out exactly.
struct FdReport {
  bool ok = true;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

inline FdReport check_gradient(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, const Tensor& analytic_grad,
                               double step = 1e-3, double rel_tol = 1e-3,
                               double abs_tol = 1e-5) {
  FdReport rep;
  std::vector<float> base(x.data(), x.data() + x.numel());
  auto fd_at = [&](int64_t i, double h) {
    std::vector<float> vplus = base;
    std::vector<float> vminus = base;
    vplus[static_cast<size_t>(i)] += static_cast<float>(h);
    vminus[static_cast<size_t>(i)] -= static_cast<float>(h);
    const double realized = static_cast<double>(vplus[static_cast<size_t>(i)]) -
                            static_cast<double>(vminus[static_cast<size_t>(i)]);
    const double fp = f(Tensor(x.shape(), std::move(vplus)));
    const double fm = f(Tensor(x.shape(), std::move(vminus)));
    return (fp - fm) / realized;
  };
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double ana = analytic_grad.data()[i];
    double num = fd_at(i, step);
    double err = std::abs(num - ana);
    double tol = abs_tol + rel_tol * std::max(std::abs(num), std::abs(ana));
    // A coordinate can fail at the nominal step because the interval straddles
    // an activation kink (relu6 at 0 or 6), where central differences do not
    // estimate the derivative. Shrinking the step moves the interval off the
    // kink; a genuinely wrong gradient keeps failing at every step.
    for (double h = step / 4.0; err > tol && h >= step / 64.0; h /= 4.0) {
      num = fd_at(i, h);
      err = std::abs(num - ana);
      tol = abs_tol + rel_tol * std::max(std::abs(num), std::abs(ana));
    }
    if (err > tol && err > rep.error) {
      rep.ok = false;
      rep.worst_index = i;
      rep.analytic = ana;
      rep.numeric = num;
      rep.error = err;
    }
  }
  return rep;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double da = a.data()[i];
    const double db = b.data()[i];
    const double denom = std::max({std::abs(da), std::abs(db), 1e-12});
    worst = std::max(worst, std::abs(da - db) / denom);
  }
  return worst;
}

inline double max_rel_diff(const Tensor& a, const DTensor& b) {
  return max_rel_diff(a, to_f(b));
}

}  // namespace yoloret::oracle
