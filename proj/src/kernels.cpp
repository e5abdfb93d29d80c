#include "yoloret/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace yoloret::kernels {

namespace {

void check_conv_params(const Shape& in, const ConvParams& p) {
  const Shape& ws = p.weight.shape();
  if (ws.h != ws.w) {
    throw ValidationError("conv2d: kernel must be square, got " + std::to_string(ws.h) +
                          "x" + std::to_string(ws.w));
  }
  if (p.groups < 1 || ws.n % p.groups != 0) {
    throw ValidationError("conv2d: groups " + std::to_string(p.groups) +
                          " does not divide output channels " + std::to_string(ws.n));
  }
  if (in.c != ws.c * p.groups) {
    throw ValidationError("conv2d: input channels " + std::to_string(in.c) +
                          " != weight c_in " + std::to_string(ws.c) + " * groups " +
                          std::to_string(p.groups));
  }
  if (p.stride < 1) {
    throw ValidationError("conv2d: stride must be positive, got " + std::to_string(p.stride));
  }
  if (p.padding < 0) {
    throw ValidationError("conv2d: padding must be non-negative, got " + std::to_string(p.padding));
  }
  if (in.h + 2 * p.padding < ws.h || in.w + 2 * p.padding < ws.w) {
    throw ValidationError("conv2d: kernel " + std::to_string(ws.h) + " does not fit input " +
                          std::to_string(in.h) + "x" + std::to_string(in.w) + " with padding " +
                          std::to_string(p.padding));
  }
  if (p.bias) {
    const Shape& bs = p.bias->shape();
    if (!(bs == Shape{1, ws.n, 1, 1})) {
      throw ValidationError("conv2d: bias shape " + bs.str() + " != (1," +
                            std::to_string(ws.n) + ",1,1)");
    }
  }
}

bool is_pow2(int f) { return f >= 1 && (f & (f - 1)) == 0; }

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

}  // namespace

Shape conv2d_out_shape(const Shape& in, const ConvParams& p) {
  check_conv_params(in, p);
  const Shape& ws = p.weight.shape();
  int oh = (in.h + 2 * p.padding - ws.h) / p.stride + 1;
  int ow = (in.w + 2 * p.padding - ws.w) / p.stride + 1;
  return Shape{in.n, ws.n, oh, ow};
}

int64_t conv2d_macs(const Shape& in, const ConvParams& p) {
  Shape out = conv2d_out_shape(in, p);
  const Shape& ws = p.weight.shape();
  return static_cast<int64_t>(out.c) * ws.c * ws.h * ws.w * out.h * out.w * out.n;
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  Shape os = conv2d_out_shape(input.shape(), p);
  const Shape& is = input.shape();
  const Shape& ws = p.weight.shape();
  const int k = ws.h;
  const int cpg = ws.c;                 // channels per group on the input side
  const int co_per_g = ws.n / p.groups;
  const int s = p.stride;
  const int pad = p.padding;

  std::vector<float> out(static_cast<size_t>(os.numel()));
  std::vector<double> acc(static_cast<size_t>(os.h) * os.w);
  const float* in = input.data();
  const float* wt = p.weight.data();
  const int64_t in_cstride = static_cast<int64_t>(is.h) * is.w;
  const int64_t out_cstride = static_cast<int64_t>(os.h) * os.w;

  for (int n = 0; n < os.n; ++n) {
    const float* in_n = in + n * is.c * in_cstride;
    for (int oc = 0; oc < os.c; ++oc) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const int g = oc / co_per_g;
      const float* w_oc = wt + static_cast<int64_t>(oc) * cpg * k * k;
      for (int ic = 0; ic < cpg; ++ic) {
        const float* in_c = in_n + (static_cast<int64_t>(g) * cpg + ic) * in_cstride;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = w_oc[(ic * k + ky) * k + kx];
            if (wv == 0.0) continue;
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * s - pad + ky;
              if (iy < 0 || iy >= is.h) continue;
              const float* in_row = in_c + static_cast<int64_t>(iy) * is.w;
              double* acc_row = acc.data() + static_cast<int64_t>(oy) * os.w;
              for (int ox = 0; ox < os.w; ++ox) {
                const int ix = ox * s - pad + kx;
                if (ix < 0 || ix >= is.w) continue;
                acc_row[ox] += wv * in_row[ix];
              }
            }
          }
        }
      }
      const double b = p.bias ? p.bias->data()[oc] : 0.0;
      float* out_c = out.data() + (static_cast<int64_t>(n) * os.c + oc) * out_cstride;
      for (int64_t i = 0; i < out_cstride; ++i) {
        out_c[i] = static_cast<float>(acc[static_cast<size_t>(i)] + b);
      }
    }
  }
  return Tensor(os, std::move(out));
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  const Shape is = input.shape();
  const Shape os = conv2d_out_shape(is, p);
  check_same_shape(grad_out.shape(), os, "conv2d_backward");
  const Shape& ws = p.weight.shape();
  const int k = ws.h;
  const int cpg = ws.c;
  const int co_per_g = ws.n / p.groups;
  const int s = p.stride;
  const int pad = p.padding;
  const float* in = input.data();
  const float* wt = p.weight.data();
  const float* go = grad_out.data();
  const int64_t in_cstride = static_cast<int64_t>(is.h) * is.w;
  const int64_t out_cstride = static_cast<int64_t>(os.h) * os.w;

  std::vector<double> d_in(static_cast<size_t>(is.numel()), 0.0);
  std::vector<double> d_w(static_cast<size_t>(ws.numel()), 0.0);
  std::vector<double> d_b(static_cast<size_t>(ws.n), 0.0);

  for (int n = 0; n < os.n; ++n) {
    const float* in_n = in + n * is.c * in_cstride;
    double* din_n = d_in.data() + n * is.c * in_cstride;
    for (int oc = 0; oc < os.c; ++oc) {
      const int g = oc / co_per_g;
      const float* go_c = go + (static_cast<int64_t>(n) * os.c + oc) * out_cstride;
      const float* w_oc = wt + static_cast<int64_t>(oc) * cpg * k * k;
      double* dw_oc = d_w.data() + static_cast<int64_t>(oc) * cpg * k * k;
      for (int64_t i = 0; i < out_cstride; ++i) d_b[oc] += go_c[i];
      for (int ic = 0; ic < cpg; ++ic) {
        const float* in_c = in_n + (static_cast<int64_t>(g) * cpg + ic) * in_cstride;
        double* din_c = din_n + (static_cast<int64_t>(g) * cpg + ic) * in_cstride;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = w_oc[(ic * k + ky) * k + kx];
            double dw = 0.0;
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * s - pad + ky;
              if (iy < 0 || iy >= is.h) continue;
              const float* go_row = go_c + static_cast<int64_t>(oy) * os.w;
              const float* in_row = in_c + static_cast<int64_t>(iy) * is.w;
              double* din_row = din_c + static_cast<int64_t>(iy) * is.w;
              for (int ox = 0; ox < os.w; ++ox) {
                const int ix = ox * s - pad + kx;
                if (ix < 0 || ix >= is.w) continue;
                const double g_val = go_row[ox];
                dw += g_val * in_row[ix];
                din_row[ix] += wv * g_val;
              }
            }
            dw_oc[(ic * k + ky) * k + kx] += dw;
          }
        }
      }
    }
  }

  auto to_tensor = [](const std::vector<double>& v, Shape s) {
    std::vector<float> f(v.size());
    for (size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    return Tensor(s, std::move(f));
  };
  ConvGrads grads;
  grads.d_input = to_tensor(d_in, is);
  grads.d_weight = to_tensor(d_w, ws);
  if (p.bias) grads.d_bias = to_tensor(d_b, Shape{1, ws.n, 1, 1});
  return grads;
}

namespace {

void check_bn_vectors(const Shape& xs, const Tensor& gamma, const Tensor& beta,
                      const Tensor& mean, const Tensor& var) {
  if (xs.c == 0) throw ValidationError("batchnorm: zero-length channel dimension");
  Shape want{1, xs.c, 1, 1};
  for (const auto* t : {&gamma, &beta, &mean, &var}) {
    if (!(t->shape() == want)) {
      throw ValidationError("batchnorm: per-channel vector shape " + t->shape().str() +
                            " != " + want.str());
    }
  }
}

}  // namespace

BnResult batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var,
                   BnMode mode, float momentum, float eps) {
  const Shape& xs = x.shape();
  check_bn_vectors(xs, gamma, beta, running_mean, running_var);
  if (eps <= 0.0f) throw ValidationError("batchnorm: eps must be positive");

  const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
  const int64_t per_ch = static_cast<int64_t>(xs.n) * plane;
  const float* px = x.data();

  BnResult r;
  std::vector<float> mean_v(static_cast<size_t>(xs.c));
  std::vector<float> var_v(static_cast<size_t>(xs.c));
  if (mode == BnMode::train) {
    if (per_ch == 0) throw ValidationError("batchnorm: empty batch in train mode");
    for (int c = 0; c < xs.c; ++c) {
      double sum = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = px + (static_cast<int64_t>(n) * xs.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(per_ch);
      double sq = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = px + (static_cast<int64_t>(n) * xs.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      mean_v[static_cast<size_t>(c)] = static_cast<float>(mu);
      var_v[static_cast<size_t>(c)] = static_cast<float>(sq / static_cast<double>(per_ch));
    }
    r.batch_mean = Tensor(Shape{1, xs.c, 1, 1}, mean_v);
    r.batch_var = Tensor(Shape{1, xs.c, 1, 1}, var_v);
    std::vector<float> nrm(static_cast<size_t>(xs.c)), nrv(static_cast<size_t>(xs.c));
    for (int c = 0; c < xs.c; ++c) {
      nrm[static_cast<size_t>(c)] = (1.0f - momentum) * running_mean.data()[c] + momentum * mean_v[static_cast<size_t>(c)];
      nrv[static_cast<size_t>(c)] = (1.0f - momentum) * running_var.data()[c] + momentum * var_v[static_cast<size_t>(c)];
    }
    r.new_running_mean = Tensor(Shape{1, xs.c, 1, 1}, std::move(nrm));
    r.new_running_var = Tensor(Shape{1, xs.c, 1, 1}, std::move(nrv));
  } else {
    for (int c = 0; c < xs.c; ++c) {
      mean_v[static_cast<size_t>(c)] = running_mean.data()[c];
      var_v[static_cast<size_t>(c)] = running_var.data()[c];
    }
  }

  std::vector<float> out(static_cast<size_t>(xs.numel()));
  for (int c = 0; c < xs.c; ++c) {
    const float mu = mean_v[static_cast<size_t>(c)];
    const float inv = 1.0f / std::sqrt(var_v[static_cast<size_t>(c)] + eps);
    const float gscale = gamma.data()[c] * inv;
    const float b = beta.data()[c];
    for (int n = 0; n < xs.n; ++n) {
      const int64_t base = (static_cast<int64_t>(n) * xs.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        out[static_cast<size_t>(base + i)] = (px[base + i] - mu) * gscale + b;
      }
    }
  }
  r.out = Tensor(xs, std::move(out));
  return r;
}

BnGrads batchnorm_infer_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& running_mean, const Tensor& running_var,
                                 float eps, const Tensor& grad_out) {
  const Shape& xs = x.shape();
  check_same_shape(grad_out.shape(), xs, "batchnorm_infer_backward");
  const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
  const float* px = x.data();
  const float* pg = grad_out.data();
  std::vector<float> dx(static_cast<size_t>(xs.numel()));
  std::vector<float> dgamma(static_cast<size_t>(xs.c)), dbeta(static_cast<size_t>(xs.c));
  for (int c = 0; c < xs.c; ++c) {
    const float mu = running_mean.data()[c];
    const float inv = 1.0f / std::sqrt(running_var.data()[c] + eps);
    const float gscale = gamma.data()[c] * inv;
    double dg = 0.0, db = 0.0;
    for (int n = 0; n < xs.n; ++n) {
      const int64_t base = (static_cast<int64_t>(n) * xs.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const float g = pg[base + i];
        dx[static_cast<size_t>(base + i)] = g * gscale;
        dg += static_cast<double>(g) * (px[base + i] - mu) * inv;
        db += g;
      }
    }
    dgamma[static_cast<size_t>(c)] = static_cast<float>(dg);
    dbeta[static_cast<size_t>(c)] = static_cast<float>(db);
  }
  return BnGrads{Tensor(xs, std::move(dx)),
                 Tensor(Shape{1, xs.c, 1, 1}, std::move(dgamma)),
                 Tensor(Shape{1, xs.c, 1, 1}, std::move(dbeta))};
}

BnGrads batchnorm_train_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& batch_mean, const Tensor& batch_var,
                                 float eps, const Tensor& grad_out) {
  const Shape& xs = x.shape();
  check_same_shape(grad_out.shape(), xs, "batchnorm_train_backward");
  const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
  const int64_t per_ch = static_cast<int64_t>(xs.n) * plane;
  const float* px = x.data();
  const float* pg = grad_out.data();
  std::vector<float> dx(static_cast<size_t>(xs.numel()));
  std::vector<float> dgamma(static_cast<size_t>(xs.c)), dbeta(static_cast<size_t>(xs.c));
  for (int c = 0; c < xs.c; ++c) {
    const double mu = batch_mean.data()[c];
    const double inv = 1.0 / std::sqrt(static_cast<double>(batch_var.data()[c]) + eps);
    double dg = 0.0, db = 0.0;
    for (int n = 0; n < xs.n; ++n) {
      const int64_t base = (static_cast<int64_t>(n) * xs.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double g = pg[base + i];
        dg += g * (px[base + i] - mu) * inv;
        db += g;
      }
    }
    dgamma[static_cast<size_t>(c)] = static_cast<float>(dg);
    dbeta[static_cast<size_t>(c)] = static_cast<float>(db);
    // dx = (gamma * inv / N) * (N*g - sum(g) - xhat * sum(g*xhat))
    const double scale = gamma.data()[c] * inv / static_cast<double>(per_ch);
    for (int n = 0; n < xs.n; ++n) {
      const int64_t base = (static_cast<int64_t>(n) * xs.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double xhat = (px[base + i] - mu) * inv;
        dx[static_cast<size_t>(base + i)] =
            static_cast<float>(scale * (static_cast<double>(per_ch) * pg[base + i] - db - xhat * dg));
      }
    }
  }
  return BnGrads{Tensor(xs, std::move(dx)),
                 Tensor(Shape{1, xs.c, 1, 1}, std::move(dgamma)),
                 Tensor(Shape{1, xs.c, 1, 1}, std::move(dbeta))};
}

namespace {
inline float sigmoid_f(float x) { return 1.0f / (1.0f + std::exp(-x)); }
}  // namespace

Tensor activation(const Tensor& x, Act kind) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  const float* p = x.data();
  switch (kind) {
    case Act::relu6:
      for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = std::min(std::max(p[i], 0.0f), 6.0f);
      break;
    case Act::sigmoid:
      for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = sigmoid_f(p[i]);
      break;
    case Act::swish:
      for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = p[i] * sigmoid_f(p[i]);
      break;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor activation_backward(const Tensor& x, Act kind, const Tensor& grad_out) {
  check_same_shape(grad_out.shape(), x.shape(), "activation_backward");
  std::vector<float> out(static_cast<size_t>(x.numel()));
  const float* p = x.data();
  const float* g = grad_out.data();
  switch (kind) {
    case Act::relu6:
      for (int64_t i = 0; i < x.numel(); ++i) {
        out[static_cast<size_t>(i)] = (p[i] > 0.0f && p[i] < 6.0f) ? g[i] : 0.0f;
      }
      break;
    case Act::sigmoid:
      for (int64_t i = 0; i < x.numel(); ++i) {
        const float s = sigmoid_f(p[i]);
        out[static_cast<size_t>(i)] = g[i] * s * (1.0f - s);
      }
      break;
    case Act::swish:
      for (int64_t i = 0; i < x.numel(); ++i) {
        const float s = sigmoid_f(p[i]);
        out[static_cast<size_t>(i)] = g[i] * (s + p[i] * s * (1.0f - s));
      }
      break;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor resize(const Tensor& x, int factor, ResizeDir dir) {
  if (!is_pow2(factor)) {
    throw ValidationError("resize: factor must be a power of two, got " + std::to_string(factor));
  }
  const Shape& is = x.shape();
  if (factor == 1) return x;
  const float* p = x.data();
  if (dir == ResizeDir::up) {
    Shape os{is.n, is.c, is.h * factor, is.w * factor};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    for (int nc = 0; nc < is.n * is.c; ++nc) {
      const float* src = p + static_cast<int64_t>(nc) * is.h * is.w;
      float* dst = out.data() + static_cast<int64_t>(nc) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        const float* srow = src + static_cast<int64_t>(oy / factor) * is.w;
        for (int ox = 0; ox < os.w; ++ox) {
          dst[static_cast<int64_t>(oy) * os.w + ox] = srow[ox / factor];
        }
      }
    }
    return Tensor(os, std::move(out));
  }
  if (is.h % factor != 0 || is.w % factor != 0) {
    throw ValidationError("resize: spatial dims " + std::to_string(is.h) + "x" + std::to_string(is.w) +
                          " not divisible by downsample factor " + std::to_string(factor));
  }
  Shape os{is.n, is.c, is.h / factor, is.w / factor};
  std::vector<float> out(static_cast<size_t>(os.numel()));
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int nc = 0; nc < is.n * is.c; ++nc) {
    const float* src = p + static_cast<int64_t>(nc) * is.h * is.w;
    float* dst = out.data() + static_cast<int64_t>(nc) * os.h * os.w;
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        double acc = 0.0;
        for (int ky = 0; ky < factor; ++ky) {
          const float* srow = src + (static_cast<int64_t>(oy) * factor + ky) * is.w + static_cast<int64_t>(ox) * factor;
          for (int kx = 0; kx < factor; ++kx) acc += srow[kx];
        }
        dst[static_cast<int64_t>(oy) * os.w + ox] = static_cast<float>(acc * inv);
      }
    }
  }
  return Tensor(os, std::move(out));
}

Tensor resize_backward(const Shape& in_shape, int factor, ResizeDir dir, const Tensor& grad_out) {
  if (factor == 1) return grad_out;
  const Shape& os = grad_out.shape();
  const float* g = grad_out.data();
  std::vector<float> din(static_cast<size_t>(in_shape.numel()), 0.0f);
  if (dir == ResizeDir::up) {
    // each input cell receives the sum of its factor x factor replica block
    for (int nc = 0; nc < in_shape.n * in_shape.c; ++nc) {
      const float* gsrc = g + static_cast<int64_t>(nc) * os.h * os.w;
      float* dst = din.data() + static_cast<int64_t>(nc) * in_shape.h * in_shape.w;
      for (int iy = 0; iy < in_shape.h; ++iy) {
        for (int ix = 0; ix < in_shape.w; ++ix) {
          double acc = 0.0;
          for (int ky = 0; ky < factor; ++ky) {
            const float* grow = gsrc + (static_cast<int64_t>(iy) * factor + ky) * os.w + static_cast<int64_t>(ix) * factor;
            for (int kx = 0; kx < factor; ++kx) acc += grow[kx];
          }
          dst[static_cast<int64_t>(iy) * in_shape.w + ix] = static_cast<float>(acc);
        }
      }
    }
  } else {
    const float inv = 1.0f / (static_cast<float>(factor) * factor);
    for (int nc = 0; nc < in_shape.n * in_shape.c; ++nc) {
      const float* gsrc = g + static_cast<int64_t>(nc) * os.h * os.w;
      float* dst = din.data() + static_cast<int64_t>(nc) * in_shape.h * in_shape.w;
      for (int iy = 0; iy < in_shape.h; ++iy) {
        const float* grow = gsrc + static_cast<int64_t>(iy / factor) * os.w;
        for (int ix = 0; ix < in_shape.w; ++ix) {
          dst[static_cast<int64_t>(iy) * in_shape.w + ix] = grow[ix / factor] * inv;
        }
      }
    }
  }
  return Tensor(in_shape, std::move(din));
}

namespace {

std::vector<float> fusion_norm_weights(const std::vector<float>& weights, float eps, double* denom_out) {
  double denom = eps;
  for (float w : weights) denom += std::max(w, 0.0f);
  std::vector<float> norm(weights.size(), 0.0f);
  if (denom > 0.0) {
    for (size_t i = 0; i < weights.size(); ++i) {
      norm[i] = static_cast<float>(std::max(weights[i], 0.0f) / denom);
    }
  }
  if (denom_out) *denom_out = denom;
  return norm;
}

}  // namespace

Tensor weighted_fusion(const std::vector<Tensor>& inputs, const std::vector<float>& weights, float eps) {
  if (inputs.empty()) throw ValidationError("weighted_fusion: empty input list");
  if (inputs.size() != weights.size()) {
    throw ValidationError("weighted_fusion: " + std::to_string(inputs.size()) + " inputs vs " +
                          std::to_string(weights.size()) + " weights");
  }
  const Shape& s = inputs[0].shape();
  for (const auto& t : inputs) check_same_shape(t.shape(), s, "weighted_fusion");
  std::vector<float> norm = fusion_norm_weights(weights, eps, nullptr);

  std::vector<float> out(static_cast<size_t>(s.numel()));
  for (int64_t i = 0; i < s.numel(); ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < inputs.size(); ++j) {
      acc += static_cast<double>(norm[j]) * inputs[j].data()[i];
    }
    out[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return Tensor(s, std::move(out));
}

FusionGrads weighted_fusion_backward(const std::vector<Tensor>& inputs,
                                     const std::vector<float>& weights, float eps,
                                     const Tensor& grad_out) {
  const Shape& s = inputs.at(0).shape();
  check_same_shape(grad_out.shape(), s, "weighted_fusion_backward");
  double denom = 0.0;
  std::vector<float> norm = fusion_norm_weights(weights, eps, &denom);
  const float* g = grad_out.data();

  FusionGrads grads;
  std::vector<double> dots(inputs.size(), 0.0);  // <grad, x_j>
  for (size_t j = 0; j < inputs.size(); ++j) {
    const float* p = inputs[j].data();
    double d = 0.0;
    for (int64_t i = 0; i < s.numel(); ++i) d += static_cast<double>(g[i]) * p[i];
    dots[j] = d;
    std::vector<float> dx(static_cast<size_t>(s.numel()));
    for (int64_t i = 0; i < s.numel(); ++i) dx[static_cast<size_t>(i)] = norm[j] * g[i];
    grads.d_inputs.push_back(Tensor(s, std::move(dx)));
  }
  double dot_out = 0.0;
  for (size_t j = 0; j < inputs.size(); ++j) dot_out += norm[j] * dots[j];
  grads.d_weights.resize(inputs.size(), 0.0f);
  if (denom > 0.0) {
    for (size_t j = 0; j < inputs.size(); ++j) {
      // relu gate: weight only receives gradient while positive
      grads.d_weights[j] = weights[j] > 0.0f
                               ? static_cast<float>((dots[j] - dot_out) / denom)
                               : 0.0f;
    }
  }
  return grads;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& is = x.shape();
  if (is.h < 1 || is.w < 1) throw ValidationError("global_avg_pool: empty spatial dims " + is.str());
  const int64_t plane = static_cast<int64_t>(is.h) * is.w;
  std::vector<float> out(static_cast<size_t>(is.n) * is.c);
  const float* p = x.data();
  for (int nc = 0; nc < is.n * is.c; ++nc) {
    double acc = 0.0;
    const float* src = p + static_cast<int64_t>(nc) * plane;
    for (int64_t i = 0; i < plane; ++i) acc += src[i];
    out[static_cast<size_t>(nc)] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return Tensor(Shape{is.n, is.c, 1, 1}, std::move(out));
}

Tensor global_avg_pool_backward(const Shape& in_shape, const Tensor& grad_out) {
  const int64_t plane = static_cast<int64_t>(in_shape.h) * in_shape.w;
  const float inv = 1.0f / static_cast<float>(plane);
  std::vector<float> din(static_cast<size_t>(in_shape.numel()));
  for (int nc = 0; nc < in_shape.n * in_shape.c; ++nc) {
    const float gv = grad_out.data()[nc] * inv;
    float* dst = din.data() + static_cast<int64_t>(nc) * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] = gv;
  }
  return Tensor(in_shape, std::move(din));
}

Tensor eltwise_add(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "eltwise_add");
  std::vector<float> out(static_cast<size_t>(a.numel()));
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[static_cast<size_t>(i)] = pa[i] + pb[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor eltwise_mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "eltwise_mul");
  std::vector<float> out(static_cast<size_t>(a.numel()));
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[static_cast<size_t>(i)] = pa[i] * pb[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  int total_c = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ValidationError("concat_channels: incompatible shape " + s.str() + " vs " + s0.str());
    }
    total_c += s.c;
  }
  Shape os{s0.n, total_c, s0.h, s0.w};
  const int64_t plane = static_cast<int64_t>(s0.h) * s0.w;
  std::vector<float> out(static_cast<size_t>(os.numel()));
  for (int n = 0; n < s0.n; ++n) {
    int64_t coff = 0;
    for (const auto& t : xs) {
      const int c = t.shape().c;
      const float* src = t.data() + static_cast<int64_t>(n) * c * plane;
      float* dst = out.data() + (static_cast<int64_t>(n) * total_c + coff) * plane;
      std::copy(src, src + static_cast<int64_t>(c) * plane, dst);
      coff += c;
    }
  }
  return Tensor(os, std::move(out));
}

std::vector<Tensor> split_channels(const std::vector<Shape>& shapes, const Tensor& grad_out) {
  const Shape& os = grad_out.shape();
  std::vector<Tensor> parts;
  const int64_t plane = static_cast<int64_t>(os.h) * os.w;
  int64_t coff = 0;
  for (const Shape& s : shapes) {
    std::vector<float> part(static_cast<size_t>(s.numel()));
    for (int n = 0; n < s.n; ++n) {
      const float* src = grad_out.data() + (static_cast<int64_t>(n) * os.c + coff) * plane;
      float* dst = part.data() + static_cast<int64_t>(n) * s.c * plane;
      std::copy(src, src + static_cast<int64_t>(s.c) * plane, dst);
    }
    coff += s.c;
    parts.push_back(Tensor(s, std::move(part)));
  }
  return parts;
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  const Shape& xs = x.shape();
  if (!(gate.shape() == Shape{xs.n, xs.c, 1, 1})) {
    throw ValidationError("scale_channels: gate shape " + gate.shape().str() + " != (" +
                          std::to_string(xs.n) + "," + std::to_string(xs.c) + ",1,1)");
  }
  const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
  std::vector<float> out(static_cast<size_t>(xs.numel()));
  const float* p = x.data();
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const float gv = gate.data()[nc];
    const float* src = p + static_cast<int64_t>(nc) * plane;
    float* dst = out.data() + static_cast<int64_t>(nc) * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * gv;
  }
  return Tensor(xs, std::move(out));
}

ScaleGrads scale_channels_backward(const Tensor& x, const Tensor& gate, const Tensor& grad_out) {
  const Shape& xs = x.shape();
  check_same_shape(grad_out.shape(), xs, "scale_channels_backward");
  const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
  std::vector<float> dx(static_cast<size_t>(xs.numel()));
  std::vector<float> dg(static_cast<size_t>(xs.n) * xs.c);
  const float* p = x.data();
  const float* g = grad_out.data();
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const float gv = gate.data()[nc];
    double acc = 0.0;
    const float* src = p + static_cast<int64_t>(nc) * plane;
    const float* gsrc = g + static_cast<int64_t>(nc) * plane;
    float* dst = dx.data() + static_cast<int64_t>(nc) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      dst[i] = gsrc[i] * gv;
      acc += static_cast<double>(gsrc[i]) * src[i];
    }
    dg[static_cast<size_t>(nc)] = static_cast<float>(acc);
  }
  return ScaleGrads{Tensor(xs, std::move(dx)), Tensor(Shape{xs.n, xs.c, 1, 1}, std::move(dg))};
}

Tensor sum_to_scalar(const Tensor& x) {
  double acc = 0.0;
  const float* p = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += p[i];
  return Tensor(Shape{1, 1, 1, 1}, {static_cast<float>(acc)});
}

}  // namespace yoloret::kernels
