#include "attnct/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "attnct/errors.hpp"

namespace attnct {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void require_nchw(const Tensor& t, const char* op) { require_rank(t, 4, op, "input"); }

struct ConvGeom {
  std::size_t n, c, h, w, o, k, ho, wo, stride, pad;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  require_nchw(x, "conv2d");
  require_rank(w, 4, "conv2d", "weight");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: input channels (axis 1 of input) = " + std::to_string(x.dim(1)) +
                         " but weight in-channels (axis 1 of weight) = " + std::to_string(w.dim(1)));
  }
  if (w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: kernel must be square, weight axes 2/3 are " + std::to_string(w.dim(2)) +
                         "/" + std::to_string(w.dim(3)));
  }
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), 0, 0, stride, pad};
  g.ho = conv_out_extent(g.h, g.k, stride, pad);
  g.wo = conv_out_extent(g.w, g.k, stride, pad);
  return g;
}

// Patch matrix (C*K*K) x (Ho*Wo) for one sample.
void im2col(const double* x, const ConvGeom& g, double* col) {
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* out = row + oy * g.wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* xr = xc + iy * w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= w) ? 0.0 : xr[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* dx) {
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= h) continue;
          double* dr = dxc + iy * w;
          const double* in = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < w) dr[ix] += in[ox];
          }
        }
      }
    }
  }
}

struct Axis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-center source coordinates for one axis.
Axis bilinear_axis(std::size_t in, std::size_t out) {
  Axis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    a.lo[o] = lo;
    a.hi[o] = std::min(lo + 1, in - 1);
    a.frac[o] = src - static_cast<double>(lo);
  }
  return a;
}

void resize_adjoint_add(const Tensor& dy, std::size_t in_h, std::size_t in_w, Tensor& dx) {
  const std::size_t planes = dy.dim(0) * dy.dim(1);
  const std::size_t oh = dy.dim(2), ow = dy.dim(3);
  const Axis ay = bilinear_axis(in_h, oh), ax = bilinear_axis(in_w, ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = dy.data().data() + p * oh * ow;
    double* dst = dx.data().data() + p * in_h * in_w;
    for (std::size_t y = 0; y < oh; ++y) {
      const double fy = ay.frac[y];
      double* r0 = dst + ay.lo[y] * in_w;
      double* r1 = dst + ay.hi[y] * in_w;
      for (std::size_t x = 0; x < ow; ++x) {
        const double g = src[y * ow + x];
        const double fx = ax.frac[x];
        r0[ax.lo[x]] += g * (1 - fy) * (1 - fx);
        r0[ax.hi[x]] += g * (1 - fy) * fx;
        r1[ax.lo[x]] += g * fy * (1 - fx);
        r1[ax.hi[x]] += g * fy * fx;
      }
    }
  }
}

double stable_sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::min();
  static const double hi = std::nextafter(1.0, 0.0);
  double s;
  if (x >= 0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::clamp(s, lo, hi);
}

}  // namespace

BatchNormState BatchNormState::fresh(std::size_t channels, double momentum, double epsilon) {
  BatchNormState s;
  s.running_mean = Tensor({channels}, 0.0);
  s.running_var = Tensor({channels}, 1.0);
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < kernel) {
    throw DimensionError("spatial extent " + std::to_string(in) + " with padding " + std::to_string(padding) +
                         " is smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeom g = conv_geometry(input, weight, stride, padding);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.o)) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(g.o) + "], got " +
                         shape_str(bias->shape()));
  }
  Tensor out({g.n, g.o, g.ho, g.wo});
  ConstMatMap wm(weight.data().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.patch()));
  RowMat col;
  if (!g.pointwise()) col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = input.data().data() + n * g.c * g.h * g.w;
    MatMap on(out.data().data() + n * g.o * g.pixels(), static_cast<Eigen::Index>(g.o),
              static_cast<Eigen::Index>(g.pixels()));
    if (g.pointwise()) {
      on.noalias() = wm * ConstMatMap(xn, static_cast<Eigen::Index>(g.c), static_cast<Eigen::Index>(g.pixels()));
    } else {
      im2col(xn, g, col.data());
      on.noalias() = wm * col;
    }
    if (bias) {
      for (std::size_t o = 0; o < g.o; ++o) on.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
    }
  }
  return out;
}

Var conv2d(Tape& tape, Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  const Tensor* b = bias.valid() ? &tape.value(bias) : nullptr;
  Tensor out = conv2d_forward(x, w, b, stride, padding);
  const ConvGeom g = conv_geometry(x, w, stride, padding);

  std::vector<std::size_t> inputs{input.id, weight.id};
  if (bias.valid()) inputs.push_back(bias.id);
  return tape.push(std::move(out), inputs, "conv2d", [=](Tape& t, const Tensor& dy) {
    const Tensor& xv = t.value(input);
    const Tensor& wv = t.value(weight);
    Tensor* dx = t.grad_buffer(input.id);
    Tensor* dw = t.grad_buffer(weight.id);
    Tensor* db = bias.valid() ? t.grad_buffer(bias.id) : nullptr;
    const auto rows = static_cast<Eigen::Index>(g.patch());
    const auto cols = static_cast<Eigen::Index>(g.pixels());
    const auto outc = static_cast<Eigen::Index>(g.o);
    ConstMatMap wm(wv.data().data(), outc, rows);
    RowMat col(rows, cols);
    RowMat dcol(rows, cols);
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatMap dyn(dy.data().data() + n * g.o * g.pixels(), outc, cols);
      const double* xn = xv.data().data() + n * g.c * g.h * g.w;
      if (dw) {
        MatMap dwm(dw->data().data(), outc, rows);
        if (g.pointwise()) {
          dwm.noalias() += dyn * ConstMatMap(xn, rows, cols).transpose();
        } else {
          im2col(xn, g, col.data());
          dwm.noalias() += dyn * col.transpose();
        }
      }
      if (db) {
        for (std::size_t o = 0; o < g.o; ++o) (*db)[o] += dyn.row(static_cast<Eigen::Index>(o)).sum();
      }
      if (dx) {
        double* dxn = dx->data().data() + n * g.c * g.h * g.w;
        if (g.pointwise()) {
          MatMap(dxn, rows, cols).noalias() += wm.transpose() * dyn;
        } else {
          dcol.noalias() = wm.transpose() * dyn;
          col2im_add(dcol.data(), g, dxn);
        }
      }
    }
  });
}

MaxPoolResult maxpool2d_forward(const Tensor& input, std::size_t window, std::size_t stride) {
  require_nchw(input, "maxpool2d");
  if (window == 0 || stride == 0) throw DimensionError("maxpool2d: window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < window || w < window) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " exceeds spatial extent " +
                         std::to_string(h) + "x" + std::to_string(w) + " (axes 2,3)");
  }
  const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  MaxPoolResult r{Tensor({n, c, ho, wo}), {}};
  r.argmax.resize(r.output.numel());
  const auto x = input.data();
  std::size_t j = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++j) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * w + ox * stride + kx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.output[j] = x[best];
        r.argmax[j] = best;
      }
    }
  }
  return r;
}

Var maxpool2d(Tape& tape, Var input, std::size_t window, std::size_t stride) {
  const Tensor& x = tape.value(input);
  MaxPoolResult r = maxpool2d_forward(x, window, stride);

  // Gap between the winner and the runner-up of each window.
  double margin = std::numeric_limits<double>::infinity();
  std::uint64_t pattern = 0xcbf29ce484222325ULL;
  if (window > 1) {
    const std::size_t h = x.dim(2), w = x.dim(3);
    const std::size_t ho = r.output.dim(2), wo = r.output.dim(3);
    std::size_t j = 0;
    for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox, ++j) {
          double second = -std::numeric_limits<double>::infinity();
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = p * h * w + (oy * stride + ky) * w + ox * stride + kx;
              if (idx != r.argmax[j]) second = std::max(second, x[idx]);
            }
          }
          margin = std::min(margin, r.output[j] - second);
          pattern = fnv_mix(pattern, r.argmax[j]);
        }
      }
    }
  }
  tape.note_kink(margin, pattern);

  auto argmax = std::move(r.argmax);
  return tape.push(std::move(r.output), {input.id}, "maxpool2d",
                   [input, argmax = std::move(argmax)](Tape& t, const Tensor& dy) {
                     Tensor* dx = t.grad_buffer(input.id);
                     if (!dx) return;
                     for (std::size_t j = 0; j < argmax.size(); ++j) (*dx)[argmax[j]] += dy[j];
                   });
}

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_nchw(input, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: output extent must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t ih = input.dim(2), iw = input.dim(3);
  const Axis ay = bilinear_axis(ih, out_h), ax = bilinear_axis(iw, out_w);
  Tensor out({input.dim(0), input.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.data().data() + p * ih * iw;
    double* dst = out.data().data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ay.frac[y];
      const double* r0 = src + ay.lo[y] * iw;
      const double* r1 = src + ay.hi[y] * iw;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = ax.frac[x];
        const double top = r0[ax.lo[x]] * (1 - fx) + r0[ax.hi[x]] * fx;
        const double bot = r1[ax.lo[x]] * (1 - fx) + r1[ax.hi[x]] * fx;
        dst[y * out_w + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Var interp_up2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_nchw(x, "interp_up2");
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor out = resize_bilinear(x, 2 * h, 2 * w);
  return tape.push(std::move(out), {input.id}, "interp_up2", [input, h, w](Tape& t, const Tensor& dy) {
    if (Tensor* dx = t.grad_buffer(input.id)) resize_adjoint_add(dy, h, w, *dx);
  });
}

Var relu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  double margin = std::numeric_limits<double>::infinity();
  std::uint64_t pattern = 0xcbf29ce484222325ULL;
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out[i] = v > 0 ? v : 0.0;
    margin = std::min(margin, std::abs(v));
    bits = (bits << 1) | (v > 0 ? 1u : 0u);
    if (i % 64 == 63) pattern = fnv_mix(pattern, bits), bits = 0;
  }
  pattern = fnv_mix(pattern, bits);
  tape.note_kink(margin, pattern);
  return tape.push(std::move(out), {x.id}, "relu", [x](Tape& t, const Tensor& dy) {
    Tensor* dx = t.grad_buffer(x.id);
    if (!dx) return;
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      if (xv[i] > 0) (*dx)[i] += dy[i];
    }
  });
}

Var sigmoid(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = stable_sigmoid(xv[i]);
  const std::size_t self = tape.size();
  return tape.push(std::move(out), {x.id}, "sigmoid", [x, self](Tape& t, const Tensor& dy) {
    Tensor* dx = t.grad_buffer(x.id);
    if (!dx) return;
    const Tensor& y = t.value(Var{self});
    for (std::size_t i = 0; i < dy.numel(); ++i) (*dx)[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return tape.push(std::move(out), {a.id, b.id}, "add", [a, b](Tape& t, const Tensor& dy) {
    t.accumulate(a.id, dy);
    t.accumulate(b.id, dy);
  });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return tape.push(std::move(out), {a.id, b.id}, "mul", [a, b](Tape& t, const Tensor& dy) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (Tensor* da = t.grad_buffer(a.id)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*da)[i] += dy[i] * bv[i];
    }
    if (Tensor* db = t.grad_buffer(b.id)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*db)[i] += dy[i] * av[i];
    }
  });
}

Var add_one_mul(Tape& tape, Var m, Var f) {
  const Tensor& mv = tape.value(m);
  const Tensor& fv = tape.value(f);
  require_same_shape(mv, fv, "add_one_mul");
  Tensor out = fv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += mv[i] * fv[i];
  return tape.push(std::move(out), {m.id, f.id}, "add_one_mul", [m, f](Tape& t, const Tensor& dy) {
    const Tensor& mv = t.value(m);
    const Tensor& fv = t.value(f);
    if (Tensor* dm = t.grad_buffer(m.id)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*dm)[i] += dy[i] * fv[i];
    }
    if (Tensor* df = t.grad_buffer(f.id)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*df)[i] += dy[i] * (1.0 + mv[i]);
    }
  });
}

Var scale(Tape& tape, Var x, double factor) {
  Tensor out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return tape.push(std::move(out), {x.id}, "scale", [x, factor](Tape& t, const Tensor& dy) {
    Tensor* dx = t.grad_buffer(x.id);
    if (!dx) return;
    for (std::size_t i = 0; i < dy.numel(); ++i) (*dx)[i] += dy[i] * factor;
  });
}

Var sum(Tape& tape, Var x) {
  Tensor out = Tensor::scalar(tape.value(x).sum());
  return tape.push(std::move(out), {x.id}, "sum", [x](Tape& t, const Tensor& dy) {
    Tensor* dx = t.grad_buffer(x.id);
    if (!dx) return;
    for (auto& v : dx->data()) v += dy[0];
  });
}

Var batchnorm2d(Tape& tape, Var input, Var gamma, Var beta, BatchNormState& state, Mode mode) {
  const Tensor& x = tape.value(input);
  require_nchw(x, "batchnorm2d");
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gv.shape() != Shape{c} || bv.shape() != Shape{c}) {
    throw DimensionError("batchnorm2d: input has " + std::to_string(c) + " channels (axis 1) but gamma/beta are " +
                         shape_str(gv.shape()) + "/" + shape_str(bv.shape()));
  }
  if (!state.initialized()) throw StateError("batchnorm2d: running statistics are not initialized");
  if (state.running_mean.shape() != Shape{c} || state.running_var.shape() != Shape{c}) {
    throw DimensionError("batchnorm2d: running statistics do not match " + std::to_string(c) + " channels");
  }

  const double count = static_cast<double>(n * hw);
  std::vector<double> mean(c), inv_std(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data().data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      const double mu = s / count;
      double ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data().data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) ss += (p[k] - mu) * (p[k] - mu);
      }
      const double var = ss / count;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + state.epsilon);
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1 - state.momentum) * mu;
      state.running_var[ch] = state.momentum * state.running_var[ch] + (1 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.epsilon);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const double xh = (x[off + k] - mean[ch]) * inv_std[ch];
        xhat[off + k] = xh;
        out[off + k] = gv[ch] * xh + bv[ch];
      }
    }
  }

  return tape.push(
      std::move(out), {input.id, gamma.id, beta.id}, "batchnorm2d",
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& dy) {
        const Tensor& g = t.value(gamma);
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
              sum_dy[ch] += dy[off + k];
              sum_dy_xhat[ch] += dy[off + k] * xhat[off + k];
            }
          }
        }
        if (Tensor* dg = t.grad_buffer(gamma.id)) {
          for (std::size_t ch = 0; ch < c; ++ch) (*dg)[ch] += sum_dy_xhat[ch];
        }
        if (Tensor* db = t.grad_buffer(beta.id)) {
          for (std::size_t ch = 0; ch < c; ++ch) (*db)[ch] += sum_dy[ch];
        }
        Tensor* dx = t.grad_buffer(input.id);
        if (!dx) return;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * hw;
            const double k0 = g[ch] * inv_std[ch];
            if (mode == Mode::train) {
              const double m_dy = sum_dy[ch] / count;
              const double m_dyx = sum_dy_xhat[ch] / count;
              for (std::size_t k = 0; k < hw; ++k) {
                (*dx)[off + k] += k0 * (dy[off + k] - m_dy - xhat[off + k] * m_dyx);
              }
            } else {
              for (std::size_t k = 0; k < hw; ++k) (*dx)[off + k] += k0 * dy[off + k];
            }
          }
        }
      });
}

Var dense(Tape& tape, Var input, Var weight, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  const Tensor& b = tape.value(bias);
  require_rank(x, 2, "dense", "input");
  require_rank(w, 2, "dense", "weight");
  if (x.dim(1) != w.dim(0)) {
    throw DimensionError("dense: input features (axis 1 of input) = " + std::to_string(x.dim(1)) +
                         " but weight rows (axis 0 of weight) = " + std::to_string(w.dim(0)));
  }
  if (b.shape() != Shape{w.dim(1)}) {
    throw DimensionError("dense: bias must have shape [" + std::to_string(w.dim(1)) + "], got " +
                         shape_str(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto k = static_cast<Eigen::Index>(w.dim(1));
  Tensor out({x.dim(0), w.dim(1)});
  MatMap om(out.data().data(), n, k);
  om.noalias() = ConstMatMap(x.data().data(), n, d) * ConstMatMap(w.data().data(), d, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) om(i, j) += b[static_cast<std::size_t>(j)];
  }
  return tape.push(std::move(out), {input.id, weight.id, bias.id}, "dense",
                   [=](Tape& t, const Tensor& dy) {
                     ConstMatMap dym(dy.data().data(), n, k);
                     if (Tensor* dx = t.grad_buffer(input.id)) {
                       MatMap(dx->data().data(), n, d).noalias() +=
                           dym * ConstMatMap(t.value(weight).data().data(), d, k).transpose();
                     }
                     if (Tensor* dw = t.grad_buffer(weight.id)) {
                       MatMap(dw->data().data(), d, k).noalias() +=
                           ConstMatMap(t.value(input).data().data(), n, d).transpose() * dym;
                     }
                     if (Tensor* db = t.grad_buffer(bias.id)) {
                       for (Eigen::Index j = 0; j < k; ++j) (*db)[static_cast<std::size_t>(j)] += dym.col(j).sum();
                     }
                   });
}

Var global_avg_pool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_nchw(x, "global_avg_pool");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < hw; ++k) s += x[p * hw + k];
    out[p] = s / static_cast<double>(hw);
  }
  return tape.push(std::move(out), {input.id}, "global_avg_pool", [input, nc, hw](Tape& t, const Tensor& dy) {
    Tensor* dx = t.grad_buffer(input.id);
    if (!dx) return;
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < nc; ++p) {
      for (std::size_t k = 0; k < hw; ++k) (*dx)[p * hw + k] += dy[p] * inv;
    }
  });
}

}  // namespace attnct
