#include "attnct/explain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "attnct/errors.hpp"
#include "attnct/ops.hpp"

namespace attnct::explain {
namespace {

constexpr double kOverlayAlpha = 0.6;

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError(std::string(what) + ": expected a 1 x H x W image, got " + shape_str(image.shape()));
  }
}

Tensor as_batch(const Tensor& image) { return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}); }

Tensor as_grid(const Tensor& t, const char* what) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  throw DimensionError(std::string(what) + ": expected H x W, got " + shape_str(t.shape()));
}

void require_layer_gradient(const LayerGradient& lg) {
  if (lg.activation.rank() != 3) {
    throw DimensionError("saliency: expected a C x h x w activation, got " + shape_str(lg.activation.shape()));
  }
  require_same_shape(lg.activation, lg.gradient, "saliency");
}

// relu(sum_k w_k A_k)
Tensor weighted_sum(const Tensor& a, const std::vector<double>& w) {
  const std::size_t c = a.dim(0), hw = a.dim(1) * a.dim(2);
  Tensor out({a.dim(1), a.dim(2)}, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < hw; ++i) out[i] += w[k] * a[k * hw + i];
  }
  for (auto& v : out.data()) v = std::max(v, 0.0);
  return out;
}

double base_value(const net::Network& network, const Tensor& batch, OcclusionTarget target) {
  if (target == OcclusionTarget::probability) return network.predict(batch)[0];
  Tape tape(false);
  auto& mutable_net = const_cast<net::Network&>(network);
  return tape.value(mutable_net.forward(tape, batch, Mode::eval).logits)[0];
}

std::vector<double> batch_values(const net::Network& network, const Tensor& batch, OcclusionTarget target) {
  if (target == OcclusionTarget::probability) return network.predict_chunked(batch);
  std::vector<double> out;
  const std::size_t n = batch.dim(0), per = batch.numel() / n, chunk = 16;
  auto& mutable_net = const_cast<net::Network&>(network);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    std::vector<double> part(batch.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                             batch.data().begin() + static_cast<std::ptrdiff_t>((start + m) * per));
    Tape tape(false);
    const Tensor sub({m, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(part));
    const Tensor& logits = tape.value(mutable_net.forward(tape, sub, Mode::eval).logits);
    for (std::size_t i = 0; i < m; ++i) out.push_back(logits[i]);
  }
  return out;
}

std::string gray_hex(double v) {
  const int g = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 31.0) * 255 / 31);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", g, g, g);
  return buf;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::gradcam: return "gradcam";
    case Method::gradcampp: return "gradcampp";
    case Method::occlusion: return "occlusion";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (auto m : {Method::gradcam, Method::gradcampp, Method::occlusion}) {
    if (s == to_string(m)) return m;
  }
  throw UsageError("unknown saliency method `" + s + "` (expected gradcam, gradcampp, or occlusion)");
}

LayerGradient layer_gradient(net::Network& network, const Tensor& image, const std::string& layer) {
  require_image(image, "layer_gradient");
  const auto names = network.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string msg = "unknown layer `" + layer + "`; valid layers:";
    for (const auto& n : names) msg += " " + n;
    throw LookupError(msg);
  }
  Tape tape(true);
  const Var input = tape.leaf(as_batch(image), true);
  const std::string captures[] = {layer};
  const auto binder = [&tape](const std::string&, const Tensor& v) { return tape.constant(v); };
  const auto fr = network.forward(tape, input, Mode::eval, captures, binder);
  const Var a = fr.captures.at(layer);
  tape.backward(fr.logits);
  const Tensor& av = tape.value(a);
  if (av.rank() != 4) throw DimensionError("layer `" + layer + "` is not a convolutional activation");
  const Shape chw{av.dim(1), av.dim(2), av.dim(3)};
  return {av.reshaped(chw), tape.grad(a).reshaped(chw)};
}

Tensor gradcam_weights_map(const LayerGradient& lg) {
  require_layer_gradient(lg);
  const std::size_t c = lg.activation.dim(0), hw = lg.activation.dim(1) * lg.activation.dim(2);
  std::vector<double> w(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < hw; ++i) w[k] += lg.gradient[k * hw + i];
    w[k] /= static_cast<double>(hw);
  }
  return weighted_sum(lg.activation, w);
}

Tensor gradcampp_weights_map(const LayerGradient& lg) {
  require_layer_gradient(lg);
  const std::size_t c = lg.activation.dim(0), hw = lg.activation.dim(1) * lg.activation.dim(2);
  std::vector<double> w(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double* a = lg.activation.data().data() + k * hw;
    const double* g = lg.gradient.data().data() + k * hw;
    double a_sum = 0.0;
    for (std::size_t i = 0; i < hw; ++i) a_sum += a[i];
    for (std::size_t i = 0; i < hw; ++i) {
      const double g2 = g[i] * g[i];
      const double denom = 2.0 * g2 + a_sum * g2 * g[i];
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      w[k] += alpha * std::max(g[i], 0.0);
    }
  }
  return weighted_sum(lg.activation, w);
}

Tensor upsample_normalize(const Tensor& raw, std::size_t height, std::size_t width) {
  const Tensor grid = as_grid(raw, "upsample_normalize");
  Tensor up = resize_bilinear(grid.reshaped({1, 1, grid.dim(0), grid.dim(1)}), height, width).reshaped({height, width});
  double peak = 0.0;
  for (double v : up.data()) peak = std::max(peak, v);
  if (!(peak > 0.0)) return Tensor({height, width}, 0.0);
  for (auto& v : up.data()) v = std::clamp(v / peak, 0.0, 1.0);
  return up;
}

SaliencyMap grad_cam(net::Network& network, const Tensor& image, const std::string& layer) {
  const auto lg = layer_gradient(network, image, layer);
  return {upsample_normalize(gradcam_weights_map(lg), image.dim(1), image.dim(2)), layer, Method::gradcam};
}

SaliencyMap grad_cam_pp(net::Network& network, const Tensor& image, const std::string& layer) {
  const auto lg = layer_gradient(network, image, layer);
  return {upsample_normalize(gradcampp_weights_map(lg), image.dim(1), image.dim(2)), layer, Method::gradcampp};
}

void OcclusionSpec::validate(std::size_t height, std::size_t width) const {
  if (!(stride >= 1 && stride <= patch && patch <= std::min(height, width))) {
    throw ConfigError("occlusion: need 1 <= stride <= patch <= min(H, W); got patch " + std::to_string(patch) +
                      ", stride " + std::to_string(stride) + " for " + std::to_string(height) + " x " +
                      std::to_string(width));
  }
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::vector<std::size_t> o;
  for (std::size_t p = 0; p + patch <= extent; p += stride) o.push_back(p);
  if (o.back() + patch != extent) o.push_back(extent - patch);
  return o;
}

SaliencyMap occlusion_heatmap(const net::Network& network, const Tensor& image, const OcclusionSpec& spec) {
  require_image(image, "occlusion_heatmap");
  const std::size_t h = image.dim(1), w = image.dim(2);
  spec.validate(h, w);
  const auto ys = window_origins(h, spec.patch, spec.stride);
  const auto xs = window_origins(w, spec.patch, spec.stride);
  const std::size_t windows = ys.size() * xs.size();

  Tensor batch({windows, 1, h, w});
  for (std::size_t k = 0; k < windows; ++k) {
    const std::size_t y0 = ys[k / xs.size()], x0 = xs[k % xs.size()];
    double* dst = batch.data().data() + k * h * w;
    std::copy(image.data().begin(), image.data().end(), dst);
    for (std::size_t y = y0; y < y0 + spec.patch; ++y)
      for (std::size_t x = x0; x < x0 + spec.patch; ++x) dst[y * w + x] = spec.fill;
  }
  const double base = base_value(network, as_batch(image), spec.target);
  const auto occluded = batch_values(network, batch, spec.target);

  Tensor sum({h, w}, 0.0), count({h, w}, 0.0);
  for (std::size_t k = 0; k < windows; ++k) {
    const double drop = std::max(0.0, base - occluded[k]);
    const std::size_t y0 = ys[k / xs.size()], x0 = xs[k % xs.size()];
    for (std::size_t y = y0; y < y0 + spec.patch; ++y)
      for (std::size_t x = x0; x < x0 + spec.patch; ++x) {
        sum[y * w + x] += drop;
        count[y * w + x] += 1.0;
      }
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < sum.numel(); ++i) {
    sum[i] /= count[i];
    peak = std::max(peak, sum[i]);
  }
  if (peak > 0.0) {
    for (auto& v : sum.data()) v /= peak;
  }
  return {sum, "input", Method::occlusion};
}

double localization_score(const Tensor& map, const Tensor& mask) {
  const Tensor m = as_grid(map, "localization_score");
  const Tensor k = as_grid(mask, "localization_score");
  require_same_shape(m, k, "localization_score");
  double inside = 0.0, total = 0.0, area = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    if (k[i] != 0.0 && k[i] != 1.0) throw InputError("localization_score: mask must be binary");
    total += m[i];
    inside += m[i] * k[i];
    area += k[i];
  }
  if (area == 0.0) throw InputError("localization_score: mask is empty");
  return total > 0.0 ? inside / total : 0.0;
}

Overlay render_overlay(const Tensor& image, const Tensor& map, const std::optional<Tensor>& mask) {
  require_image(image, "render_overlay");
  const std::size_t h = image.dim(1), w = image.dim(2);
  const Tensor m = as_grid(map, "render_overlay");
  if (m.dim(0) != h || m.dim(1) != w) {
    throw DimensionError("render_overlay: map is " + shape_str(m.shape()) + " but image is " + shape_str(image.shape()));
  }
  std::optional<Tensor> k;
  if (mask) {
    k = as_grid(*mask, "render_overlay");
    if (k->dim(0) != h || k->dim(1) != w) {
      throw DimensionError("render_overlay: mask is " + shape_str(k->shape()) + " but image is " +
                           shape_str(image.shape()));
    }
  }
  const std::size_t panels = k ? 4 : 3;
  Overlay out;
  out.panel = Tensor({1, h, panels * w});
  auto put = [&](std::size_t p, std::size_t y, std::size_t x, double v) { out.panel[y * panels * w + p * w + x] = v; };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double orig = image[y * w + x], s = m[y * w + x];
      put(0, y, x, orig);
      put(1, y, x, s);
      put(2, y, x, orig + kOverlayAlpha * s * (1.0 - orig));
      if (k) {
        const auto in = [&](long yy, long xx) {
          return yy >= 0 && xx >= 0 && yy < static_cast<long>(h) && xx < static_cast<long>(w) &&
                 (*k)[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] > 0.5;
        };
        const long yi = static_cast<long>(y), xi = static_cast<long>(x);
        const bool edge = in(yi, xi) && !(in(yi - 1, xi) && in(yi + 1, xi) && in(yi, xi - 1) && in(yi, xi + 1));
        put(3, y, x, edge ? 1.0 : orig);
      }
    }
  }

  std::ostringstream svg;
  const std::size_t pw = panels * w;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << pw << ' ' << h + 14
      << "\" shape-rendering=\"crispEdges\">\n<rect width=\"" << pw << "\" height=\"" << h + 14 << "\" fill=\"#fff\"/>\n";
  const char* titles[] = {"original", "saliency", "overlay", "mask"};
  for (std::size_t p = 0; p < panels; ++p) {
    svg << "<text x=\"" << p * w + 2 << "\" y=\"10\" font-size=\"9\" font-family=\"sans-serif\">" << titles[p]
        << "</text>\n";
  }
  // One rect per run of equal 5-bit gray levels within a row.
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t x = 0;
    while (x < pw) {
      const std::string c = gray_hex(out.panel[y * pw + x]);
      std::size_t end = x + 1;
      while (end < pw && end % w != 0 && gray_hex(out.panel[y * pw + end]) == c) ++end;
      svg << "<rect x=\"" << x << "\" y=\"" << y + 14 << "\" width=\"" << end - x << "\" height=\"1\" fill=\"" << c
          << "\"/>\n";
      x = end;
    }
  }
  svg << "</svg>\n";
  out.svg = svg.str();
  return out;
}

std::string saliency_csv(const Tensor& map) {
  const Tensor m = as_grid(map, "saliency_csv");
  std::string out = "x,y,value\n";
  char buf[64];
  for (std::size_t y = 0; y < m.dim(0); ++y) {
    for (std::size_t x = 0; x < m.dim(1); ++x) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f\n", x, y, m[y * m.dim(1) + x]);
      out += buf;
    }
  }
  return out;
}

}  // namespace attnct::explain
