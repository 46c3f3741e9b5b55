#include "attnct/augment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "attnct/errors.hpp"
#include "attnct/kv.hpp"

namespace attnct::data {
namespace {

enum Stream : std::uint64_t { kRotation = 1, kFlipLr, kFlipTb, kDistortion, kSkew };

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError(std::string(what) + ": expected 1 x H x W, got " + shape_str(image.shape()));
  }
}

// Bilinear lookup at pixel-index coordinates; zero outside the image.
double sample_zero_pad(const Tensor& img, double y, double x) {
  const auto h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double ty = y - fy, tx = x - fx;
  auto px = [&](long r, long c) { return (r < 0 || c < 0 || r >= h || c >= w) ? 0.0 : img[r * w + c]; };
  return (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1)) + ty * ((1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1));
}

// out(i, j) = img(source(i, j)), with source returning (y, x).
using SourceMap = std::function<std::array<double, 2>(double, double)>;

Tensor warp(const Tensor& img, const SourceMap& source) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  Tensor out({1, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto [y, x] = source(static_cast<double>(i), static_cast<double>(j));
      out[i * w + j] = sample_zero_pad(img, y, x);
    }
  }
  return out;
}

void clamp_unit(Tensor& t) {
  for (auto& v : t.data()) v = std::clamp(v, 0.0, 1.0);
}

void binarize(Tensor& t) {
  for (auto& v : t.data()) v = v >= 0.5 ? 1.0 : 0.0;
}

std::array<double, 2> exact_cos_sin(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    static constexpr std::array<std::array<double, 2>, 4> table{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
    const auto k = static_cast<long>(std::round(quarter));
    return table[static_cast<std::size_t>(((k % 4) + 4) % 4)];
  }
  const double r = degrees * M_PI / 180.0;
  return {std::cos(r), std::sin(r)};
}

// 3x3 homography H with H * (x, y, 1) ~ (x', y', 1) for four correspondences.
Eigen::Matrix3d fit_homography(const std::array<std::array<double, 2>, 4>& from,
                               const std::array<std::array<double, 2>, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = from[k][0], y = from[k][1], u = to[k][0], v = to[k][1];
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * k) = u;
    b(2 * k + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

using kv::parse_bool;
using kv::parse_double;
using kv::format_double;

}  // namespace

void AugmentationSpec::validate() const {
  for (const auto* t : {&rotation, &flip_lr, &flip_tb, &distortion, &skew}) {
    if (!(t->probability >= 0.0 && t->probability <= 1.0)) {
      throw ConfigError("augmentation: probabilities must lie in [0, 1]");
    }
  }
  if (!(rotation_max_deg >= 0)) throw ConfigError("augmentation: rotation max_deg must be non-negative");
  if (distortion_grid < 1) throw ConfigError("augmentation: distortion grid must be at least 1");
  if (!(distortion_magnitude >= 0)) throw ConfigError("augmentation: distortion magnitude must be non-negative");
  if (!(skew_max >= 0 && skew_max < 0.5)) throw ConfigError("augmentation: skew max must be in [0, 0.5)");
}

AugmentationSpec AugmentationSpec::none() {
  AugmentationSpec s;
  for (auto* t : {&s.rotation, &s.flip_lr, &s.flip_tb, &s.distortion, &s.skew}) {
    t->enabled = false;
    t->probability = 0.0;
  }
  return s;
}

std::vector<std::pair<std::string, std::string>> AugmentationSpec::to_kv() const {
  std::vector<std::pair<std::string, std::string>> kv;
  auto toggle = [&](const std::string& name, const TransformToggle& t) {
    kv.emplace_back("augment." + name + ".enabled", t.enabled ? "true" : "false");
    kv.emplace_back("augment." + name + ".p", format_double(t.probability));
  };
  toggle("rotation", rotation);
  kv.emplace_back("augment.rotation.max_deg", format_double(rotation_max_deg));
  toggle("flip_lr", flip_lr);
  toggle("flip_tb", flip_tb);
  toggle("distortion", distortion);
  kv.emplace_back("augment.distortion.grid", std::to_string(distortion_grid));
  kv.emplace_back("augment.distortion.magnitude", format_double(distortion_magnitude));
  toggle("skew", skew);
  kv.emplace_back("augment.skew.max", format_double(skew_max));
  kv.emplace_back("augment.seed", std::to_string(seed));
  return kv;
}

bool AugmentationSpec::apply_kv(const std::string& key, const std::string& value) {
  const std::pair<const char*, TransformToggle*> toggles[] = {
      {"rotation", &rotation}, {"flip_lr", &flip_lr}, {"flip_tb", &flip_tb}, {"distortion", &distortion}, {"skew", &skew}};
  for (const auto& [name, t] : toggles) {
    const std::string base = std::string("augment.") + name;
    if (key == base + ".enabled") {
      t->enabled = parse_bool(key, value);
      return true;
    }
    if (key == base + ".p") {
      t->probability = parse_double(key, value);
      return true;
    }
  }
  if (key == "augment.rotation.max_deg") {
    rotation_max_deg = parse_double(key, value);
  } else if (key == "augment.distortion.grid") {
    const double g = parse_double(key, value);
    if (g < 1 || g != std::floor(g)) throw ConfigError(key + ": expected a positive integer");
    distortion_grid = static_cast<std::size_t>(g);
  } else if (key == "augment.distortion.magnitude") {
    distortion_magnitude = parse_double(key, value);
  } else if (key == "augment.skew.max") {
    skew_max = parse_double(key, value);
  } else if (key == "augment.seed") {
    seed = kv::parse_u64(key, value);
  } else {
    return false;
  }
  return true;
}

Tensor flip_lr(const Tensor& image) {
  require_image(image, "flip_lr");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = image[i * w + (w - 1 - j)];
  }
  return out;
}

Tensor flip_tb(const Tensor& image) {
  require_image(image, "flip_tb");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = image[(h - 1 - i) * w + j];
  }
  return out;
}

Tensor rotate(const Tensor& image, double degrees) {
  require_image(image, "rotate");
  const double cy = (static_cast<double>(image.dim(1)) - 1) / 2, cx = (static_cast<double>(image.dim(2)) - 1) / 2;
  const auto [c, s] = exact_cos_sin(degrees);
  return warp(image, [&](double i, double j) -> std::array<double, 2> {
    const double dy = i - cy, dx = j - cx;
    return {cy + s * dx + c * dy, cx + c * dx - s * dy};
  });
}

Tensor elastic_distort(const Tensor& image, std::size_t grid, double magnitude, Rng& rng) {
  require_image(image, "elastic_distort");
  if (grid < 1) throw ConfigError("elastic_distort: grid must be at least 1");
  const std::size_t n = grid + 1;
  std::vector<double> dy(n * n, 0.0), dx(n * n, 0.0);
  for (std::size_t a = 1; a + 1 < n; ++a) {
    for (std::size_t b = 1; b + 1 < n; ++b) {
      dy[a * n + b] = rng.uniform(-magnitude, magnitude);
      dx[a * n + b] = rng.uniform(-magnitude, magnitude);
    }
  }
  const double sy = static_cast<double>(grid) / std::max<double>(1, static_cast<double>(image.dim(1)) - 1);
  const double sx = static_cast<double>(grid) / std::max<double>(1, static_cast<double>(image.dim(2)) - 1);
  auto field = [&](const std::vector<double>& f, double gy, double gx) {
    const auto a = std::min<std::size_t>(static_cast<std::size_t>(gy), grid - 1);
    const auto b = std::min<std::size_t>(static_cast<std::size_t>(gx), grid - 1);
    const double ty = gy - static_cast<double>(a), tx = gx - static_cast<double>(b);
    return (1 - ty) * ((1 - tx) * f[a * n + b] + tx * f[a * n + b + 1]) +
           ty * ((1 - tx) * f[(a + 1) * n + b] + tx * f[(a + 1) * n + b + 1]);
  };
  return warp(image, [&](double i, double j) -> std::array<double, 2> {
    const double gy = i * sy, gx = j * sx;
    return {i + field(dy, gy, gx), j + field(dx, gy, gx)};
  });
}

Tensor skew_tilt(const Tensor& image, double max_fraction, Rng& rng) {
  require_image(image, "skew_tilt");
  const double h = static_cast<double>(image.dim(1)) - 1, w = static_cast<double>(image.dim(2)) - 1;
  const std::array<std::array<double, 2>, 4> corners{{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  std::array<std::array<double, 2>, 4> moved = corners;
  for (auto& p : moved) {
    p[0] += rng.uniform(-max_fraction, max_fraction) * (w + 1);
    p[1] += rng.uniform(-max_fraction, max_fraction) * (h + 1);
  }
  // Output pixel at a moved corner shows the original corner.
  const Eigen::Matrix3d m = fit_homography(moved, corners);
  return warp(image, [&](double i, double j) -> std::array<double, 2> {
    const Eigen::Vector3d p = m * Eigen::Vector3d(j, i, 1.0);
    return {p(1) / p(2), p(0) / p(2)};
  });
}

Sample augment(const Sample& sample, const AugmentationSpec& spec, std::uint64_t draw_seed) {
  spec.validate();
  require_image(sample.image, "augment");
  Sample out = sample;
  auto apply = [&](const std::function<Tensor(const Tensor&)>& f) {
    out.image = f(out.image);
    if (out.mask) out.mask = f(*out.mask);
  };
  auto fires = [&](const TransformToggle& t, Rng& rng) { return t.enabled && rng.bernoulli(t.probability); };

  if (Rng rng(derive_seed(draw_seed, kRotation)); fires(spec.rotation, rng)) {
    const double deg = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg);
    apply([&](const Tensor& t) { return rotate(t, deg); });
  }
  if (Rng rng(derive_seed(draw_seed, kFlipLr)); fires(spec.flip_lr, rng)) apply(flip_lr);
  if (Rng rng(derive_seed(draw_seed, kFlipTb)); fires(spec.flip_tb, rng)) apply(flip_tb);
  if (Rng rng(derive_seed(draw_seed, kDistortion)); fires(spec.distortion, rng)) {
    const std::uint64_t field_seed = rng.bits();
    apply([&](const Tensor& t) {
      Rng field(field_seed);
      return elastic_distort(t, spec.distortion_grid, spec.distortion_magnitude, field);
    });
  }
  if (Rng rng(derive_seed(draw_seed, kSkew)); fires(spec.skew, rng)) {
    const std::uint64_t corner_seed = rng.bits();
    apply([&](const Tensor& t) {
      Rng corners(corner_seed);
      return skew_tilt(t, spec.skew_max, corners);
    });
  }
  clamp_unit(out.image);
  if (out.mask) binarize(*out.mask);
  return out;
}

std::vector<Sample> expand_training_set(const std::vector<Sample>& train, const AugmentationSpec& spec,
                                        std::size_t factor) {
  if (factor < 1) throw ConfigError("expand_training_set: factor must be at least 1");
  spec.validate();
  std::vector<Sample> out;
  out.reserve(train.size() * factor);
  for (std::size_t i = 0; i < train.size(); ++i) {
    out.push_back(train[i]);
    for (std::size_t k = 1; k < factor; ++k) {
      Sample s = augment(train[i], spec, derive_seed(derive_seed(spec.seed, i), k));
      s.source_id = train[i].source_id + "#aug" + std::to_string(k);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace attnct::data
