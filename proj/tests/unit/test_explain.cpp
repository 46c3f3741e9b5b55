#include <algorithm>
#include <cmath>

#include "attnct/errors.hpp"
#include "attnct/explain.hpp"
#include "attnct/image_io.hpp"
#include "attnct/net.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attnct;
using namespace attnct::explain;
using oracle::random_tensor;

namespace {

// Stride-2 stem so the "final" activation (8 x 8) must be upsampled to 16 x 16.
net::AttentionNetConfig strided_tiny() {
  auto c = net::AttentionNetConfig::tiny();
  c.stem_stride = 2;
  return c;
}

Tensor random_image(Rng& rng, std::size_t h = 16, std::size_t w = 16) { return random_tensor({1, h, w}, rng, 0.0, 1.0); }

Tensor capture(net::Network& network, const Tensor& image, const std::string& layer) {
  Tape t(false);
  const std::string names[] = {layer};
  const auto fr = network.forward(t, image.reshaped({1, 1, image.dim(1), image.dim(2)}), Mode::eval, names);
  return t.value(fr.captures.at(layer));
}

void keep_only_channel(net::Network& network, std::size_t channel, double weight) {
  auto& w = network.params().tensors.at("head.out.weight");
  for (std::size_t k = 0; k < w.numel(); ++k) w[k] = k == channel ? weight : 0.0;
}

// Per-pixel mean of the floored drops of every covering window, by brute force.
Tensor occlusion_oracle(const net::Network& network, const Tensor& image, std::size_t patch, std::size_t stride) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  auto origins = [&](std::size_t extent) {
    std::vector<std::size_t> o;
    for (std::size_t p = 0; p + patch <= extent; p += stride) o.push_back(p);
    if (o.back() != extent - patch) o.push_back(extent - patch);
    return o;
  };
  const double base = network.predict(image.reshaped({1, 1, h, w}))[0];
  Tensor sum({h, w}, 0.0), count({h, w}, 0.0);
  for (auto y0 : origins(h)) {
    for (auto x0 : origins(w)) {
      Tensor occluded = image.reshaped({1, 1, h, w});
      for (std::size_t y = y0; y < y0 + patch; ++y)
        for (std::size_t x = x0; x < x0 + patch; ++x) occluded.at(0, 0, y, x) = 0.0;
      const double drop = std::max(0.0, base - network.predict(occluded)[0]);
      for (std::size_t y = y0; y < y0 + patch; ++y)
        for (std::size_t x = x0; x < x0 + patch; ++x) {
          sum[y * w + x] += drop;
          count[y * w + x] += 1.0;
        }
    }
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < sum.numel(); ++i) peak = std::max(peak, sum[i] /= count[i]);
  if (peak > 0.0)
    for (auto& v : sum.data()) v /= peak;
  return sum;
}

}  // namespace

TEST_SUITE("grad-cam") {
  TEST_CASE("gradient at the pooled layer is the head weight over the area") {
    Rng rng(3);
    net::Network network(strided_tiny(), 5);
    const auto lg = layer_gradient(network, random_image(rng), "final");
    const auto& w = network.params().tensors.at("head.out.weight");
    REQUIRE(lg.activation.shape() == Shape{4, 8, 8});
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 64; ++i) CHECK(lg.gradient[k * 64 + i] == doctest::Approx(w[k] / 64.0).epsilon(1e-12));
  }

  TEST_CASE("single-channel head gives the normalized upsampled channel") {
    Rng rng(4);
    net::Network network(strided_tiny(), 6);
    keep_only_channel(network, 0, 0.7);
    const Tensor image = random_image(rng);
    const Tensor a = capture(network, image, "final");
    Tensor a0({1, 1, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) a0[i] = a[i];
    Tensor expected({16, 16});
    double peak = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) peak = std::max(peak, expected[y * 16 + x] = oracle::bilinear_point(a0, 0, 0, y, x, 16, 16));
    REQUIRE(peak > 0.0);

    const auto map = grad_cam(network, image, "final");
    const auto map_pp = grad_cam_pp(network, image, "final");
    REQUIRE(map.grid.shape() == Shape{16, 16});
    for (std::size_t i = 0; i < 256; ++i) {
      CHECK(map.grid[i] == doctest::Approx(expected[i] / peak).epsilon(1e-9));
      CHECK(map_pp.grid[i] == doctest::Approx(map.grid[i]).epsilon(1e-9));
    }
  }

  TEST_CASE("negative single-channel weight yields an empty map") {
    Rng rng(5);
    net::Network network(strided_tiny(), 7);
    keep_only_channel(network, 1, -0.4);
    const auto map = grad_cam(network, random_image(rng), "final");
    for (double v : map.grid.data()) CHECK(v == 0.0);
  }

  TEST_CASE("maps ignore the head bias and positive rescaling of the head weight") {
    Rng rng(6);
    net::Network network(strided_tiny(), 8);
    const Tensor image = random_image(rng);
    const auto ref = grad_cam(network, image, "stage1.attn");
    network.params().tensors.at("head.out.bias")[0] = 2.5;
    for (auto& v : network.params().tensors.at("head.out.weight").data()) v *= 3.0;
    const auto moved = grad_cam(network, image, "stage1.attn");
    for (std::size_t i = 0; i < ref.grid.numel(); ++i) CHECK(moved.grid[i] == doctest::Approx(ref.grid[i]).epsilon(1e-9));
  }

  TEST_CASE("maps survive rescaling the head weight against its input") {
    Rng rng(16);
    net::Network network(strided_tiny(), 17);
    const Tensor image = random_image(rng);
    const auto cam = grad_cam(network, image, "final");
    const auto pp = grad_cam_pp(network, image, "final");
    const double c = 4.0;
    auto& t = network.params().tensors;
    for (auto& v : t.at("head.out.weight").data()) v *= c;
    for (auto& v : t.at("final.bn.gamma").data()) v /= c;
    for (auto& v : t.at("final.bn.beta").data()) v /= c;
    const auto cam2 = grad_cam(network, image, "final");
    const auto pp2 = grad_cam_pp(network, image, "final");
    for (std::size_t i = 0; i < cam.grid.numel(); ++i) {
      CHECK(cam2.grid[i] == doctest::Approx(cam.grid[i]).epsilon(1e-9));
      CHECK(pp2.grid[i] == doctest::Approx(pp.grid[i]).epsilon(1e-9));
    }
  }

  TEST_CASE("every convolutional layer yields an input-sized map in [0, 1]") {
    Rng rng(7);
    net::Network network(net::AttentionNetConfig::tiny(), 9);
    const Tensor image = random_image(rng);
    for (const auto& layer : network.layer_names()) {
      if (layer == "pooled") continue;
      CAPTURE(layer);
      for (const auto& m : {grad_cam(network, image, layer), grad_cam_pp(network, image, layer)}) {
        REQUIRE(m.grid.shape() == Shape{16, 16});
        for (double v : m.grid.data()) CHECK((v >= 0.0 && v <= 1.0));
      }
    }
  }

  TEST_CASE("raw maps from hand-built activations") {
    LayerGradient lg{Tensor({2, 1, 2}, std::vector<double>{1, 3, 2, 0}), Tensor({2, 1, 2}, std::vector<double>{0.5, 0.5, -1, -1})};
    const Tensor cam = gradcam_weights_map(lg);
    CHECK(cam[0] == doctest::Approx(0.0));
    CHECK(cam[1] == doctest::Approx(1.5));
    // channel 1 has negative gradient; channel 0: alpha = 1 / (2 + 4 * 0.5) = 0.25, w = 2 * 0.25 * 0.5
    const Tensor pp = gradcampp_weights_map(lg);
    CHECK(pp[0] == doctest::Approx(0.25));
    CHECK(pp[1] == doctest::Approx(0.75));

    LayerGradient zero{Tensor({2, 2, 2}, 0.0), Tensor({2, 2, 2}, 1.0)};
    for (const Tensor& raw : {gradcam_weights_map(zero), gradcampp_weights_map(zero)}) {
      const Tensor up = upsample_normalize(raw, 5, 5);
      REQUIRE(up.shape() == Shape{5, 5});
      for (double v : up.data()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("layer lookup") {
    net::Network network(net::AttentionNetConfig::tiny(), 1);
    const Tensor image({1, 16, 16}, 0.5);
    CHECK_THROWS_AS(grad_cam(network, image, "stage9.attn"), LookupError);
    CHECK_THROWS_AS(grad_cam(network, image, "pooled"), DimensionError);
    CHECK_THROWS_AS(grad_cam(network, Tensor({16, 16}, 0.5), "final"), DimensionError);
    CHECK(parse_method("gradcampp") == Method::gradcampp);
    CHECK_THROWS_AS(parse_method("lime"), UsageError);
  }
}

TEST_SUITE("occlusion") {
  TEST_CASE("window origins include the flush edge") {
    CHECK(window_origins(16, 6, 4) == std::vector<std::size_t>{0, 4, 8, 10});
    CHECK(window_origins(16, 4, 4) == std::vector<std::size_t>{0, 4, 8, 12});
    CHECK(window_origins(16, 16, 8) == std::vector<std::size_t>{0});
  }

  TEST_CASE("matches a brute-force window loop") {
    Rng rng(11);
    net::Network network(net::AttentionNetConfig::tiny(), 12);
    for (int trial = 0; trial < 3; ++trial) {
      const Tensor image = random_image(rng);
      OcclusionSpec spec;
      spec.patch = 6;
      spec.stride = 4;
      const auto map = occlusion_heatmap(network, image, spec);
      const Tensor expected = occlusion_oracle(network, image, 6, 4);
      REQUIRE(map.grid.shape() == Shape{16, 16});
      for (std::size_t i = 0; i < 256; ++i) CHECK(map.grid[i] == doctest::Approx(expected[i]).epsilon(1e-9));
    }
  }

  TEST_CASE("a constant model gives an empty map") {
    Rng rng(13);
    net::Network network(net::AttentionNetConfig::tiny(), 14);
    keep_only_channel(network, 0, 0.0);
    for (auto target : {OcclusionTarget::probability, OcclusionTarget::logit}) {
      OcclusionSpec spec;
      spec.patch = 4;
      spec.stride = 2;
      spec.target = target;
      const auto map = occlusion_heatmap(network, random_image(rng), spec);
      for (double v : map.grid.data()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("one full-image window is uniform") {
    Rng rng(15);
    net::Network network(net::AttentionNetConfig::tiny(), 16);
    const Tensor image = random_image(rng);
    OcclusionSpec spec;
    spec.patch = spec.stride = 16;
    const auto map = occlusion_heatmap(network, image, spec);
    const double drop = network.predict(image.reshaped({1, 1, 16, 16}))[0] - network.predict(Tensor({1, 1, 16, 16}, 0.0))[0];
    for (double v : map.grid.data()) CHECK(v == (drop > 0.0 ? 1.0 : 0.0));
  }

  TEST_CASE("invalid geometry") {
    net::Network network(net::AttentionNetConfig::tiny(), 1);
    const Tensor image({1, 16, 16}, 0.5);
    OcclusionSpec spec;
    spec.patch = 20;
    CHECK_THROWS_AS(occlusion_heatmap(network, image, spec), ConfigError);
    spec.patch = 4;
    spec.stride = 5;
    CHECK_THROWS_AS(occlusion_heatmap(network, image, spec), ConfigError);
    spec.stride = 0;
    CHECK_THROWS_AS(occlusion_heatmap(network, image, spec), ConfigError);
  }
}

TEST_SUITE("localization") {
  TEST_CASE("closed forms") {
    Tensor mask({8, 8}, 0.0);
    for (std::size_t y = 2; y < 5; ++y)
      for (std::size_t x = 1; x < 5; ++x) mask[y * 8 + x] = 1.0;
    CHECK(localization_score(mask, mask) == doctest::Approx(1.0));
    CHECK(localization_score(Tensor({8, 8}, 0.3), mask) == doctest::Approx(12.0 / 64.0));
    CHECK(localization_score(Tensor({8, 8}, 0.0), mask) == 0.0);
  }

  TEST_CASE("matches a masked-sum loop") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor map = random_tensor({12, 10}, rng, 0.0, 1.0);
      Tensor mask({12, 10}, 0.0);
      double inside = 0.0, total = 0.0;
      mask[rng.below(120)] = 1.0;
      for (std::size_t i = 0; i < 120; ++i) {
        if (rng.uniform(0.0, 1.0) < 0.3) mask[i] = 1.0;
      }
      for (std::size_t i = 0; i < 120; ++i) {
        total += map[i];
        if (mask[i] == 1.0) inside += map[i];
      }
      CHECK(localization_score(map, mask) == doctest::Approx(inside / total).epsilon(1e-12));
    }
  }

  TEST_CASE("rejects empty or non-binary masks") {
    CHECK_THROWS_AS(localization_score(Tensor({4, 4}, 1.0), Tensor({4, 4}, 0.0)), InputError);
    CHECK_THROWS_AS(localization_score(Tensor({4, 4}, 1.0), Tensor({4, 4}, 0.5)), InputError);
    CHECK_THROWS_AS(localization_score(Tensor({4, 4}, 1.0), Tensor({4, 5}, 1.0)), DimensionError);
  }
}

TEST_SUITE("rendering") {
  TEST_CASE("zero map leaves the overlay equal to the original") {
    Rng rng(31);
    const Tensor image = random_image(rng, 6, 9);
    const auto out = render_overlay(image, Tensor({6, 9}, 0.0));
    REQUIRE(out.panel.shape() == Shape{1, 6, 27});
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        CHECK(out.panel[y * 27 + x] == image[y * 9 + x]);
        CHECK(out.panel[y * 27 + 9 + x] == 0.0);
        CHECK(out.panel[y * 27 + 18 + x] == image[y * 9 + x]);
      }
  }

  TEST_CASE("overlay blend and mask outline") {
    Tensor image({1, 5, 5}, 0.5), map({5, 5}, 1.0), mask({5, 5}, 0.0);
    for (std::size_t y = 1; y < 4; ++y)
      for (std::size_t x = 1; x < 4; ++x) mask[y * 5 + x] = 1.0;
    const auto out = render_overlay(image, map, mask);
    REQUIRE(out.panel.shape() == Shape{1, 5, 20});
    CHECK(out.panel[10] == doctest::Approx(0.5 + 0.6 * 0.5));
    CHECK(out.panel[1 * 20 + 15 + 1] == 1.0);  // mask border
    CHECK(out.panel[2 * 20 + 15 + 2] == 0.5);  // mask interior
    CHECK(out.panel[0 * 20 + 15 + 0] == 0.5);  // outside
    CHECK(out.svg.rfind("<svg", 0) == 0);
    CHECK(out.svg.find("</svg>") != std::string::npos);
  }

  TEST_CASE("panel survives an 8-bit image round trip") {
    Rng rng(32);
    const Tensor image = random_image(rng, 7, 7);
    const auto out = render_overlay(image, random_tensor({7, 7}, rng, 0.0, 1.0));
    const Tensor back = data::decode_pgm(data::encode_pgm(out.panel));
    REQUIRE(back.numel() == out.panel.numel());
    for (std::size_t i = 0; i < back.numel(); ++i) CHECK(std::abs(back[i] - out.panel[i]) <= 1.0 / 255.0);
  }

  TEST_CASE("saliency csv rows") {
    Tensor m({2, 3}, std::vector<double>{0, 0.5, 1, 0.25, 0, 0.125});
    const std::string csv = saliency_csv(m);
    CHECK(csv.rfind("x,y,value\n0,0,0.000000\n1,0,0.500000\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("2,1,0.125000\n") != std::string::npos);
  }

  TEST_CASE("mismatched shapes are rejected") {
    CHECK_THROWS_AS(render_overlay(Tensor({1, 4, 4}, 0.5), Tensor({4, 5}, 0.0)), DimensionError);
    CHECK_THROWS_AS(render_overlay(Tensor({1, 4, 4}, 0.5), Tensor({4, 4}, 0.0), Tensor({3, 4}, 0.0)), DimensionError);
  }
}
