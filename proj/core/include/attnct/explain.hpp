#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "attnct/net.hpp"
#include "attnct/tensor.hpp"

namespace attnct::explain {

enum class Method { gradcam, gradcampp, occlusion };
std::string to_string(Method m);
Method parse_method(const std::string& s);

struct SaliencyMap {
  Tensor grid;  // H x W, values in [0, 1]
  std::string layer;
  Method method = Method::gradcam;
};

/// Captured activation A (C x h x w) of one image and d(logit)/dA.
struct LayerGradient {
  Tensor activation;
  Tensor gradient;
};

/// Eval-mode forward on a 1 x H x W image, differentiating the pre-sigmoid
/// logit. Throws LookupError for a layer outside network.layer_names().
LayerGradient layer_gradient(net::Network& network, const Tensor& image, const std::string& layer);

// Raw (h x w, unnormalized) maps from an activation and its gradient.
Tensor gradcam_weights_map(const LayerGradient& lg);
Tensor gradcampp_weights_map(const LayerGradient& lg);

/// Bilinear upsampling to H x W followed by division by the maximum; an
/// all-zero (or non-positive) raw map yields zeros.
Tensor upsample_normalize(const Tensor& raw, std::size_t height, std::size_t width);

SaliencyMap grad_cam(net::Network& network, const Tensor& image, const std::string& layer);
SaliencyMap grad_cam_pp(net::Network& network, const Tensor& image, const std::string& layer);

enum class OcclusionTarget { probability, logit };

struct OcclusionSpec {
  std::size_t patch = 16;
  std::size_t stride = 8;
  double fill = 0.0;
  /// What the drop is measured on.
  OcclusionTarget target = OcclusionTarget::probability;

  void validate(std::size_t height, std::size_t width) const;
};

/// Window origins along an axis: 0, S, 2S, ... plus the flush-right origin
/// when the last step does not land there.
std::vector<std::size_t> window_origins(std::size_t extent, std::size_t patch, std::size_t stride);

/// Per-window drop = base - occluded, floored at 0; each pixel takes the mean
/// floored drop of the windows covering it; the map is max-normalized.
SaliencyMap occlusion_heatmap(const net::Network& network, const Tensor& image, const OcclusionSpec& spec);

/// Fraction of saliency mass inside a binary mask. Empty masks throw
/// InputError; an all-zero map scores 0.
double localization_score(const Tensor& map, const Tensor& mask);

struct Overlay {
  Tensor panel;  // 1 x H x (k W): original | heatmap | overlay [| mask outline]
  std::string svg;
};

/// overlay = image + 0.6 * map * (1 - image).
Overlay render_overlay(const Tensor& image, const Tensor& map, const std::optional<Tensor>& mask = std::nullopt);

/// `x,y,value` rows, row-major.
std::string saliency_csv(const Tensor& map);

}  // namespace attnct::explain
