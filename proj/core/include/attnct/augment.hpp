#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attnct/dataset.hpp"
#include "attnct/rng.hpp"
#include "attnct/tensor.hpp"

namespace attnct::data {

struct TransformToggle {
  bool enabled = true;
  double probability = 0.5;
};

/// Augmentation suite: rotation, left-right flip, top-bottom flip, elastic
/// random distortion, and projective skew. Defaults are artifact choices.
struct AugmentationSpec {
  TransformToggle rotation{true, 0.5};
  double rotation_max_deg = 10.0;
  TransformToggle flip_lr{true, 0.5};
  TransformToggle flip_tb{true, 0.5};
  TransformToggle distortion{true, 0.5};
  std::size_t distortion_grid = 4;
  double distortion_magnitude = 4.0;  // pixels
  TransformToggle skew{true, 0.5};
  double skew_max = 0.1;  // fraction of the image side
  std::uint64_t seed = 0;

  void validate() const;
  /// Every transform off.
  static AugmentationSpec none();

  std::vector<std::pair<std::string, std::string>> to_kv() const;
  bool apply_kv(const std::string& key, const std::string& value);
};

// Geometric primitives on 1 x H x W images. Resampling is bilinear with zero
// padding outside the source.
Tensor flip_lr(const Tensor& image);
Tensor flip_tb(const Tensor& image);
/// Counter-clockwise as displayed (row 0 at the top), about the image center.
Tensor rotate(const Tensor& image, double degrees);
/// (grid+1)^2 control points, interior ones displaced uniformly by up to
/// `magnitude` pixels; the field is bilinearly interpolated.
Tensor elastic_distort(const Tensor& image, std::size_t grid, double magnitude, Rng& rng);
/// Moves each corner by up to `max_fraction` of the image side and warps by
/// the induced homography.
Tensor skew_tilt(const Tensor& image, double max_fraction, Rng& rng);

/// Applies each enabled transform with its probability. Masks follow the same
/// geometry. The label is kept; pixel values are clamped to [0, 1].
Sample augment(const Sample& sample, const AugmentationSpec& spec, std::uint64_t draw_seed);

/// `factor` x the input: every original followed by factor - 1 augmented copies.
std::vector<Sample> expand_training_set(const std::vector<Sample>& train, const AugmentationSpec& spec,
                                        std::size_t factor);

}  // namespace attnct::data
