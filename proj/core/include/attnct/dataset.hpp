#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnct/tensor.hpp"

namespace attnct::data {

inline constexpr int kNonCovid = 0;
inline constexpr int kCovid = 1;

const char* class_dir(int label);

struct Sample {
  Tensor image;  // 1 x H x W, values in [0, 1]
  int label = kNonCovid;
  std::string source_id;
  std::optional<Tensor> mask;  // 1 x H x W binary ground truth, when known
};

struct SplitSpec {
  /// `<relative-path>,<train|test>` lines. When unset, `<root>/split.txt` is
  /// used if present, otherwise `test_fraction` of each class goes to test.
  std::optional<std::filesystem::path> split_file;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t height = 128;
  std::size_t width = 128;

  void validate() const;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Reads `<root>/covid/*.pgm` and `<root>/non_covid/*.pgm`, normalized and
/// resized to the spec geometry. Masks under `<root>/masks/` are attached.
/// Every unreadable file is reported in a single IoError.
DatasetSplit load_dataset(const std::filesystem::path& root, const SplitSpec& spec);

/// Writes the directory layout, `split.txt`, and `masks/` for samples with a mask.
void write_dataset(const std::filesystem::path& root, const DatasetSplit& split);

/// Seeded, per-class stratified carve of `fraction` of the samples into the
/// second list.
std::pair<std::vector<Sample>, std::vector<Sample>> carve(const std::vector<Sample>& samples, double fraction,
                                                          std::uint64_t seed);

/// N x 1 x H x W batch from the selected samples.
Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);
Tensor stack_images(const std::vector<Sample>& samples);

std::size_t count_label(const std::vector<Sample>& samples, int label);

// ---- synthetic lesion images -------------------------------------------------

struct SyntheticSpec {
  std::size_t n_train_per_class = 50;
  std::size_t n_test_per_class = 25;
  std::size_t height = 128;
  std::size_t width = 128;
  std::uint64_t seed = 0;
  double base_level = 0.35;
  /// Peak deviation of the zero-mean low-frequency background texture.
  double texture_amplitude = 0.12;
  std::size_t texture_grid = 5;
  /// Intensity added inside lesion blobs; doubles as the mask margin.
  double blob_amplitude = 0.35;
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  /// Ellipse semi-axes as a fraction of the shorter image side.
  double min_radius = 0.06;
  double max_radius = 0.14;

  void validate() const;
};

struct SyntheticSet {
  DatasetSplit split;
  /// Mean-intensity threshold fitted on train and its test accuracy.
  double separability_threshold = 0.0;
  double separability_accuracy = 0.0;
};

/// One background image with its blobs; exposed for tests.
struct SyntheticImage {
  Tensor image;
  Tensor background;
  Tensor mask;
};
SyntheticImage synthesize_image(const SyntheticSpec& spec, int label, std::uint64_t seed);

/// Deterministic in `spec.seed`. Throws InputError when a mean-intensity
/// threshold fitted on the training images separates the test images with
/// accuracy below 0.9.
SyntheticSet generate_synthetic(const SyntheticSpec& spec);

/// Splits `n` per class into train/test with the given test fraction (0.25 by default).
SyntheticSpec synthetic_spec_for(std::size_t n_per_class, std::size_t size, std::uint64_t seed,
                                 double test_fraction = 0.25);

/// Fits the best mean-intensity threshold on `train` and reports its accuracy on `test`.
std::pair<double, double> mean_intensity_separability(const std::vector<Sample>& train,
                                                      const std::vector<Sample>& test);

}  // namespace attnct::data
