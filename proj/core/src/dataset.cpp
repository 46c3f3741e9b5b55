#include "attnct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "attnct/errors.hpp"
#include "attnct/image_io.hpp"
#include "attnct/rng.hpp"

namespace fs = std::filesystem;

namespace attnct::data {
namespace {

constexpr std::uint64_t kSplitStream = 11;
constexpr std::uint64_t kSynthStream = 23;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::map<std::string, bool> read_split_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path.string() + ": cannot open split file");
  std::map<std::string, bool> is_test;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected `<path>,<train|test>`");
    }
    const std::string rel = trim(line.substr(0, comma));
    const std::string which = trim(line.substr(comma + 1));
    if (which != "train" && which != "test") {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": unknown split `" + which + "`");
    }
    if (!is_test.emplace(rel, which == "test").second) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": duplicate entry " + rel);
    }
  }
  return is_test;
}

std::vector<std::string> list_pgm(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

double mean_of(const Tensor& t) { return t.sum() / static_cast<double>(t.numel()); }

// Coarse uniform grid, bilinearly upsampled, centred and scaled so that the
// largest deviation equals `amplitude`.
Tensor smooth_texture(std::size_t h, std::size_t w, std::size_t grid, double amplitude, Rng& rng) {
  Tensor coarse({1, grid, grid});
  for (auto& v : coarse.data()) v = rng.uniform(-1.0, 1.0);
  Tensor t = resize_image(coarse, h, w);
  const double m = mean_of(t);
  double peak = 0;
  for (auto& v : t.data()) {
    v -= m;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0) {
    for (auto& v : t.data()) v *= amplitude / peak;
  }
  return t;
}

}  // namespace

const char* class_dir(int label) { return label == kCovid ? "covid" : "non_covid"; }

void SplitSpec::validate() const {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("split: test_fraction must be in [0, 1)");
  if (height == 0 || width == 0) throw ConfigError("split: image geometry must be positive");
}

DatasetSplit load_dataset(const fs::path& root, const SplitSpec& spec) {
  spec.validate();
  if (!fs::is_directory(root)) throw InputError(root.string() + ": dataset root is not a directory");

  std::optional<std::map<std::string, bool>> listing;
  if (spec.split_file) {
    listing = read_split_file(*spec.split_file);
  } else if (fs::exists(root / "split.txt")) {
    listing = read_split_file(root / "split.txt");
  }

  std::vector<Sample> all;
  std::vector<bool> in_test;
  std::vector<std::string> failures;
  for (int label : {kCovid, kNonCovid}) {
    const fs::path dir = root / class_dir(label);
    if (!fs::is_directory(dir)) throw InputError(dir.string() + ": missing class directory");
    const auto names = list_pgm(dir);
    if (names.empty()) throw InputError(dir.string() + ": class has no images");
    for (const auto& name : names) {
      const std::string rel = std::string(class_dir(label)) + "/" + name;
      Sample s;
      s.label = label;
      s.source_id = rel;
      try {
        s.image = resize_image(read_pgm(dir / name), spec.height, spec.width);
        const fs::path mask_path = root / "masks" / rel;
        if (fs::exists(mask_path)) {
          Tensor m = resize_image(read_pgm(mask_path), spec.height, spec.width);
          for (auto& v : m.data()) v = v >= 0.5 ? 1.0 : 0.0;
          s.mask = std::move(m);
        }
      } catch (const Error& e) {
        failures.emplace_back(e.what());
        continue;
      }
      bool test = false;
      if (listing) {
        const auto it = listing->find(rel);
        if (it == listing->end()) {
          failures.push_back(rel + ": not listed in split file");
          continue;
        }
        test = it->second;
      }
      all.push_back(std::move(s));
      in_test.push_back(test);
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " file(s) failed to load:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw IoError(msg);
  }

  DatasetSplit out;
  if (listing) {
    for (std::size_t i = 0; i < all.size(); ++i) (in_test[i] ? out.test : out.train).push_back(std::move(all[i]));
  } else if (spec.test_fraction > 0.0) {
    auto [tr, te] = carve(all, spec.test_fraction, derive_seed(spec.seed, kSplitStream));
    out.train = std::move(tr);
    out.test = std::move(te);
  } else {
    out.train = std::move(all);
  }
  return out;
}

void write_dataset(const fs::path& root, const DatasetSplit& split) {
  for (int label : {kCovid, kNonCovid}) fs::create_directories(root / class_dir(label));
  std::ofstream listing(root / "split.txt", std::ios::trunc);
  if (!listing) throw IoError((root / "split.txt").string() + ": cannot open for writing");
  auto emit = [&](const std::vector<Sample>& samples, const char* which) {
    for (const auto& s : samples) {
      const fs::path rel = s.source_id;
      write_pgm(root / rel, s.image);
      listing << s.source_id << ',' << which << '\n';
      if (s.mask) {
        fs::create_directories((root / "masks" / rel).parent_path());
        write_pgm(root / "masks" / rel, *s.mask);
      }
    }
  };
  emit(split.train, "train");
  emit(split.test, "test");
}

std::pair<std::vector<Sample>, std::vector<Sample>> carve(const std::vector<Sample>& samples, double fraction,
                                                          std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("carve: fraction must be in [0, 1)");
  std::vector<bool> second(samples.size(), false);
  for (int label : {kNonCovid, kCovid}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == label) idx.push_back(i);
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(idx);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < k; ++j) second[idx[j]] = true;
  }
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) (second[i] ? out.second : out.first).push_back(samples[i]);
  return out;
}

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InputError("stack_images: empty selection");
  const Shape& s0 = samples.at(indices.front()).image.shape();
  if (s0.size() != 3) throw DimensionError("stack_images: expected 1 x H x W images, got " + shape_str(s0));
  Tensor batch({indices.size(), s0[0], s0[1], s0[2]});
  const std::size_t per = shape_numel(s0);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Tensor& img = samples.at(indices[k]).image;
    if (img.shape() != s0) {
      throw DimensionError("stack_images: sample " + samples[indices[k]].source_id + " has shape " +
                           shape_str(img.shape()) + ", expected " + shape_str(s0));
    }
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return batch;
}

Tensor stack_images(const std::vector<Sample>& samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return stack_images(samples, idx);
}

std::size_t count_label(const std::vector<Sample>& samples, int label) {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.label == label; }));
}

// ---- synthetic -----------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_train_per_class + n_test_per_class < 2) throw ConfigError("synthetic: need at least 2 images per class");
  if (n_train_per_class == 0 || n_test_per_class == 0) throw ConfigError("synthetic: train and test must be non-empty");
  if (height < 8 || width < 8) throw ConfigError("synthetic: images must be at least 8 x 8");
  if (texture_grid < 2) throw ConfigError("synthetic: texture grid must be at least 2");
  if (min_blobs == 0 || min_blobs > max_blobs) throw ConfigError("synthetic: need 1 <= min_blobs <= max_blobs");
  if (!(min_radius > 0 && min_radius <= max_radius && max_radius < 0.5)) {
    throw ConfigError("synthetic: need 0 < min_radius <= max_radius < 0.5");
  }
  if (!(blob_amplitude > 0) || !(texture_amplitude >= 0)) throw ConfigError("synthetic: amplitudes must be positive");
  if (base_level - texture_amplitude < 0 || base_level + texture_amplitude + blob_amplitude > 1) {
    throw ConfigError("synthetic: base_level +/- texture + blob amplitude must stay within [0, 1]");
  }
}

SyntheticImage synthesize_image(const SyntheticSpec& spec, int label, std::uint64_t seed) {
  const std::size_t h = spec.height, w = spec.width;
  Rng rng(seed);
  SyntheticImage out;
  out.background = smooth_texture(h, w, spec.texture_grid, spec.texture_amplitude, rng);
  for (auto& v : out.background.data()) v += spec.base_level;
  out.mask = Tensor({1, h, w}, 0.0);
  if (label == kCovid) {
    const double side = static_cast<double>(std::min(h, w));
    const std::size_t blobs = spec.min_blobs + rng.below(spec.max_blobs - spec.min_blobs + 1);
    for (std::size_t b = 0; b < blobs; ++b) {
      const double a = side * rng.uniform(spec.min_radius, spec.max_radius);
      const double c = side * rng.uniform(spec.min_radius, spec.max_radius);
      const double reach = std::max(a, c);
      const double cy = rng.uniform(reach, static_cast<double>(h) - reach);
      const double cx = rng.uniform(reach, static_cast<double>(w) - reach);
      const double theta = rng.uniform(0.0, M_PI);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
          const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
          if ((u * u) / (a * a) + (v * v) / (c * c) <= 1.0) out.mask[i * w + j] = 1.0;
        }
      }
    }
  }
  out.image = out.background;
  for (std::size_t k = 0; k < out.image.numel(); ++k) out.image[k] += spec.blob_amplitude * out.mask[k];
  return out;
}

std::pair<double, double> mean_intensity_separability(const std::vector<Sample>& train,
                                                      const std::vector<Sample>& test) {
  if (train.empty() || test.empty()) throw InputError("separability: empty sample list");
  std::vector<std::pair<double, int>> scored;
  for (const auto& s : train) scored.emplace_back(mean_of(s.image), s.label);
  std::sort(scored.begin(), scored.end());
  // Candidate thresholds sit between consecutive means; predict 1 above.
  std::size_t positives = count_label(train, kCovid);
  std::size_t best_correct = positives;  // threshold below everything
  double best_t = scored.front().first - 1.0;
  std::size_t neg_below = 0, pos_below = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    (scored[k].second == kCovid ? pos_below : neg_below) += 1;
    const std::size_t correct = neg_below + (positives - pos_below);
    if (correct > best_correct) {
      best_correct = correct;
      best_t = k + 1 < scored.size() ? 0.5 * (scored[k].first + scored[k + 1].first) : scored[k].first;
    }
  }
  std::size_t right = 0;
  for (const auto& s : test) right += ((mean_of(s.image) > best_t) == (s.label == kCovid)) ? 1 : 0;
  return {best_t, static_cast<double>(right) / static_cast<double>(test.size())};
}

SyntheticSet generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSet set;
  const std::size_t per_class = spec.n_train_per_class + spec.n_test_per_class;
  for (int label : {kCovid, kNonCovid}) {
    for (std::size_t k = 0; k < per_class; ++k) {
      const std::uint64_t stream = static_cast<std::uint64_t>(label) * 1000003ULL + k;
      auto img = synthesize_image(spec, label, derive_seed(derive_seed(spec.seed, kSynthStream), stream));
      Sample s;
      s.label = label;
      std::ostringstream id;
      id << class_dir(label) << "/synth_" << std::setw(5) << std::setfill('0') << k << ".pgm";
      s.source_id = id.str();
      s.image = std::move(img.image);
      s.mask = std::move(img.mask);
      (k < spec.n_train_per_class ? set.split.train : set.split.test).push_back(std::move(s));
    }
  }
  const auto [t, acc] = mean_intensity_separability(set.split.train, set.split.test);
  set.separability_threshold = t;
  set.separability_accuracy = acc;
  if (acc < 0.9) {
    throw InputError("synthetic: mean-intensity threshold accuracy " + std::to_string(acc) +
                     " is below 0.9; increase blob_amplitude or reduce texture_amplitude");
  }
  return set;
}

SyntheticSpec synthetic_spec_for(std::size_t n_per_class, std::size_t size, std::uint64_t seed, double test_fraction) {
  if (n_per_class < 2) throw ConfigError("synthetic: n_per_class must be at least 2");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("synthetic: test fraction must be in (0, 1)");
  SyntheticSpec spec;
  spec.height = spec.width = size;
  spec.seed = seed;
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_per_class)));
  n_test = std::clamp<std::size_t>(n_test, 1, n_per_class - 1);
  spec.n_test_per_class = n_test;
  spec.n_train_per_class = n_per_class - n_test;
  return spec;
}

}  // namespace attnct::data
