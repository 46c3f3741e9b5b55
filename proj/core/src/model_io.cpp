#include "attnct/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "attnct/errors.hpp"
#include "attnct/kv.hpp"

namespace attnct::net {
namespace {

constexpr const char* kMeanSuffix = ".running_mean";
constexpr const char* kVarSuffix = ".running_var";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw IoError(std::string("model container: ") + what + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

void put_record(std::vector<std::uint8_t>& out, const std::string& path, const Tensor& t) {
  put_u32(out, checked_u32(path.size(), "path length"));
  out.insert(out.end(), path.begin(), path.end());
  put_u32(out, checked_u32(t.rank(), "rank"));
  for (auto e : t.shape()) put_u32(out, checked_u32(e, "extent"));
  for (double v : t.data()) put_f32(out, v);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("model container truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

bool ends_with(const std::string& s, const char* suffix) {
  const std::size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

}  // namespace

std::optional<std::string> LoadedModel::header_value(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::vector<std::uint8_t> encode_model(const Network& network, std::size_t epoch, const HeaderEntries& extra) {
  std::string header;
  for (const auto& [k, v] : network.config().to_kv()) header += k + "=" + v + "\n";
  header += "seed=" + std::to_string(network.seed()) + "\n";
  header += "epoch=" + std::to_string(epoch) + "\n";
  for (const auto& [k, v] : extra) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw IoError("model container: header entry '" + k + "' contains a reserved character");
    }
    header += k + "=" + v + "\n";
  }

  const auto& p = network.params();
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  put_u32(out, checked_u32(header.size(), "header length"));
  out.insert(out.end(), header.begin(), header.end());
  put_u32(out, checked_u32(p.tensors.size() + 2 * p.batchnorm.size(), "record count"));
  for (const auto& [path, t] : p.tensors) put_record(out, path, t);
  for (const auto& [path, s] : p.batchnorm) {
    put_record(out, path + kMeanSuffix, s.running_mean);
    put_record(out, path + kVarSuffix, s.running_var);
  }
  return out;
}

LoadedModel decode_model(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(8) != std::string(kModelMagic, 8)) throw IoError("not a model container (bad magic)");
  const std::string header = in.str(in.u32());

  AttentionNetConfig cfg;
  HeaderEntries entries;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("model container: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    entries.emplace_back(key, value);
    try {
      if (cfg.apply_kv(key, value)) continue;
      if (key == "seed") seed = kv::parse_u64(key, value);
      if (key == "epoch") epoch = kv::parse_size(key, value, true);
    } catch (const Error&) {
      throw IoError("model container: bad header value for '" + key + "'");
    }
  }

  // The reference build supplies the expected layout and the batch-norm
  // hyperparameters; its values are overwritten below.
  Network reference(cfg, seed);
  NetworkParams params = reference.params();

  const std::uint32_t count = in.u32();
  std::size_t tensors_seen = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string path = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u32();
    Tensor t(shape);
    for (auto& v : t.data()) v = in.f32();

    Tensor* dst = nullptr;
    if (auto it = params.tensors.find(path); it != params.tensors.end()) {
      dst = &it->second;
      ++tensors_seen;
    } else if (ends_with(path, kMeanSuffix) || ends_with(path, kVarSuffix)) {
      const bool is_mean = ends_with(path, kMeanSuffix);
      const std::string layer = path.substr(0, path.size() - std::strlen(is_mean ? kMeanSuffix : kVarSuffix));
      auto bn = params.batchnorm.find(layer);
      if (bn != params.batchnorm.end()) dst = is_mean ? &bn->second.running_mean : &bn->second.running_var;
    }
    if (!dst) throw IoError("model container: unexpected parameter '" + path + "'");
    if (dst->shape() != t.shape()) {
      throw IoError("model container: '" + path + "' has shape " + shape_str(t.shape()) + ", config expects " +
                    shape_str(dst->shape()));
    }
    *dst = std::move(t);
  }
  if (tensors_seen != params.tensors.size() || count != params.tensors.size() + 2 * params.batchnorm.size()) {
    throw IoError("model container: record set does not match the configured architecture");
  }
  if (!in.at_end()) throw IoError("model container: trailing bytes after last record");
  return LoadedModel{Network(cfg, seed, std::move(params)), epoch, std::move(entries)};
}

void save_model(const std::filesystem::path& path, const Network& network, std::size_t epoch,
                const HeaderEntries& extra) {
  const auto bytes = encode_model(network, epoch, extra);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open model '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace attnct::net
