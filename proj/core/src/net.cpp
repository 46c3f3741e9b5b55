#include "attnct/net.hpp"

#include <algorithm>
#include <cmath>

#include "attnct/errors.hpp"
#include "attnct/kv.hpp"

namespace attnct::net {
namespace {

using kv::join_sizes;
using kv::parse_bool;
using kv::parse_double;
using kv::parse_size;
using kv::parse_sizes;

std::string unit_path(const std::string& prefix, const char* group, std::size_t j) {
  return prefix + "." + group + ".unit" + std::to_string(j + 1);
}

std::string stage_name(std::size_t s) { return "stage" + std::to_string(s + 1); }

}  // namespace

const char* to_string(AttentionForm form) { return form == AttentionForm::naive ? "naive" : "residual"; }

AttentionForm parse_attention_form(const std::string& s) {
  if (s == "naive") return AttentionForm::naive;
  if (s == "residual") return AttentionForm::residual;
  throw ConfigError("attention form must be naive or residual, got '" + s + "'");
}

void AttentionModuleConfig::validate() const {
  if (t < 1) throw ConfigError("attention module: t must be at least 1");
  if (r < 1) throw ConfigError("attention module: r must be at least 1");
  if (channels < 1) throw ConfigError("attention module: channels must be positive");
}

std::vector<std::pair<std::size_t, std::size_t>> AttentionNetConfig::stage_geometry() const {
  std::vector<std::pair<std::size_t, std::size_t>> geo;
  if (stem_kernel == 0 || stem_stride == 0) throw ConfigError("stem kernel and stride must be positive");
  std::size_t h = conv_out_extent(input_height, stem_kernel, stem_stride, stem_kernel / 2);
  std::size_t w = conv_out_extent(input_width, stem_kernel, stem_stride, stem_kernel / 2);
  if (stem_pool) {
    if (h < 2 || w < 2) throw ConfigError("stem output " + std::to_string(h) + "x" + std::to_string(w) +
                                          " is too small for the stem max-pool");
    h /= 2;
    w /= 2;
  }
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    if (s > 0) {
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
    }
    geo.emplace_back(h, w);
  }
  return geo;
}

void AttentionNetConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ConfigError("input geometry must be positive");
  }
  if (stage_channels.empty()) throw ConfigError("at least one attention stage is required");
  if (!(bn_momentum > 0 && bn_momentum < 1)) throw ConfigError("batch-norm momentum must lie in (0,1)");
  if (!(bn_epsilon > 0)) throw ConfigError("batch-norm epsilon must be positive");
  for (auto c : stage_channels) {
    if (c == 0) throw ConfigError("stage channel counts must be positive");
  }
  AttentionModuleConfig mc = module;
  mc.channels = stage_channels.front();
  mc.validate();
  std::vector<std::pair<std::size_t, std::size_t>> geo;
  try {
    geo = stage_geometry();
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("stem: ") + e.what());
  }
  const std::size_t factor = std::size_t{1} << module.r;
  for (std::size_t s = 0; s < geo.size(); ++s) {
    const auto [h, w] = geo[s];
    if (h % factor != 0 || w % factor != 0) {
      throw ConfigError(stage_name(s) + ": spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                        " is not divisible by 2^r = " + std::to_string(factor));
    }
    if (h / factor < 4 || w / factor < 4) {
      throw ConfigError(stage_name(s) + ": mask branch reaches " + std::to_string(h / factor) + "x" +
                        std::to_string(w / factor) + ", below the 4x4 minimum");
    }
  }
}

std::vector<std::pair<std::string, std::string>> AttentionNetConfig::to_kv() const {
  return {
      {"net.input_height", std::to_string(input_height)},
      {"net.input_width", std::to_string(input_width)},
      {"net.input_channels", std::to_string(input_channels)},
      {"net.stage_channels", join_sizes(stage_channels)},
      {"net.stem_kernel", std::to_string(stem_kernel)},
      {"net.stem_stride", std::to_string(stem_stride)},
      {"net.stem_pool", stem_pool ? "true" : "false"},
      {"net.head_hidden", join_sizes(head_hidden)},
      {"net.p", std::to_string(module.p)},
      {"net.t", std::to_string(module.t)},
      {"net.r", std::to_string(module.r)},
      {"net.attention_form", to_string(form)},
      {"net.bn_momentum", kv::format_double(bn_momentum)},
      {"net.bn_epsilon", kv::format_double(bn_epsilon)},
  };
}

bool AttentionNetConfig::apply_kv(const std::string& key, const std::string& value) {
  if (key == "net.input_height") input_height = parse_size(key, value);
  else if (key == "net.input_width") input_width = parse_size(key, value);
  else if (key == "net.input_size") input_height = input_width = parse_size(key, value);
  else if (key == "net.input_channels") input_channels = parse_size(key, value);
  else if (key == "net.stage_channels") stage_channels = parse_sizes(key, value);
  else if (key == "net.stem_kernel") stem_kernel = parse_size(key, value);
  else if (key == "net.stem_stride") stem_stride = parse_size(key, value);
  else if (key == "net.stem_pool") stem_pool = parse_bool(key, value);
  else if (key == "net.head_hidden") head_hidden = parse_sizes(key, value);
  else if (key == "net.p") module.p = parse_size(key, value, true);
  else if (key == "net.t") module.t = parse_size(key, value);
  else if (key == "net.r") module.r = parse_size(key, value);
  else if (key == "net.attention_form") form = parse_attention_form(value);
  else if (key == "net.bn_momentum") bn_momentum = parse_double(key, value);
  else if (key == "net.bn_epsilon") bn_epsilon = parse_double(key, value);
  else return false;
  return true;
}

AttentionNetConfig AttentionNetConfig::tiny() {
  AttentionNetConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.input_channels = 1;
  c.stage_channels = {4};
  c.stem_kernel = 3;
  c.stem_stride = 1;
  c.stem_pool = false;
  return c;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.numel();
  return n;
}

bool NetworkParams::operator==(const NetworkParams& o) const {
  if (tensors != o.tensors || batchnorm.size() != o.batchnorm.size()) return false;
  for (const auto& [k, s] : batchnorm) {
    auto it = o.batchnorm.find(k);
    if (it == o.batchnorm.end()) return false;
    if (!(s.running_mean == it->second.running_mean) || !(s.running_var == it->second.running_var)) return false;
  }
  return true;
}

Var LayerContext::param(const std::string& path) {
  auto it = params.tensors.find(path);
  if (it == params.tensors.end()) throw LookupError("missing parameter '" + path + "'");
  return bind(path, it->second);
}

void LayerContext::capture(const std::string& name, Var v) {
  if (!captures) return;
  auto it = captures->find(name);
  if (it != captures->end()) it->second = v;
}

// ---- initialization --------------------------------------------------------

void init_conv(NetworkParams& p, const std::string& path, std::size_t out, std::size_t in, std::size_t kernel,
               bool bias, Rng& rng) {
  Tensor w({out, in, kernel, kernel});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  for (auto& v : w.data()) v = rng.normal(0.0, stddev);
  p.tensors[path + ".weight"] = std::move(w);
  if (bias) p.tensors[path + ".bias"] = Tensor({out}, 0.0);
}

void init_batchnorm(NetworkParams& p, const std::string& path, std::size_t channels, double momentum,
                    double epsilon) {
  p.tensors[path + ".gamma"] = Tensor({channels}, 1.0);
  p.tensors[path + ".beta"] = Tensor({channels}, 0.0);
  p.batchnorm[path] = BatchNormState::fresh(channels, momentum, epsilon);
}

void init_residual_unit(NetworkParams& p, const std::string& prefix, std::size_t in, std::size_t out,
                        std::size_t stride, Rng& rng, double momentum, double epsilon) {
  init_batchnorm(p, prefix + ".bn1", in, momentum, epsilon);
  init_conv(p, prefix + ".conv1", out, in, 3, false, rng);
  init_batchnorm(p, prefix + ".bn2", out, momentum, epsilon);
  init_conv(p, prefix + ".conv2", out, out, 3, false, rng);
  if (in != out || stride != 1) init_conv(p, prefix + ".proj", out, in, 1, false, rng);
}

void init_mask_branch(NetworkParams& p, const std::string& prefix, std::size_t channels, std::size_t r, Rng& rng,
                      double momentum, double epsilon) {
  for (std::size_t l = 0; l < r; ++l) {
    init_residual_unit(p, prefix + ".down" + std::to_string(l + 1), channels, channels, 1, rng, momentum, epsilon);
  }
  init_residual_unit(p, prefix + ".mid", channels, channels, 1, rng, momentum, epsilon);
  for (std::size_t l = 0; l < r; ++l) {
    init_residual_unit(p, prefix + ".up" + std::to_string(l + 1), channels, channels, 1, rng, momentum, epsilon);
  }
  init_batchnorm(p, prefix + ".head.bn1", channels, momentum, epsilon);
  init_conv(p, prefix + ".head.conv1", channels, channels, 1, true, rng);
  init_batchnorm(p, prefix + ".head.bn2", channels, momentum, epsilon);
  init_conv(p, prefix + ".head.conv2", channels, channels, 1, true, rng);
}

void init_attention_module(NetworkParams& p, const std::string& prefix, const AttentionModuleConfig& cfg, Rng& rng,
                           double momentum, double epsilon) {
  const std::size_t c = cfg.channels;
  for (std::size_t j = 0; j < cfg.p; ++j) init_residual_unit(p, unit_path(prefix, "pre", j), c, c, 1, rng, momentum, epsilon);
  for (std::size_t j = 0; j < cfg.t; ++j) init_residual_unit(p, unit_path(prefix, "trunk", j), c, c, 1, rng, momentum, epsilon);
  init_mask_branch(p, prefix + ".mask", c, cfg.r, rng, momentum, epsilon);
  for (std::size_t j = 0; j < cfg.p; ++j) init_residual_unit(p, unit_path(prefix, "post", j), c, c, 1, rng, momentum, epsilon);
}

// ---- building blocks -------------------------------------------------------

namespace {

Var bn_relu(LayerContext& ctx, const std::string& path, Var x) {
  auto it = ctx.params.batchnorm.find(path);
  if (it == ctx.params.batchnorm.end()) throw LookupError("missing batch-norm state '" + path + "'");
  const Var y = batchnorm2d(ctx.tape, x, ctx.param(path + ".gamma"), ctx.param(path + ".beta"), it->second, ctx.mode);
  return relu(ctx.tape, y);
}

}  // namespace

Var residual_unit_forward(LayerContext& ctx, const std::string& prefix, Var x, std::size_t stride) {
  const std::size_t in = ctx.tape.value(x).dim(1);
  const Var w1 = ctx.param(prefix + ".conv1.weight");
  const std::size_t out = ctx.tape.value(w1).dim(0);
  const bool has_proj = ctx.params.tensors.count(prefix + ".proj.weight") > 0;
  if ((in != out || stride != 1) && !has_proj) {
    throw ConfigError(prefix + ": input has " + std::to_string(in) + " channels, output " + std::to_string(out) +
                      " (stride " + std::to_string(stride) + ") but no projection shortcut is configured");
  }
  Var h = bn_relu(ctx, prefix + ".bn1", x);
  h = conv2d(ctx.tape, h, w1, Var{}, stride, 1);
  h = bn_relu(ctx, prefix + ".bn2", h);
  h = conv2d(ctx.tape, h, ctx.param(prefix + ".conv2.weight"), Var{}, 1, 1);
  const Var shortcut = has_proj ? conv2d(ctx.tape, x, ctx.param(prefix + ".proj.weight"), Var{}, stride, 0) : x;
  const Var y = add(ctx.tape, shortcut, h);
  ctx.capture(prefix, y);
  return y;
}

Var mask_branch_forward(LayerContext& ctx, const std::string& prefix, Var x, std::size_t r) {
  const Tensor& xv = ctx.tape.value(x);
  const std::size_t factor = std::size_t{1} << r;
  if (xv.rank() != 4 || xv.dim(2) % factor != 0 || xv.dim(3) % factor != 0) {
    throw ConfigError(prefix + ": spatial extent " + shape_str(xv.shape()) + " is not divisible by 2^" +
                      std::to_string(r));
  }
  Var h = x;
  for (std::size_t l = 0; l < r; ++l) {
    h = maxpool2d(ctx.tape, h, 2, 2);
    h = residual_unit_forward(ctx, prefix + ".down" + std::to_string(l + 1), h);
  }
  h = residual_unit_forward(ctx, prefix + ".mid", h);
  for (std::size_t l = 0; l < r; ++l) {
    h = interp_up2(ctx.tape, h);
    h = residual_unit_forward(ctx, prefix + ".up" + std::to_string(l + 1), h);
  }
  h = bn_relu(ctx, prefix + ".head.bn1", h);
  h = conv2d(ctx.tape, h, ctx.param(prefix + ".head.conv1.weight"), ctx.param(prefix + ".head.conv1.bias"), 1, 0);
  h = bn_relu(ctx, prefix + ".head.bn2", h);
  h = conv2d(ctx.tape, h, ctx.param(prefix + ".head.conv2.weight"), ctx.param(prefix + ".head.conv2.bias"), 1, 0);
  ctx.capture(prefix + ".logits", h);
  const Var m = sigmoid(ctx.tape, h);
  ctx.capture(prefix, m);
  return m;
}

AttentionOutput attention_module_forward(LayerContext& ctx, const std::string& prefix, Var x,
                                         const AttentionModuleConfig& cfg, AttentionForm form) {
  const Tensor& xv = ctx.tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != cfg.channels) {
    throw DimensionError(prefix + ": expected " + std::to_string(cfg.channels) + " channels (axis 1), got " +
                         shape_str(xv.shape()));
  }
  Var h = x;
  for (std::size_t j = 0; j < cfg.p; ++j) h = residual_unit_forward(ctx, unit_path(prefix, "pre", j), h);
  Var trunk = h;
  for (std::size_t j = 0; j < cfg.t; ++j) trunk = residual_unit_forward(ctx, unit_path(prefix, "trunk", j), trunk);
  ctx.capture(prefix + ".trunk", trunk);
  const Var mask = mask_branch_forward(ctx, prefix + ".mask", h, cfg.r);
  const Var combined = form == AttentionForm::residual ? add_one_mul(ctx.tape, mask, trunk) : mul(ctx.tape, mask, trunk);
  ctx.capture(prefix + ".combined", combined);
  Var out = combined;
  for (std::size_t j = 0; j < cfg.p; ++j) out = residual_unit_forward(ctx, unit_path(prefix, "post", j), out);
  ctx.capture(prefix, out);
  return {out, trunk, mask, combined};
}

// ---- network ---------------------------------------------------------------

Network::Network(AttentionNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  Rng rng(seed);
  const double mom = cfg_.bn_momentum, eps = cfg_.bn_epsilon;
  const auto& ch = cfg_.stage_channels;
  init_conv(params_, "stem.conv", ch[0], cfg_.input_channels, cfg_.stem_kernel, true, rng);
  for (std::size_t s = 0; s < ch.size(); ++s) {
    const std::string stage = stage_name(s);
    if (s > 0) init_residual_unit(params_, stage + ".down", ch[s - 1], ch[s], 2, rng, mom, eps);
    AttentionModuleConfig mc = cfg_.module;
    mc.channels = ch[s];
    init_attention_module(params_, stage + ".attn", mc, rng, mom, eps);
  }
  const std::size_t last = ch.back();
  init_residual_unit(params_, "final.unit1", last, last, 1, rng, mom, eps);
  init_residual_unit(params_, "final.unit2", last, last, 1, rng, mom, eps);
  init_batchnorm(params_, "final.bn", last, mom, eps);
  std::size_t width = last;
  for (std::size_t j = 0; j < cfg_.head_hidden.size(); ++j) {
    const std::string path = "head.fc" + std::to_string(j + 1);
    Tensor w({width, cfg_.head_hidden[j]});
    const double stddev = std::sqrt(2.0 / static_cast<double>(width));
    for (auto& v : w.data()) v = rng.normal(0.0, stddev);
    params_.tensors[path + ".weight"] = std::move(w);
    params_.tensors[path + ".bias"] = Tensor({cfg_.head_hidden[j]}, 0.0);
    width = cfg_.head_hidden[j];
  }
  Tensor w({width, 1});
  const double stddev = std::sqrt(2.0 / static_cast<double>(width));
  for (auto& v : w.data()) v = rng.normal(0.0, stddev);
  params_.tensors["head.out.weight"] = std::move(w);
  params_.tensors["head.out.bias"] = Tensor({1}, 0.0);
}

Network::Network(AttentionNetConfig cfg, std::uint64_t seed, NetworkParams params)
    : cfg_(std::move(cfg)), seed_(seed), params_(std::move(params)) {
  cfg_.validate();
}

void Network::check_geometry(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != cfg_.input_channels || batch.dim(2) != cfg_.input_height ||
      batch.dim(3) != cfg_.input_width) {
    throw ConfigError("input geometry mismatch: expected [N x " + std::to_string(cfg_.input_channels) + " x " +
                      std::to_string(cfg_.input_height) + " x " + std::to_string(cfg_.input_width) + "], found " +
                      shape_str(batch.shape()));
  }
}

std::vector<std::string> Network::layer_names() const {
  std::vector<std::string> names{"stem"};
  const auto& ch = cfg_.stage_channels;
  for (std::size_t s = 0; s < ch.size(); ++s) {
    const std::string stage = stage_name(s);
    if (s > 0) names.push_back(stage + ".down");
    const std::string a = stage + ".attn";
    for (std::size_t j = 0; j < cfg_.module.p; ++j) names.push_back(unit_path(a, "pre", j));
    for (std::size_t j = 0; j < cfg_.module.t; ++j) names.push_back(unit_path(a, "trunk", j));
    names.push_back(a + ".trunk");
    for (std::size_t l = 0; l < cfg_.module.r; ++l) names.push_back(a + ".mask.down" + std::to_string(l + 1));
    names.push_back(a + ".mask.mid");
    for (std::size_t l = 0; l < cfg_.module.r; ++l) names.push_back(a + ".mask.up" + std::to_string(l + 1));
    names.push_back(a + ".mask.logits");
    names.push_back(a + ".mask");
    names.push_back(a + ".combined");
    for (std::size_t j = 0; j < cfg_.module.p; ++j) names.push_back(unit_path(a, "post", j));
    names.push_back(a);
  }
  names.push_back("final.unit1");
  names.push_back("final.unit2");
  names.push_back("final");
  names.push_back("pooled");
  return names;
}

std::string Network::default_explain_layer() const {
  return stage_name(cfg_.stage_channels.size() - 1) + ".attn";
}

ForwardResult Network::forward(Tape& tape, const Tensor& batch, Mode mode, std::span<const std::string> capture,
                               const ParamBinder& binder) {
  check_geometry(batch);
  return forward(tape, tape.constant(batch), mode, capture, binder);
}

ForwardResult Network::forward(Tape& tape, Var input, Mode mode, std::span<const std::string> capture,
                               const ParamBinder& binder) {
  check_geometry(tape.value(input));
  ForwardResult result;
  if (!capture.empty()) {
    const auto names = layer_names();
    for (const auto& key : capture) {
      if (std::find(names.begin(), names.end(), key) == names.end()) {
        throw LookupError("unknown capture key '" + key + "'");
      }
      result.captures[key] = Var{};
    }
  }
  ParamBinder bind = binder;
  if (!bind) {
    bind = [&tape, &result](const std::string& path, const Tensor& value) {
      auto it = result.param_vars.find(path);
      if (it != result.param_vars.end()) return it->second;
      const Var v = tape.leaf(value, tape.recording());
      result.param_vars.emplace(path, v);
      return v;
    };
  }
  LayerContext ctx{tape, params_, mode, bind, capture.empty() ? nullptr : &result.captures};

  Var h = conv2d(tape, input, ctx.param("stem.conv.weight"), ctx.param("stem.conv.bias"), cfg_.stem_stride,
                 cfg_.stem_kernel / 2);
  if (cfg_.stem_pool) h = maxpool2d(tape, h, 2, 2);
  ctx.capture("stem", h);
  const auto& ch = cfg_.stage_channels;
  for (std::size_t s = 0; s < ch.size(); ++s) {
    const std::string stage = stage_name(s);
    if (s > 0) h = residual_unit_forward(ctx, stage + ".down", h, 2);
    AttentionModuleConfig mc = cfg_.module;
    mc.channels = ch[s];
    h = attention_module_forward(ctx, stage + ".attn", h, mc, cfg_.form).output;
  }
  h = residual_unit_forward(ctx, "final.unit1", h);
  h = residual_unit_forward(ctx, "final.unit2", h);
  {
    auto& st = params_.batchnorm.at("final.bn");
    h = batchnorm2d(tape, h, ctx.param("final.bn.gamma"), ctx.param("final.bn.beta"), st, mode);
    h = relu(tape, h);
  }
  ctx.capture("final", h);
  h = global_avg_pool(tape, h);
  ctx.capture("pooled", h);
  for (std::size_t j = 0; j < cfg_.head_hidden.size(); ++j) {
    const std::string path = "head.fc" + std::to_string(j + 1);
    h = relu(tape, dense(tape, h, ctx.param(path + ".weight"), ctx.param(path + ".bias")));
  }
  result.logits = dense(tape, h, ctx.param("head.out.weight"), ctx.param("head.out.bias"));
  result.scores = sigmoid(tape, result.logits);
  return result;
}

std::vector<double> Network::predict(const Tensor& batch) const {
  Tape tape(false);
  // Eval mode reads parameters and running statistics without modifying them.
  auto& self = const_cast<Network&>(*this);
  const ForwardResult r = self.forward(tape, batch, Mode::eval);
  const auto v = tape.value(r.scores).data();
  return {v.begin(), v.end()};
}

std::vector<double> Network::predict_chunked(const Tensor& batch, std::size_t chunk) const {
  check_geometry(batch);
  const std::size_t n = batch.dim(0);
  const std::size_t per = batch.numel() / n;
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Shape s = batch.shape();
    s[0] = m;
    std::vector<double> data(batch.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                             batch.data().begin() + static_cast<std::ptrdiff_t>((start + m) * per));
    const auto scores = predict(Tensor(s, std::move(data)));
    out.insert(out.end(), scores.begin(), scores.end());
  }
  return out;
}

}  // namespace attnct::net
