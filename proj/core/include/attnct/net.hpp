#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnct/ops.hpp"
#include "attnct/rng.hpp"
#include "attnct/tape.hpp"
#include "attnct/tensor.hpp"

namespace attnct::net {

/// naive: H = M * T.  residual: H = (1 + M) * F.
enum class AttentionForm { naive, residual };

const char* to_string(AttentionForm form);
AttentionForm parse_attention_form(const std::string& s);

struct AttentionModuleConfig {
  std::size_t p = 1;  // residual units before the split, and again after the merge
  std::size_t t = 2;  // trunk residual units
  std::size_t r = 1;  // mask-branch pooling levels
  std::size_t channels = 16;

  void validate() const;
};

struct AttentionNetConfig {
  std::size_t input_height = 128;
  std::size_t input_width = 128;
  std::size_t input_channels = 1;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 2;
  bool stem_pool = true;
  std::vector<std::size_t> head_hidden{};
  AttentionModuleConfig module{};  // channels is taken from stage_channels
  AttentionForm form = AttentionForm::residual;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  /// Throws ConfigError naming the first stage whose geometry fails.
  void validate() const;

  /// Spatial extent (h, w) at the input of each stage.
  std::vector<std::pair<std::size_t, std::size_t>> stage_geometry() const;

  /// key=value lines with the `net.` prefix.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  /// Applies one `net.*` key; returns false for keys it does not own.
  bool apply_kv(const std::string& key, const std::string& value);

  /// 1 x 16 x 16 input, one stage of 4 channels; used by gradient checks.
  static AttentionNetConfig tiny();
};

using ParamMap = std::map<std::string, Tensor>;
using BatchNormMap = std::map<std::string, BatchNormState>;

struct NetworkParams {
  ParamMap tensors;
  BatchNormMap batchnorm;

  std::size_t parameter_count() const;
  bool operator==(const NetworkParams& o) const;
};

/// Supplies the tape variable for a parameter path.
using ParamBinder = std::function<Var(const std::string& path, const Tensor& value)>;
using CaptureMap = std::map<std::string, Var>;

/// Everything a layer needs while running forward.
struct LayerContext {
  Tape& tape;
  NetworkParams& params;
  Mode mode;
  ParamBinder bind;
  CaptureMap* captures = nullptr;

  Var param(const std::string& path);
  void capture(const std::string& name, Var v);
};

// ---- parameter construction ----------------------------------------------

void init_conv(NetworkParams& p, const std::string& path, std::size_t out, std::size_t in, std::size_t kernel,
               bool bias, Rng& rng);
void init_batchnorm(NetworkParams& p, const std::string& path, std::size_t channels, double momentum,
                    double epsilon);
void init_residual_unit(NetworkParams& p, const std::string& prefix, std::size_t in, std::size_t out,
                        std::size_t stride, Rng& rng, double momentum = 0.9, double epsilon = 1e-5);
void init_mask_branch(NetworkParams& p, const std::string& prefix, std::size_t channels, std::size_t r, Rng& rng,
                      double momentum = 0.9, double epsilon = 1e-5);
void init_attention_module(NetworkParams& p, const std::string& prefix, const AttentionModuleConfig& cfg, Rng& rng,
                           double momentum = 0.9, double epsilon = 1e-5);

// ---- building blocks -----------------------------------------------------

/// Pre-activation basic block: shortcut(x) + conv(relu(bn(conv(relu(bn(x)))))).
/// A `<prefix>.proj.weight` parameter turns the shortcut into a 1x1 projection.
Var residual_unit_forward(LayerContext& ctx, const std::string& prefix, Var x, std::size_t stride = 1);

/// [maxpool -> unit] x r -> unit -> [upsample -> unit] x r -> 1x1 conv -> 1x1 conv -> sigmoid.
Var mask_branch_forward(LayerContext& ctx, const std::string& prefix, Var x, std::size_t r);

struct AttentionOutput {
  Var output;
  Var trunk;     // T(x) / F(x)
  Var mask;      // M(x)
  Var combined;  // before the post units
};

AttentionOutput attention_module_forward(LayerContext& ctx, const std::string& prefix, Var x,
                                         const AttentionModuleConfig& cfg, AttentionForm form);

// ---- full network --------------------------------------------------------

struct ForwardResult {
  Var logits;  // N x 1, pre-sigmoid
  Var scores;  // N x 1, in (0, 1)
  CaptureMap captures;
  std::map<std::string, Var> param_vars;
};

class Network {
 public:
  /// Assembles and initializes the network; deterministic in `seed`.
  Network(AttentionNetConfig cfg, std::uint64_t seed);
  /// Wraps existing parameters (e.g. loaded from a container).
  Network(AttentionNetConfig cfg, std::uint64_t seed, NetworkParams params);

  const AttentionNetConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  NetworkParams& params() { return params_; }
  const NetworkParams& params() const { return params_; }

  /// Runs the network on an N x C x H x W batch. Train mode updates the
  /// running batch-norm statistics. Parameters are bound as tape leaves that
  /// require gradients whenever the tape records, unless `binder` is given.
  ForwardResult forward(Tape& tape, const Tensor& batch, Mode mode, std::span<const std::string> capture = {},
                        const ParamBinder& binder = nullptr);
  ForwardResult forward(Tape& tape, Var input, Mode mode, std::span<const std::string> capture = {},
                        const ParamBinder& binder = nullptr);

  /// Eval-mode probabilities, one per sample.
  std::vector<double> predict(const Tensor& batch) const;
  /// Eval-mode probabilities over a long batch, evaluated in chunks.
  std::vector<double> predict_chunked(const Tensor& batch, std::size_t chunk = 16) const;

  /// Names accepted by the `capture` argument of forward().
  std::vector<std::string> layer_names() const;
  /// Output of the last attention module.
  std::string default_explain_layer() const;

  void check_geometry(const Tensor& batch) const;

 private:
  AttentionNetConfig cfg_;
  std::uint64_t seed_;
  NetworkParams params_;
};

}  // namespace attnct::net
