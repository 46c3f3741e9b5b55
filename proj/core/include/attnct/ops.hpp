#pragma once

#include <cstddef>
#include <vector>

#include "attnct/tape.hpp"
#include "attnct/tensor.hpp"

namespace attnct {

enum class Mode { train, eval };

/// Per-channel normalization statistics. gamma and beta are ordinary
/// parameters and live outside this struct so they can be differentiated.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;

  /// Running mean 0 and variance 1 for `channels` channels.
  static BatchNormState fresh(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);
  bool initialized() const { return !running_mean.empty() && !running_var.empty(); }
};

struct MaxPoolResult {
  Tensor output;
  /// Flat input index of the winning element, one per output cell.
  std::vector<std::size_t> argmax;
};

// ---- kernels on plain tensors -------------------------------------------

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
                      std::size_t padding);
MaxPoolResult maxpool2d_forward(const Tensor& input, std::size_t window, std::size_t stride);
/// Bilinear resize of an NCHW tensor, half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

// ---- differentiable ops ---------------------------------------------------

/// `bias` may be an invalid Var for a bias-free convolution.
Var conv2d(Tape& tape, Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);
Var maxpool2d(Tape& tape, Var input, std::size_t window, std::size_t stride);
/// Factor-2 bilinear upsampling.
Var interp_up2(Tape& tape, Var input);

Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
/// (1 + m) * f, elementwise.
Var add_one_mul(Tape& tape, Var m, Var f);
Var scale(Tape& tape, Var x, double factor);
/// Sum of all elements as a one-element tensor.
Var sum(Tape& tape, Var x);

/// Train mode normalizes with batch statistics and folds them into `state`;
/// eval mode reads the running statistics only.
Var batchnorm2d(Tape& tape, Var input, Var gamma, Var beta, BatchNormState& state, Mode mode);

/// input N x D, weight D x K, bias K.
Var dense(Tape& tape, Var input, Var weight, Var bias);
/// N x C x H x W -> N x C spatial mean.
Var global_avg_pool(Tape& tape, Var input);

}  // namespace attnct
