#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gazefusion/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape when at least one input requires grad.
namespace gazefusion {

// [m×k]·[k×n]. `a` may carry leading batch axes which are flattened into m;
// `b` must be rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B×m×k]·[B×k×n].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Elementwise |x| with the subgradient at 0 fixed to 0.
Tensor abs(const Tensor& x);

// Softmax over the last axis, stabilized by subtracting the row max.
Tensor softmax_rows(const Tensor& x);

// Normalizes over the last axis (population variance), then gamma*x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
inline constexpr double kGeluCubicCoeff = 0.044715;

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);

// Scalar reductions; result has shape {}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Patch extraction for convolution on NHWC input [B×H×W×C]. Output is
// [B·Ho·Wo × k·k·C] with patch entries ordered (ky, kx, c); out-of-image taps
// read zero.
Tensor im2col(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad);
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Selects rows (first axis) of x.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Copy of `base` [N×...] with parts[g] added to rows row_groups[g]. Rows not
// named in any group are copied verbatim.
Tensor add_scattered_rows(const Tensor& base, std::span<const Tensor> parts,
                          std::span<const std::vector<std::size_t>> row_groups);

namespace testing {
// Multiplies the gradient emitted by the named op's backward rule by `factor`
// on the calling thread. Used to prove the gradient checker detects a broken
// rule. Pass an empty name to disable.
void set_backward_fault(const char* op_name, double factor);
}  // namespace testing

}  // namespace gazefusion
