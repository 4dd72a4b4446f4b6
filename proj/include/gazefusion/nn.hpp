#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gazefusion/serialize.hpp"
#include "gazefusion/tensor.hpp"

// Parameterized layers. Every layer owns its parameter tensors (leaves with
// requires_grad) and exposes them by name through collect().
namespace gazefusion::nn {

using Rng = std::mt19937_64;

struct LinearLayer {
  Tensor weight;  // [d_in × d_out]
  Tensor bias;    // [d_out]

  // weight ~ U(±1/sqrt(d_in)), bias = 0
  static LinearLayer create(std::size_t d_in, std::size_t d_out, Rng& rng);
  static std::size_t parameter_count(std::size_t d_in, std::size_t d_out) { return d_in * d_out + d_out; }

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  // Applies to the last axis of x.
  Tensor forward(const Tensor& x) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
  void zero();
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormParams create(std::size_t d, double eps = 1e-5);
  static std::size_t parameter_count(std::size_t d) { return 2 * d; }
  Tensor forward(const Tensor& x) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct MhsaParams {
  std::size_t num_heads = 1;
  std::size_t d_model = 0;
  LinearLayer w_q, w_k, w_v, w_o;

  static MhsaParams create(std::size_t d_model, std::size_t num_heads, Rng& rng);
  static std::size_t parameter_count(std::size_t d_model) { return 4 * LinearLayer::parameter_count(d_model, d_model); }
  std::size_t head_dim() const { return d_model / num_heads; }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// Multi-head scaled dot-product self-attention over z [n×d] or [B×n×d].
// When `attention` is non-null it receives the softmax weights [B×heads×n×n].
Tensor mhsa_forward(const MhsaParams& p, const Tensor& z, Tensor* attention = nullptr);

struct TransformerBlock {
  LayerNormParams ln1, ln2;
  MhsaParams mhsa;
  LinearLayer mlp_in, mlp_out;

  static TransformerBlock create(std::size_t d_model, std::size_t num_heads, std::size_t hidden_dim, Rng& rng);
  static std::size_t parameter_count(std::size_t d_model, std::size_t hidden_dim);
  std::size_t hidden_dim() const { return mlp_in.out_dim(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// z' = MHSA(LN1(z)) + z ; out = MLP(LN2(z')) + z'
Tensor transformer_block_forward(const TransformerBlock& b, const Tensor& z);

struct TransformerEncoder {
  std::vector<TransformerBlock> blocks;
  LayerNormParams final_ln;

  static TransformerEncoder create(std::size_t num_blocks, std::size_t d_model, std::size_t num_heads,
                                   std::size_t hidden_dim, Rng& rng);
  static std::size_t parameter_count(std::size_t num_blocks, std::size_t d_model, std::size_t hidden_dim);
  std::size_t d_model() const { return final_ln.gamma.dim(0); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// Sequential blocks followed by the final layer norm. No positional encoding.
Tensor encoder_forward(const TransformerEncoder& e, const Tensor& z);

struct ConvStage {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pad = 1;
  Tensor weight;  // [kernel·kernel·in_channels × out_channels], rows ordered (ky, kx, c)
  Tensor bias;    // [out_channels]

  std::size_t in_channels() const { return weight.dim(0) / (kernel * kernel); }
  std::size_t out_channels() const { return weight.dim(1); }
};

// How the last feature map becomes a vector: global average, or the whole
// map flattened (keeps spatial layout; used at toy resolution).
enum class Pooling { Average, Flatten };

std::string pooling_name(Pooling p);  // avg, flatten
Pooling parse_pooling(std::string_view name);

// Strided 3×3 conv stages with GELU, pooling, linear projection.
struct ConvBackbone {
  std::size_t height = 0, width = 0, channels = 0;
  Pooling pooling = Pooling::Average;
  std::vector<ConvStage> stages;
  LinearLayer proj;

  static ConvBackbone create(std::size_t height, std::size_t width, std::size_t channels,
                             const std::vector<std::size_t>& stage_channels, std::size_t feature_dim,
                             Pooling pooling, Rng& rng);
  static std::size_t parameter_count(std::size_t height, std::size_t width, std::size_t channels,
                                     const std::vector<std::size_t>& stage_channels, std::size_t feature_dim,
                                     Pooling pooling);
  // Length of the pooled vector fed to the projection.
  static std::size_t pooled_dim(std::size_t height, std::size_t width, const std::vector<std::size_t>& stage_channels,
                                Pooling pooling);
  std::size_t feature_dim() const { return proj.out_dim(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// images [B×H×W×C] -> [B×feature_dim]; a single [H×W×C] image -> [feature_dim].
Tensor backbone_forward(const ConvBackbone& b, const Tensor& images);

}  // namespace gazefusion::nn
