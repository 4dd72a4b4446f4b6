#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazefusion/geometry.hpp"
#include "gazefusion/image.hpp"
#include "gazefusion/keyvalue.hpp"
#include "gazefusion/nn.hpp"

namespace gazefusion {

// How eye and face features are combined.
//   EhLr    each eye fused with the face, then left with right (default)
//   LrEh    left with right eye first, then with the face
//   Par     eyes and face fused in one three-token step
//   TwoEyes eyes only, no face stream
enum class FusionTopology { EhLr, LrEh, Par, TwoEyes };

std::string topology_name(FusionTopology t);  // eh_lr, lr_eh, par, two_eyes
FusionTopology parse_topology(std::string_view name);

struct ModelConfig {
  FusionTopology topology = FusionTopology::EhLr;
  std::size_t face_size = 32;
  std::size_t eye_size = 16;
  std::size_t image_channels = 1;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t feature_dim = 32;
  std::size_t proj_dim = 16;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 2;
  std::size_t mlp_hidden = 64;
  std::size_t gaze_hidden = 32;
  std::size_t gam_hidden = 16;
  nn::Pooling pooling = nn::Pooling::Flatten;

  static ModelConfig toy();
  static ModelConfig full();  // 8 heads, 8 blocks, MLP 2048, projection 128, 224/128 px RGB
  static ModelConfig tiny();  // a few thousand parameters, for exhaustive gradient checks

  void validate() const;  // throws ConfigError
  std::size_t fused_dim() const;

  // key=value text; from_text(to_text()) reproduces the config exactly.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text, const std::string& source = "<model config>");
  // Reads recognised model keys from a document, returns false if `e` is not one.
  bool apply(const kv::Entry& e, const std::string& source);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One fusion unit: stack the token features, run a transformer encoder,
// project every token with a shared linear layer, then flatten (concatenate).
struct FusionModule {
  std::size_t num_tokens = 2;
  nn::TransformerEncoder encoder;
  nn::LinearLayer proj;

  static FusionModule create(std::size_t num_tokens, std::size_t token_dim, std::size_t proj_dim,
                             const ModelConfig& cfg, nn::Rng& rng);
  static std::size_t parameter_count(std::size_t token_dim, std::size_t proj_dim, const ModelConfig& cfg);
  std::size_t token_dim() const { return encoder.d_model(); }
  std::size_t output_dim() const { return num_tokens * proj.out_dim(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// features: num_tokens tensors, each [B×d] (or [d]) -> [B×num_tokens·proj_dim]
Tensor fusion_forward(const FusionModule& m, std::span<const Tensor> features);
// Two-token fusion; token order is (f_a, f_b).
Tensor tgf_forward(const FusionModule& m, const Tensor& f_a, const Tensor& f_b);

struct ForwardResult {
  Tensor gaze;   // [B×2] yaw, pitch
  Tensor fused;  // [B×fused_dim], the feature the adaptation heads consume
  Tensor face_features, left_features, right_features;  // backbone outputs (face undefined for TwoEyes)
  Tensor left_head, right_head;  // EhLr first-stage outputs
};

struct Prediction {
  GazeAngles gaze;
  std::vector<double> fused;
};

class GazeModel {
 public:
  static GazeModel create(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t fused_dim() const { return cfg_.fused_dim(); }

  // Batched images [B×H×W×C]. Re-entrant: parameters are only read.
  ForwardResult forward(const Tensor& face, const Tensor& left_eye, const Tensor& right_eye) const;
  Prediction predict(const Image& face, const Image& left_eye, const Image& right_eye) const;

  NamedTensors parameters() const;
  std::size_t parameter_count() const { return count_parameters(parameters()); }

  // Component access (tests, ablations).
  const std::optional<nn::ConvBackbone>& face_backbone() const { return face_backbone_; }
  const nn::ConvBackbone& left_backbone() const { return left_backbone_; }
  const nn::ConvBackbone& right_backbone() const { return right_backbone_; }
  FusionModule& fusion(const std::string& name);
  const FusionModule& fusion(const std::string& name) const;
  std::vector<std::string> fusion_names() const;
  nn::LinearLayer& gaze_fc1() { return gaze_fc1_; }
  nn::LinearLayer& gaze_fc2() { return gaze_fc2_; }

 private:
  ModelConfig cfg_;
  std::optional<nn::ConvBackbone> face_backbone_;
  nn::ConvBackbone left_backbone_, right_backbone_;
  std::vector<std::pair<std::string, FusionModule>> fusions_;
  std::optional<nn::LinearLayer> head_proj_;  // LrEh: face feature -> second-stage token width
  nn::LinearLayer gaze_fc1_, gaze_fc2_;
};

// Closed-form parameter count for a config, computed without building it.
std::size_t expected_parameter_count(const ModelConfig& cfg);

}  // namespace gazefusion
