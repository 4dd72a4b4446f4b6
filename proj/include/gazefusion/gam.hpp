#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gazefusion/geometry.hpp"
#include "gazefusion/nn.hpp"

namespace gazefusion {

// Offset head form. Mlp is the proposed per-dataset two-layer GELU network
// on the fused feature; ConstantBias learns one (Δyaw, Δpitch) per dataset
// and ignores the input (ablation).
enum class GamMode { Mlp, ConstantBias };

std::string gam_mode_name(GamMode m);  // mlp, constant
GamMode parse_gam_mode(const std::string& name);

/// Per-dataset gaze adaptation heads.
///
/// Dataset 0 is the anchor: its head has no parameters and its offset is
/// identically zero, so corrected anchor outputs are the raw estimator output
/// bit for bit. Heads 1..M-1 are independent; a batch that holds no sample
/// of dataset i never touches head i's parameters or gradients.
class GamBank {
 public:
  // The second layer (or the constant bias) starts at zero so that training
  // begins from the unadapted estimator.
  static GamBank create(std::size_t num_datasets, std::size_t feature_dim, std::size_t hidden, GamMode mode,
                        nn::Rng& rng);

  std::size_t num_datasets() const { return num_datasets_; }
  std::size_t feature_dim() const { return feature_dim_; }
  GamMode mode() const { return mode_; }

  // Offsets [B×2] for rows that all come from `dataset_id`.
  Tensor offsets(std::size_t dataset_id, const Tensor& fused) const;
  GazeAngles gam_offset(std::size_t dataset_id, std::span<const double> fused) const;

  // ĝ = g + Δg with each row routed to its dataset's head; anchor rows are
  // copied unchanged.
  Tensor correct(const Tensor& gaze, const Tensor& fused, std::span<const std::size_t> dataset_ids) const;

  // K: parameters of one trainable head.
  std::size_t head_parameter_count() const;
  // (M-1)·K
  std::size_t trainable_parameter_count() const { return (num_datasets_ - 1) * head_parameter_count(); }

  NamedTensors parameters() const;
  NamedTensors head_parameters(std::size_t dataset_id) const;
  void zero_heads();

 private:
  struct Head {
    nn::LinearLayer fc1, fc2;  // Mlp mode
    Tensor bias;               // ConstantBias mode, [2]
  };
  const Head& head(std::size_t dataset_id) const;
  void check_id(std::size_t dataset_id) const;

  std::size_t num_datasets_ = 1;
  std::size_t feature_dim_ = 0;
  std::size_t hidden_ = 0;
  GamMode mode_ = GamMode::Mlp;
  std::vector<Head> heads_;  // heads_[i-1] serves dataset i
};

// Trainable parameters with M datasets: N shared + (M-1)·K adaptation.
std::size_t param_budget(std::size_t num_datasets, std::size_t shared, std::size_t per_head);

struct ParameterReport {
  std::size_t shared = 0;       // N
  std::size_t per_head = 0;     // K
  std::size_t trainable = 0;    // N + (M-1)·K
  std::size_t literal = 0;      // N + M·K, counting a head for the anchor too
};

ParameterReport parameter_report(std::size_t shared, const GamBank& bank);

}  // namespace gazefusion
