#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazefusion/gam.hpp"
#include "gazefusion/synth.hpp"
#include "gazefusion/ttgf.hpp"

namespace gazefusion::train {

enum class Regime { Single, Mixed };
std::string regime_name(Regime r);  // single, mixed
Regime parse_regime(std::string_view name);

struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t warmup_steps = 500;
  double gamma = 0.96;  // per post-warmup epoch
  std::size_t epochs = 20;
  std::size_t steps = 0;  // > 0 fixes the update count; epochs then only bound the schedule
  std::size_t batch_size = 64;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Regime regime = Regime::Mixed;
  bool gam_enabled = true;
  GamMode gam_mode = GamMode::Mlp;
  // Keeps zero-initialised heads in the forward pass without training them.
  bool gam_frozen = false;
  std::string dataset;  // single regime: the dataset to train on
  std::size_t eval_every = 1;  // epochs between held-out evaluations (0: only at the end)
  std::size_t eval_batch = 128;
  ModelConfig model = ModelConfig::toy();

  void validate() const;  // throws ConfigError
  bool uses_gam() const { return regime == Regime::Mixed && (gam_enabled || gam_frozen); }

  std::string to_text() const;
  static TrainConfig from_text(std::string_view text, const std::string& source = "<train config>");
  static TrainConfig load(const std::filesystem::path& path);
  bool apply(const kv::Entry& e, const std::string& source);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear ramp 0 -> lr0 over warmup_steps (lr_at(0) == 0, lr_at(warmup) == lr0),
// then lr0·gamma^(completed post-warmup epochs). Update number t (1-based)
// runs at lr_at(t).
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch);

// Mean |pred - label| over both components and the batch.
Tensor l1_loss(const Tensor& pred, const Tensor& label);
double l1_loss(std::span<const GazeAngles> pred, std::span<const GazeAngles> label);

struct AdamWOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
};

// Moments and step counts per parameter, aligned with the NamedTensors it was created for.
struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<double>> m, v;
  std::vector<std::size_t> param_steps;
  std::size_t step = 0;

  static AdamWState create(const NamedTensors& params, AdamWOptions options);
};

// One decoupled-weight-decay Adam update from the gradients stored on `params`.
// Parameters without a gradient buffer (no path to the loss) are left alone.
void adamw_step(AdamWState& state, const NamedTensors& params, double lr);

struct Batch {
  Tensor face, left, right;  // [B×H×W×C]
  Tensor labels;             // [B×2]
  std::vector<std::size_t> dataset_ids;
};

// `datasets[e.dataset]` supplies each entry's sample.
Batch make_batch(std::span<const synth::Dataset* const> datasets, std::span<const synth::BatchEntry> entries);

struct StepStats {
  double loss = 0.0;
  double angular_error_deg = 0.0;  // batch mean against labels
};

// Model, optional adaptation bank and optimiser state for one run.
class Trainer {
 public:
  // num_datasets > 0 builds an adaptation bank with that many heads.
  Trainer(const TrainConfig& cfg, std::size_t num_datasets);

  StepStats step(const Batch& batch, double lr);

  const GazeModel& model() const { return model_; }
  GazeModel& model() { return model_; }
  const GamBank* gam() const { return gam_ ? &*gam_ : nullptr; }
  GamBank* gam() { return gam_ ? &*gam_ : nullptr; }
  const NamedTensors& trainable() const { return trainable_; }
  NamedTensors all_parameters() const;  // shared then adaptation heads
  const AdamWState& optimizer() const { return adam_; }

 private:
  TrainConfig cfg_;
  GazeModel model_;
  std::optional<GamBank> gam_;
  NamedTensors trainable_;
  AdamWState adam_;
};

// Same seeds, same construction order as Trainer, so checkpoints load by name.
GamBank make_gam_bank(const TrainConfig& cfg, std::size_t num_datasets);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;    // train, test
  std::string dataset;  // dataset name, or "all" for mixed training rows
  double angular_error_deg = 0.0;
  double loss = 0.0;
  double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

struct EvalResult {
  std::string dataset;
  std::size_t dataset_id = 0;
  std::size_t count = 0;
  bool used_gam = false;
  double error_label_deg = 0.0;  // output vs the dataset's labels
  double error_true_deg = 0.0;   // output vs rendered gaze
  double raw_error_label_deg = 0.0;  // adaptation removed
  double raw_error_true_deg = 0.0;
  double loss = 0.0;
  double mean_offset_deg = 0.0;  // mean |ĝ - g| over (yaw, pitch)
  // Share of the label corruption (label - true) reproduced by the offset:
  // Σ (ĝ-g)·(label-true) / Σ |label-true|²; 0 when labels are clean.
  double absorption = 0.0;
};

// Held-out split of `ds`. With use_gam the output is routed through the
// dataset's head (anchor rows unchanged).
EvalResult evaluate(const GazeModel& model, const GamBank* gam, const synth::Dataset& ds, bool use_gam,
                    std::size_t batch_size = 128);
EvalResult evaluate_indices(const GazeModel& model, const GamBank* gam, const synth::Dataset& ds, bool use_gam,
                            std::span<const std::size_t> indices, std::size_t batch_size = 128);

// Mean angular error in degrees between paired predictions and labels.
double mean_angular_error(std::span<const GazeAngles> pred, std::span<const GazeAngles> label);

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::vector<double> step_losses;
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  std::vector<EvalResult> final_eval;  // one per trained dataset, adaptation applied when enabled
  std::vector<EvalResult> final_eval_raw;
  ParameterReport parameters;
};

// Runs training and, if `out_dir` is set, writes metrics.csv, summary.json,
// checkpoint.gzf, config.txt and run_manifest.txt there.
TrainResult train_run(const TrainConfig& cfg, std::span<const synth::Dataset> datasets,
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Datasets a config trains on, in dataset-id order.
std::vector<const synth::Dataset*> select_datasets(const TrainConfig& cfg, std::span<const synth::Dataset> datasets);

struct LoadedRun {
  TrainConfig config;
  GazeModel model;
  std::optional<GamBank> gam;
};

// Rebuilds model and heads from a run directory (config.txt + checkpoint.gzf).
LoadedRun load_run(const std::filesystem::path& run_dir);

}  // namespace gazefusion::train
