#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gazefusion/synth.hpp"
#include "gazefusion/tensor.hpp"
#include "gazefusion/train.hpp"

namespace testutil {

inline gazefusion::Tensor random_tensor(gazefusion::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(gazefusion::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return gazefusion::Tensor::from_data(std::move(shape), std::move(v));
}

inline gazefusion::Tensor random_param(gazefusion::Shape shape, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(shape), rng);
  return gazefusion::Tensor::parameter(t.shape(), {t.data().begin(), t.data().end()});
}

// Small datasets sized for ModelConfig::tiny() (8 px faces and eyes).
inline std::vector<gazefusion::synth::DatasetSpec> tiny_specs(std::size_t count, std::uint64_t seed = 11) {
  auto specs = gazefusion::synth::default_specs(seed);
  specs.resize(count);
  for (auto& s : specs) {
    s.num_subjects = 4;
    s.samples_per_subject = 20;
    s.face_size = 8;
    s.eye_size = 8;
  }
  return specs;
}

inline std::vector<gazefusion::synth::Dataset> tiny_datasets(std::size_t count, std::uint64_t seed = 11) {
  std::vector<gazefusion::synth::Dataset> out;
  for (const auto& s : tiny_specs(count, seed)) out.push_back(gazefusion::synth::generate(s));
  return out;
}

inline gazefusion::train::TrainConfig tiny_config() {
  gazefusion::train::TrainConfig cfg;
  cfg.model = gazefusion::ModelConfig::tiny();
  cfg.lr0 = 3e-3;
  cfg.warmup_steps = 5;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.eval_batch = 64;
  return cfg;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gazefusion_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
