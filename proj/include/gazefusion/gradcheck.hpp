#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gazefusion/serialize.hpp"
#include "gazefusion/ttgf.hpp"

// Central finite-difference verification of reverse-mode gradients.
namespace gazefusion::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;  // on the relative error below
  // Relative error per entry is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every entry; otherwise a seeded random subset of this size per tensor.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct TensorReport {
  std::string name;
  std::size_t checked = 0, total = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct Report {
  std::vector<TensorReport> tensors;
  double max_rel_error = 0.0;
  bool passed = true;

  void merge(const Report& other, const std::string& prefix = "");
};

// Differentiates loss_fn() (a scalar) with respect to every tensor in `inputs`
// on a fresh tape and compares against central differences of loss_fn()
// evaluated without a tape. Input values are restored afterwards.
Report check(const std::function<Tensor()>& loss_fn, const NamedTensors& inputs, const Options& options);

// One check per differentiable op and layer, named after it.
Report check_ops(const Options& options);

// Full estimator plus adaptation bank with `num_datasets` heads. Heads get
// random (non-zero) output layers so their gradients are exercised; the batch
// routes rows through every dataset, anchor included.
Report check_model(const ModelConfig& cfg, std::size_t num_datasets, const Options& options,
                   std::uint64_t seed = 0);

// Fixed-width text table: name, checked/total, max rel, max abs, PASS/FAIL.
std::string format_report(const Report& report);

}  // namespace gazefusion::gradcheck
