#include "gazefusion/gam.hpp"

#include <map>
#include <stdexcept>

#include "gazefusion/ops.hpp"

namespace gazefusion {

std::string gam_mode_name(GamMode m) { return m == GamMode::Mlp ? "mlp" : "constant"; }

GamMode parse_gam_mode(const std::string& name) {
  if (name == "mlp") return GamMode::Mlp;
  if (name == "constant") return GamMode::ConstantBias;
  throw ConfigError("unknown gam mode '" + name + "' (expected mlp or constant)");
}

GamBank GamBank::create(std::size_t num_datasets, std::size_t feature_dim, std::size_t hidden, GamMode mode,
                        nn::Rng& rng) {
  if (num_datasets == 0) throw ConfigError("adaptation bank needs at least the anchor dataset");
  GamBank bank;
  bank.num_datasets_ = num_datasets;
  bank.feature_dim_ = feature_dim;
  bank.hidden_ = hidden;
  bank.mode_ = mode;
  for (std::size_t i = 1; i < num_datasets; ++i) {
    Head h;
    if (mode == GamMode::Mlp) {
      h.fc1 = nn::LinearLayer::create(feature_dim, hidden, rng);
      h.fc2 = nn::LinearLayer::create(hidden, 2, rng);
      h.fc2.zero();
    } else {
      h.bias = Tensor::parameter({2}, {0.0, 0.0});
    }
    bank.heads_.push_back(std::move(h));
  }
  return bank;
}

void GamBank::check_id(std::size_t dataset_id) const {
  if (dataset_id >= num_datasets_) {
    throw std::out_of_range("dataset id " + std::to_string(dataset_id) + " out of range for " +
                            std::to_string(num_datasets_) + " datasets");
  }
}

const GamBank::Head& GamBank::head(std::size_t dataset_id) const { return heads_.at(dataset_id - 1); }

Tensor GamBank::offsets(std::size_t dataset_id, const Tensor& fused) const {
  check_id(dataset_id);
  if (fused.rank() != 2 || fused.dim(1) != feature_dim_) {
    throw DimensionError("adaptation heads take [B×" + std::to_string(feature_dim_) + "] features, got " +
                         shape_str(fused.shape()));
  }
  if (dataset_id == 0) return Tensor::zeros({fused.dim(0), 2});
  const Head& h = head(dataset_id);
  if (mode_ == GamMode::ConstantBias) return add_bias(Tensor::zeros({fused.dim(0), 2}), h.bias);
  return h.fc2.forward(gelu(h.fc1.forward(fused)));
}

GazeAngles GamBank::gam_offset(std::size_t dataset_id, std::span<const double> fused) const {
  check_id(dataset_id);
  if (dataset_id == 0) return {0.0, 0.0};
  Tensor f = Tensor::from_data({1, fused.size()}, std::vector<double>(fused.begin(), fused.end()));
  Tensor o = offsets(dataset_id, f);
  return {o.at(0), o.at(1)};
}

Tensor GamBank::correct(const Tensor& gaze, const Tensor& fused, std::span<const std::size_t> dataset_ids) const {
  if (gaze.rank() != 2 || gaze.dim(1) != 2 || fused.rank() != 2 || fused.dim(0) != gaze.dim(0) ||
      dataset_ids.size() != gaze.dim(0)) {
    throw DimensionError("correct: gaze " + shape_str(gaze.shape()) + ", features " + shape_str(fused.shape()) +
                         " and " + std::to_string(dataset_ids.size()) + " dataset ids do not line up");
  }
  std::map<std::size_t, std::vector<std::size_t>> rows_by_id;
  for (std::size_t r = 0; r < dataset_ids.size(); ++r) {
    check_id(dataset_ids[r]);
    if (dataset_ids[r] != 0) rows_by_id[dataset_ids[r]].push_back(r);
  }
  std::vector<Tensor> parts;
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [id, rows] : rows_by_id) {
    parts.push_back(offsets(id, gather_rows(fused, rows)));
    groups.push_back(std::move(rows));
  }
  return add_scattered_rows(gaze, parts, groups);
}

std::size_t GamBank::head_parameter_count() const {
  if (mode_ == GamMode::ConstantBias) return 2;
  return nn::LinearLayer::parameter_count(feature_dim_, hidden_) + nn::LinearLayer::parameter_count(hidden_, 2);
}

NamedTensors GamBank::head_parameters(std::size_t dataset_id) const {
  check_id(dataset_id);
  NamedTensors out;
  if (dataset_id == 0) return out;
  const Head& h = head(dataset_id);
  const std::string prefix = "gam.head" + std::to_string(dataset_id);
  if (mode_ == GamMode::ConstantBias) {
    out.emplace_back(prefix + ".bias", h.bias);
  } else {
    h.fc1.collect(out, prefix + ".fc1");
    h.fc2.collect(out, prefix + ".fc2");
  }
  return out;
}

NamedTensors GamBank::parameters() const {
  NamedTensors out;
  for (std::size_t i = 1; i < num_datasets_; ++i) {
    NamedTensors h = head_parameters(i);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

void GamBank::zero_heads() {
  for (auto& [name, t] : parameters()) {
    Tensor handle = t;
    for (double& v : handle.mutable_data()) v = 0.0;
  }
}

std::size_t param_budget(std::size_t num_datasets, std::size_t shared, std::size_t per_head) {
  if (num_datasets == 0) throw ConfigError("param_budget needs at least one dataset");
  return shared + (num_datasets - 1) * per_head;
}

ParameterReport parameter_report(std::size_t shared, const GamBank& bank) {
  ParameterReport r;
  r.shared = shared;
  r.per_head = bank.head_parameter_count();
  r.trainable = param_budget(bank.num_datasets(), shared, r.per_head);
  r.literal = shared + bank.num_datasets() * r.per_head;
  return r;
}

}  // namespace gazefusion
