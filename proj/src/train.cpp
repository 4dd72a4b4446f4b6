#include "gazefusion/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gazefusion/hash.hpp"
#include "gazefusion/ops.hpp"
#include "gazefusion/serialize.hpp"
#include "gazefusion/tape.hpp"

namespace gazefusion::train {

namespace {

constexpr std::uint64_t kGamSeedSalt = 0x6a09e667f3bcc909ULL;
constexpr std::uint64_t kSamplerSeedSalt = 0xbb67ae8584caa73bULL;
constexpr const char* kVersionTag = "gazefusion-0.1.0";

std::vector<GazeAngles> rows_to_angles(const Tensor& t) {
  std::vector<GazeAngles> out(t.dim(0));
  const auto& d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {d[2 * i], d[2 * i + 1]};
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::string regime_name(Regime r) { return r == Regime::Single ? "single" : "mixed"; }

Regime parse_regime(std::string_view name) {
  if (name == "single") return Regime::Single;
  if (name == "mixed") return Regime::Mixed;
  throw ConfigError("unknown regime '" + std::string(name) + "' (expected single or mixed)");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (epochs == 0 && steps == 0) throw ConfigError("epochs or steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("AdamW betas must lie in [0,1) and eps must be positive");
  }
  if (eval_batch == 0) throw ConfigError("eval_batch must be positive");
  if (regime == Regime::Single) {
    if (dataset.empty()) throw ConfigError("the single regime needs a dataset name");
    if (gam_enabled || gam_frozen) throw ConfigError("adaptation heads need the mixed regime (set gam=off)");
  }
  model.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "lr0=" << kv::format_double(lr0) << "\n"
      << "warmup_steps=" << warmup_steps << "\n"
      << "gamma=" << kv::format_double(gamma) << "\n"
      << "epochs=" << epochs << "\n"
      << "steps=" << steps << "\n"
      << "batch_size=" << batch_size << "\n"
      << "weight_decay=" << kv::format_double(weight_decay) << "\n"
      << "beta1=" << kv::format_double(beta1) << "\n"
      << "beta2=" << kv::format_double(beta2) << "\n"
      << "adam_eps=" << kv::format_double(adam_eps) << "\n"
      << "seed=" << seed << "\n"
      << "regime=" << regime_name(regime) << "\n"
      << "gam=" << (gam_enabled ? "on" : "off") << "\n"
      << "gam_mode=" << gam_mode_name(gam_mode) << "\n"
      << "gam_frozen=" << (gam_frozen ? "on" : "off") << "\n";
  if (!dataset.empty()) out << "dataset=" << dataset << "\n";
  out << "eval_every=" << eval_every << "\n"
      << "eval_batch=" << eval_batch << "\n"
      << model.to_text();
  return out.str();
}

bool TrainConfig::apply(const kv::Entry& e, const std::string& source) {
  const std::string& k = e.key;
  try {
    if (k == "lr0") {
      lr0 = kv::to_double(e, source);
    } else if (k == "warmup_steps") {
      warmup_steps = kv::to_size(e, source);
    } else if (k == "gamma") {
      gamma = kv::to_double(e, source);
    } else if (k == "epochs") {
      epochs = kv::to_size(e, source);
    } else if (k == "steps") {
      steps = kv::to_size(e, source);
    } else if (k == "batch_size") {
      batch_size = kv::to_size(e, source);
    } else if (k == "weight_decay") {
      weight_decay = kv::to_double(e, source);
    } else if (k == "beta1") {
      beta1 = kv::to_double(e, source);
    } else if (k == "beta2") {
      beta2 = kv::to_double(e, source);
    } else if (k == "adam_eps") {
      adam_eps = kv::to_double(e, source);
    } else if (k == "seed") {
      seed = kv::to_u64(e, source);
    } else if (k == "regime") {
      regime = parse_regime(e.value);
    } else if (k == "gam") {
      gam_enabled = kv::to_bool(e, source);
    } else if (k == "gam_mode") {
      gam_mode = parse_gam_mode(e.value);
    } else if (k == "gam_frozen") {
      gam_frozen = kv::to_bool(e, source);
    } else if (k == "dataset") {
      dataset = e.value;
    } else if (k == "eval_every") {
      eval_every = kv::to_size(e, source);
    } else if (k == "eval_batch") {
      eval_batch = kv::to_size(e, source);
    } else {
      return model.apply(e, source);
    }
  } catch (const ConfigError& err) {
    const std::string what = err.what();
    if (what.rfind(source + ":", 0) == 0) throw;
    kv::fail(e, source, what);
  }
  return true;
}

TrainConfig TrainConfig::from_text(std::string_view text, const std::string& source) {
  const kv::Document doc = kv::parse(text, source);
  TrainConfig cfg;
  for (const auto& e : doc.entries) {
    if (!cfg.apply(e, source)) kv::fail(e, source, "unknown config key '" + e.key + "'");
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path.string());
}

double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
  if (step < cfg.warmup_steps) {
    return cfg.lr0 * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::size_t spe = std::max<std::size_t>(steps_per_epoch, 1);
  const std::size_t completed = (step - cfg.warmup_steps) / spe;
  return cfg.lr0 * std::pow(cfg.gamma, static_cast<double>(completed));
}

Tensor l1_loss(const Tensor& pred, const Tensor& label) {
  if (pred.shape() != label.shape()) {
    throw DimensionError("l1_loss: prediction " + shape_str(pred.shape()) + " vs label " + shape_str(label.shape()));
  }
  return mean(abs(sub(pred, label)));
}

double l1_loss(std::span<const GazeAngles> pred, std::span<const GazeAngles> label) {
  if (pred.empty()) throw std::invalid_argument("l1_loss: empty batch");
  if (pred.size() != label.size()) throw DimensionError("l1_loss: batch sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total += std::abs(pred[i].yaw - label[i].yaw) + std::abs(pred[i].pitch - label[i].pitch);
  }
  return total / static_cast<double>(2 * pred.size());
}

AdamWState AdamWState::create(const NamedTensors& params, AdamWOptions options) {
  AdamWState s;
  s.options = options;
  for (const auto& [name, t] : params) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
    s.param_steps.push_back(0);
  }
  return s;
}

void adamw_step(AdamWState& state, const NamedTensors& params, double lr) {
  if (params.size() != state.m.size()) {
    throw DimensionError("adamw_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  const AdamWOptions& o = state.options;
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    if (!p.has_grad()) continue;
    const std::span<const double> g = p.grad();
    const std::span<double> w = p.mutable_data();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
      throw DimensionError("adamw_step: shape mismatch for " + params[i].first);
    }
    const std::size_t t = ++state.param_steps[i];
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
    const double decay = 1.0 - lr * o.weight_decay;
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] *= decay;
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

Batch make_batch(std::span<const synth::Dataset* const> datasets, std::span<const synth::BatchEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("empty batch");
  std::vector<const Image*> faces, lefts, rights;
  std::vector<double> labels;
  Batch b;
  for (const auto& e : entries) {
    if (e.dataset >= datasets.size()) throw std::out_of_range("batch entry names an unknown dataset");
    const synth::Dataset& ds = *datasets[e.dataset];
    const synth::Sample& s = ds.samples.at(e.sample);
    faces.push_back(&s.face);
    lefts.push_back(&s.left_eye);
    rights.push_back(&s.right_eye);
    labels.push_back(s.label.yaw);
    labels.push_back(s.label.pitch);
    b.dataset_ids.push_back(ds.spec.dataset_id);
  }
  b.face = stack_images(faces);
  b.left = stack_images(lefts);
  b.right = stack_images(rights);
  b.labels = Tensor::from_data({entries.size(), 2}, std::move(labels));
  return b;
}

GamBank make_gam_bank(const TrainConfig& cfg, std::size_t num_datasets) {
  nn::Rng rng(cfg.seed ^ kGamSeedSalt);
  return GamBank::create(num_datasets, cfg.model.fused_dim(), cfg.model.gam_hidden, cfg.gam_mode, rng);
}

Trainer::Trainer(const TrainConfig& cfg, std::size_t num_datasets)
    : cfg_(cfg), model_(GazeModel::create(cfg.model, cfg.seed)) {
  trainable_ = model_.parameters();
  if (num_datasets > 0) {
    gam_ = make_gam_bank(cfg, num_datasets);
    if (cfg.gam_frozen) {
      gam_->zero_heads();
      for (auto& [name, t] : gam_->parameters()) {
        Tensor handle = t;
        handle.set_requires_grad(false);
      }
    } else {
      NamedTensors heads = gam_->parameters();
      trainable_.insert(trainable_.end(), heads.begin(), heads.end());
    }
  }
  adam_ = AdamWState::create(trainable_, {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
}

NamedTensors Trainer::all_parameters() const {
  NamedTensors out = model_.parameters();
  if (gam_) {
    NamedTensors heads = gam_->parameters();
    out.insert(out.end(), heads.begin(), heads.end());
  }
  return out;
}

StepStats Trainer::step(const Batch& batch, double lr) {
  StepStats stats;
  Tensor pred;
  {
    Tape tape;
    TapeScope scope(tape);
    ForwardResult r = model_.forward(batch.face, batch.left, batch.right);
    pred = gam_ ? gam_->correct(r.gaze, r.fused, batch.dataset_ids) : r.gaze;
    Tensor loss = l1_loss(pred, batch.labels);
    stats.loss = loss.item();
    backward(loss);
  }
  adamw_step(adam_, trainable_, lr);
  for (auto& [name, t] : trainable_) {
    Tensor handle = t;
    handle.clear_grad();
  }
  stats.angular_error_deg = mean_angular_error(rows_to_angles(pred), rows_to_angles(batch.labels));
  return stats;
}

std::string metrics_csv_header() { return "epoch,split,dataset,angular_error_deg,loss,lr"; }

std::string metrics_csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + r.dataset + "," + kv::format_double(r.angular_error_deg) +
         "," + kv::format_double(r.loss) + "," + kv::format_double(r.lr);
}

double mean_angular_error(std::span<const GazeAngles> pred, std::span<const GazeAngles> label) {
  if (pred.size() != label.size()) throw DimensionError("mean_angular_error: sizes differ");
  if (pred.empty()) throw std::invalid_argument("mean_angular_error: no samples");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += angular_error_deg(pred[i], label[i]);
  return total / static_cast<double>(pred.size());
}

EvalResult evaluate_indices(const GazeModel& model, const GamBank* gam, const synth::Dataset& ds, bool use_gam,
                            std::span<const std::size_t> indices, std::size_t batch_size) {
  if (use_gam && gam == nullptr) throw ConfigError("evaluation with adaptation requested but the run has no heads");
  if (indices.empty()) throw std::invalid_argument("dataset '" + ds.spec.name + "' has no samples to evaluate");
  if (batch_size == 0) batch_size = 1;
  EvalResult r;
  r.dataset = ds.spec.name;
  r.dataset_id = ds.spec.dataset_id;
  r.count = indices.size();
  r.used_gam = use_gam;
  std::vector<GazeAngles> raw, corrected, labels, truths;
  const synth::Dataset* list[] = {&ds};
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    std::vector<synth::BatchEntry> entries;
    for (std::size_t i = 0; i < n; ++i) entries.push_back({0, indices[start + i]});
    Batch b = make_batch(list, entries);
    ForwardResult f = model.forward(b.face, b.left, b.right);
    Tensor out = use_gam ? gam->correct(f.gaze, f.fused, b.dataset_ids) : f.gaze;
    for (const auto& a : rows_to_angles(f.gaze)) raw.push_back(a);
    for (const auto& a : rows_to_angles(out)) corrected.push_back(a);
    for (std::size_t i = 0; i < n; ++i) {
      const synth::Sample& s = ds.samples[indices[start + i]];
      labels.push_back(s.label);
      truths.push_back(s.true_gaze);
    }
  }
  r.error_label_deg = mean_angular_error(corrected, labels);
  r.error_true_deg = mean_angular_error(corrected, truths);
  r.raw_error_label_deg = mean_angular_error(raw, labels);
  r.raw_error_true_deg = mean_angular_error(raw, truths);
  r.loss = l1_loss(corrected, labels);
  double offset = 0.0, projected = 0.0, corruption = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double dy = corrected[i].yaw - raw[i].yaw, dp = corrected[i].pitch - raw[i].pitch;
    const double by = labels[i].yaw - truths[i].yaw, bp = labels[i].pitch - truths[i].pitch;
    offset += std::hypot(dy, dp);
    projected += dy * by + dp * bp;
    corruption += by * by + bp * bp;
  }
  r.mean_offset_deg = rad_to_deg(offset / static_cast<double>(raw.size()));
  r.absorption = corruption > 0.0 ? projected / corruption : 0.0;
  return r;
}

EvalResult evaluate(const GazeModel& model, const GamBank* gam, const synth::Dataset& ds, bool use_gam,
                    std::size_t batch_size) {
  const std::vector<std::size_t> idx = ds.test_indices();
  return evaluate_indices(model, gam, ds, use_gam, idx, batch_size);
}

std::vector<const synth::Dataset*> select_datasets(const TrainConfig& cfg, std::span<const synth::Dataset> datasets) {
  std::vector<const synth::Dataset*> out;
  if (cfg.regime == Regime::Single) {
    for (const auto& d : datasets) {
      if (d.spec.name == cfg.dataset) out.push_back(&d);
    }
    if (out.empty()) throw ConfigError("dataset '" + cfg.dataset + "' not found");
    return out;
  }
  std::vector<synth::DatasetSpec> specs;
  for (const auto& d : datasets) {
    out.push_back(&d);
    specs.push_back(d.spec);
  }
  synth::validate_collection(specs);
  std::sort(out.begin(), out.end(),
            [](const synth::Dataset* a, const synth::Dataset* b) { return a->spec.dataset_id < b->spec.dataset_id; });
  return out;
}

TrainResult train_run(const TrainConfig& cfg, std::span<const synth::Dataset> datasets,
                      const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::vector<const synth::Dataset*> used = select_datasets(cfg, datasets);
  for (const auto* d : used) {
    if (d->spec.face_size != cfg.model.face_size || d->spec.eye_size != cfg.model.eye_size ||
        d->spec.channels != cfg.model.image_channels) {
      throw ConfigError("dataset '" + d->spec.name + "' image sizes do not match the model config");
    }
  }
  std::vector<std::vector<std::size_t>> pools;
  for (const auto* d : used) pools.push_back(d->train_indices());
  synth::MixedBatchSampler sampler(pools, cfg.batch_size, cfg.seed ^ kSamplerSeedSalt);

  Trainer trainer(cfg, cfg.uses_gam() ? used.size() : 0);
  const bool use_gam = trainer.gam() != nullptr;

  TrainResult result;
  result.steps_per_epoch = sampler.batches_per_epoch();
  const std::size_t total = cfg.steps > 0 ? cfg.steps : cfg.epochs * result.steps_per_epoch;
  const std::size_t num_epochs = (total + result.steps_per_epoch - 1) / result.steps_per_epoch;
  const std::string train_label = cfg.regime == Regime::Mixed ? "all" : used.front()->spec.name;

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= num_epochs; ++epoch) {
    double loss_sum = 0.0, err_sum = 0.0, lr = 0.0;
    std::size_t batches = 0;
    for (const auto& entries : sampler.next_epoch()) {
      if (step == total) break;
      ++step;
      lr = lr_at(cfg, step, result.steps_per_epoch);
      const StepStats s = trainer.step(make_batch(used, entries), lr);
      if (!std::isfinite(s.loss)) throw std::runtime_error("training diverged at step " + std::to_string(step));
      result.step_losses.push_back(s.loss);
      loss_sum += s.loss;
      err_sum += s.angular_error_deg;
      ++batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    result.metrics.push_back({epoch, "train", train_label, err_sum / nb, loss_sum / nb, lr});
    const bool last = epoch == num_epochs;
    if (last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)) {
      for (const auto* d : used) {
        const EvalResult e = evaluate(trainer.model(), trainer.gam(), *d, use_gam, cfg.eval_batch);
        result.metrics.push_back({epoch, "test", d->spec.name, e.error_label_deg, e.loss, lr});
        if (last) {
          result.final_eval.push_back(e);
          result.final_eval_raw.push_back(
              use_gam ? evaluate(trainer.model(), trainer.gam(), *d, false, cfg.eval_batch) : e);
        }
      }
    }
  }
  result.steps = step;
  const std::size_t shared = trainer.model().parameter_count();
  if (trainer.gam()) {
    result.parameters = parameter_report(shared, *trainer.gam());
  } else {
    result.parameters = {shared, 0, shared, shared};
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::string csv = metrics_csv_header() + "\n";
    for (const auto& r : result.metrics) csv += metrics_csv_row(r) + "\n";
    write_text(*out_dir / "metrics.csv", csv);
    write_text(*out_dir / "config.txt", cfg.to_text());
    save_tensors(*out_dir / "checkpoint.gzf", trainer.all_parameters());

    nlohmann::ordered_json summary;
    summary["version"] = kVersionTag;
    summary["regime"] = regime_name(cfg.regime);
    summary["gam"] = use_gam && !cfg.gam_frozen;
    summary["topology"] = topology_name(cfg.model.topology);
    summary["seed"] = cfg.seed;
    summary["steps"] = result.steps;
    summary["steps_per_epoch"] = result.steps_per_epoch;
    summary["final_train_loss"] = result.step_losses.empty() ? 0.0 : result.step_losses.back();
    summary["parameters"] = {{"shared", result.parameters.shared},
                             {"per_head", result.parameters.per_head},
                             {"trainable", result.parameters.trainable},
                             {"literal", result.parameters.literal}};
    nlohmann::ordered_json finals = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < result.final_eval.size(); ++i) {
      const EvalResult& e = result.final_eval[i];
      finals.push_back({{"dataset", e.dataset},
                        {"dataset_id", e.dataset_id},
                        {"count", e.count},
                        {"angular_error_deg", e.error_label_deg},
                        {"angular_error_true_deg", e.error_true_deg},
                        {"raw_angular_error_deg", result.final_eval_raw[i].error_label_deg},
                        {"raw_angular_error_true_deg", result.final_eval_raw[i].error_true_deg},
                        {"mean_offset_deg", e.mean_offset_deg},
                        {"absorption", e.absorption}});
    }
    summary["final"] = finals;
    nlohmann::ordered_json hashes = nlohmann::ordered_json::object();
    for (const auto* d : used) hashes[d->spec.name] = d->manifest_sha256;
    summary["dataset_hashes"] = hashes;
    summary["config"] = cfg.to_text();
    write_text(*out_dir / "summary.json", summary.dump(2) + "\n");

    std::ostringstream manifest;
    manifest << "# run manifest\nversion=" << kVersionTag << "\nseed=" << cfg.seed << "\n";
    for (const auto* d : used) manifest << "dataset=" << d->spec.name << "," << d->manifest_sha256 << "\n";
    manifest << "metrics=metrics.csv\nsummary=summary.json\ncheckpoint=checkpoint.gzf\nconfig=config.txt\n"
             << "metrics_sha256=" << sha256_hex(csv) << "\n"
             << "[config]\n"
             << cfg.to_text();
    write_text(*out_dir / "run_manifest.txt", manifest.str());
  }
  return result;
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
  const auto cfg_path = run_dir / "config.txt";
  const auto ckpt_path = run_dir / "checkpoint.gzf";
  if (!std::filesystem::exists(cfg_path)) throw std::runtime_error("missing " + cfg_path.string());
  if (!std::filesystem::exists(ckpt_path)) throw std::runtime_error("missing " + ckpt_path.string());
  TrainConfig cfg = TrainConfig::load(cfg_path);
  NamedTensors stored = load_tensors(ckpt_path);
  std::size_t heads = 0;
  for (const auto& [name, t] : stored) {
    if (name.rfind("gam.head", 0) == 0) {
      const std::size_t id = std::stoul(name.substr(8, name.find('.', 8) - 8));
      heads = std::max(heads, id + 1);
    }
  }
  LoadedRun run{cfg, GazeModel::create(cfg.model, cfg.seed), std::nullopt};
  NamedTensors dest = run.model.parameters();
  if (cfg.uses_gam()) {
    if (heads == 0) throw std::runtime_error(ckpt_path.string() + " has no adaptation heads");
    run.gam = make_gam_bank(cfg, heads);
    NamedTensors h = run.gam->parameters();
    dest.insert(dest.end(), h.begin(), h.end());
  }
  assign_tensors(stored, dest);
  return run;
}

}  // namespace gazefusion::train
