// Acceptance suite: one PASS/FAIL line per numbered criterion.
//
//   acceptance [--only 1,5,...] [--work-dir DIR] [--cli PATH]
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "gazefusion/cli.hpp"
#include "gazefusion/gradcheck.hpp"
#include "gazefusion/hash.hpp"
#include "gazefusion/ops.hpp"
#include "gazefusion/synth.hpp"
#include "gazefusion/train.hpp"

using namespace gazefusion;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work_dir;
  std::string cli_binary;  // empty: run the CLI in-process
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

void randomize(const NamedTensors& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto& [name, t] : params)
    for (double& v : Tensor(t).mutable_data()) v = u(rng);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Shared training settings: equal optimizer-step budgets across regimes.
train::TrainConfig base_config(std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.model = ModelConfig::toy();
  cfg.lr0 = 1e-3;
  cfg.warmup_steps = 100;
  cfg.steps = 600;
  cfg.batch_size = 64;
  cfg.eval_every = 0;
  cfg.seed = seed;
  return cfg;
}

std::vector<synth::Dataset> default_datasets() {
  std::vector<synth::Dataset> out;
  for (const auto& s : synth::default_specs()) out.push_back(synth::generate(s));
  return out;
}

// ---------------------------------------------------------------------------

Outcome criterion_gradcheck(const Context&) {
  const auto t0 = Clock::now();
  gradcheck::Options opt;  // step 1e-5, tolerance 1e-4
  gradcheck::Report ops = gradcheck::check_ops(opt);
  gradcheck::Report tiny = gradcheck::check_model(ModelConfig::tiny(), 4, opt, 1);
  gradcheck::Options sampled = opt;
  sampled.max_entries = 64;
  gradcheck::Report toy = gradcheck::check_model(ModelConfig::toy(), 4, sampled, 2);
  const double secs = seconds_since(t0);
  std::size_t checked = 0;
  for (const auto* r : {&ops, &tiny, &toy})
    for (const auto& t : r->tensors) checked += t.checked;
  const double worst = std::max({ops.max_rel_error, tiny.max_rel_error, toy.max_rel_error});
  Outcome o;
  o.pass = ops.passed && tiny.passed && toy.passed && worst < 1e-4 && secs < 120.0;
  o.detail = std::to_string(ops.tensors.size()) + " op inputs, tiny model exhaustive, toy model " +
             std::to_string(toy.tensors.size()) + " tensors; " + std::to_string(checked) +
             " entries, max rel err " + fmt("%.2e", worst) + " (< 1e-4), " + fmt("%.1f", secs) + " s (< 120)";
  if (!o.pass) {
    for (const auto* r : {&ops, &tiny, &toy})
      for (const auto& t : r->tensors)
        if (!t.passed) o.detail += "; failed " + t.name;
  }
  return o;
}

Outcome criterion_anchor_invariance(const Context&) {
  const ModelConfig cfg = ModelConfig::toy();
  GazeModel model = GazeModel::create(cfg, 3);
  nn::Rng rng(4);
  GamBank bank = GamBank::create(4, cfg.fused_dim(), cfg.gam_hidden, GamMode::Mlp, rng);
  std::mt19937_64 drng(5);
  randomize(bank.parameters(), drng);
  std::size_t compared = 0, mismatches = 0;
  const std::size_t batch = 50;
  for (int b = 0; b < 20; ++b) {
    Tensor face = random_tensor({batch, cfg.face_size, cfg.face_size, 1}, drng, 0, 1);
    Tensor left = random_tensor({batch, cfg.eye_size, cfg.eye_size, 1}, drng, 0, 1);
    Tensor right = random_tensor({batch, cfg.eye_size, cfg.eye_size, 1}, drng, 0, 1);
    ForwardResult r = model.forward(face, left, right);
    // Anchor rows interleaved with other datasets' rows.
    std::vector<std::size_t> ids(batch);
    for (std::size_t i = 0; i < batch; ++i) ids[i] = (i % 2 == 0) ? 0 : 1 + (i / 2) % 3;
    Tensor mixed = bank.correct(r.gaze, r.fused, ids);
    std::vector<std::size_t> all_anchor(batch, 0);
    Tensor pure = bank.correct(r.gaze, r.fused, all_anchor);
    mismatches += !bitwise_equal(pure, r.gaze);
    for (std::size_t i = 0; i < batch; ++i) {
      if (ids[i] != 0) continue;
      mismatches += mixed.at(2 * i) != r.gaze.at(2 * i) || mixed.at(2 * i + 1) != r.gaze.at(2 * i + 1);
    }
    compared += batch;
  }
  return {mismatches == 0 && compared >= 1000,
          std::to_string(compared) + " random inputs, " + std::to_string(mismatches) + " bitwise mismatches"};
}

Outcome criterion_budget(const Context&) {
  train::TrainConfig cfg = base_config(0);
  train::Trainer trainer(cfg, 4);
  const std::size_t counted = count_parameters(trainer.trainable());
  const std::size_t n = expected_parameter_count(cfg.model);
  const std::size_t k = trainer.gam()->head_parameter_count();
  const std::size_t n_counted = trainer.model().parameter_count();
  const std::size_t closed = param_budget(4, n, k);
  const bool pass = counted == n + 3 * k && closed == counted && n_counted == n;
  return {pass, "M=4: N=" + std::to_string(n) + ", K=" + std::to_string(k) + ", counted " + std::to_string(counted) +
                    ", N+3K=" + std::to_string(n + 3 * k) + ", closed form " + std::to_string(closed) +
                    " (anchor-head count N+4K=" + std::to_string(n + 4 * k) + ")"};
}

Outcome criterion_eye_independence(const Context&) {
  const ModelConfig cfg = ModelConfig::toy();
  GazeModel model = GazeModel::create(cfg, 6);
  std::mt19937_64 rng(7);
  std::size_t failures = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    Tensor face = random_tensor({1, cfg.face_size, cfg.face_size, 1}, rng, 0, 1);
    Tensor left = random_tensor({1, cfg.eye_size, cfg.eye_size, 1}, rng, 0, 1);
    Tensor right = random_tensor({1, cfg.eye_size, cfg.eye_size, 1}, rng, 0, 1);
    Tensor other = random_tensor({1, cfg.eye_size, cfg.eye_size, 1}, rng, 0, 1);
    ForwardResult base = model.forward(face, left, right);
    ForwardResult right_changed = model.forward(face, left, other);
    ForwardResult left_changed = model.forward(face, other, right);
    failures += !bitwise_equal(base.left_head, right_changed.left_head);
    failures += !bitwise_equal(base.right_head, left_changed.right_head);
    // The perturbation must reach the other branch, otherwise the check is vacuous.
    failures += bitwise_equal(base.right_head, right_changed.right_head);
  }
  return {failures == 0, std::to_string(trials) + " trials per eye, " + std::to_string(failures) + " violations"};
}

Outcome criterion_offset_recovery(const Context&) {
  const auto t0 = Clock::now();
  std::vector<synth::Dataset> data;
  for (const auto& s : synth::default_specs()) {
    if (s.dataset_id <= 1) data.push_back(synth::generate(s));
  }
  const double injected = data[1].spec.rotation_deg;
  // Twenty epochs of the two-set mix is 300 updates; a shorter warmup and a
  // larger peak rate fit that budget.
  train::TrainConfig cfg = base_config(0);
  cfg.lr0 = 2e-3;
  cfg.warmup_steps = 50;
  cfg.steps = 0;
  cfg.epochs = 20;
  train::TrainResult r = train::train_run(cfg, data);
  const auto& e = r.final_eval[1];
  const double secs = seconds_since(t0);
  const bool pass = std::abs(e.mean_offset_deg - injected) <= 1.5 && e.absorption >= 0.6 && secs < 900.0;
  return {pass, "D1 (" + fmt("%.0f", injected) + " deg rotation), " + std::to_string(r.steps) + " steps / " +
                    std::to_string(cfg.epochs) + " epochs: mean offset " + fmt("%.2f", e.mean_offset_deg) +
                    " deg (5 +/- 1.5), absorption " + fmt("%.2f", e.absorption) + " (>= 0.60), true-gaze error " +
                    fmt("%.2f", e.raw_error_true_deg) + " raw -> " + fmt("%.2f", e.error_true_deg) +
                    " corrected, " + fmt("%.0f", secs) + " s (< 900)"};
}

Outcome criterion_mixing(const Context&) {
  const auto t0 = Clock::now();
  std::vector<synth::Dataset> data = default_datasets();
  const std::size_t m = data.size();
  // errors[variant][dataset] over seeds
  std::map<std::string, std::vector<std::vector<double>>> errors;
  for (const char* v : {"single", "mixed", "mixed+gam"}) errors[v].assign(m, {});
  for (std::uint64_t seed : {1, 2, 3}) {
    for (std::size_t d = 1; d < m; ++d) {
      train::TrainConfig cfg = base_config(seed);
      cfg.regime = train::Regime::Single;
      cfg.gam_enabled = false;
      cfg.dataset = data[d].spec.name;
      errors["single"][d].push_back(train::train_run(cfg, data).final_eval[0].error_label_deg);
    }
    for (bool gam : {false, true}) {
      train::TrainConfig cfg = base_config(seed);
      cfg.gam_enabled = gam;
      train::TrainResult r = train::train_run(cfg, data);
      for (std::size_t d = 1; d < m; ++d)
        errors[gam ? "mixed+gam" : "mixed"][d].push_back(r.final_eval[d].error_label_deg);
    }
  }
  bool pass = true;
  std::string detail = "median of 3 seeds (single / mixed / mixed+gam, deg):";
  for (std::size_t d = 1; d < m; ++d) {
    const double s = median(errors["single"][d]), mx = median(errors["mixed"][d]),
                 g = median(errors["mixed+gam"][d]);
    pass &= mx > s && g < mx;
    detail += " " + data[d].spec.name + " " + fmt("%.2f", s) + "/" + fmt("%.2f", mx) + "/" + fmt("%.2f", g);
  }
  detail += "; " + fmt("%.0f", seconds_since(t0)) + " s";
  return {pass, detail};
}

Outcome criterion_topologies(const Context&) {
  std::vector<synth::Dataset> data;
  data.push_back(synth::generate(synth::default_specs()[0]));
  bool pass = true;
  std::string detail;
  std::map<FusionTopology, double> final_error;
  for (auto topo : {FusionTopology::EhLr, FusionTopology::LrEh, FusionTopology::Par, FusionTopology::TwoEyes}) {
    train::TrainConfig cfg = base_config(0);
    cfg.regime = train::Regime::Single;
    cfg.gam_enabled = false;
    cfg.dataset = data[0].spec.name;
    cfg.steps = 200;
    cfg.model.topology = topo;
    train::TrainResult r = train::train_run(cfg, data);
    const auto& l = r.step_losses;
    bool finite = l.size() == 200;
    for (double x : l) finite &= std::isfinite(x);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      first += l[i] / 20;
      last += l[l.size() - 20 + i] / 20;
    }
    const bool ok = finite && last < first;
    pass &= ok;
    final_error[topo] = r.final_eval[0].error_label_deg;
    detail += topology_name(topo) + " loss " + fmt("%.3f", first) + "->" + fmt("%.3f", last) + (ok ? "" : " (!)") + "; ";
  }
  detail += "test error eh_lr " + fmt("%.2f", final_error[FusionTopology::EhLr]) + " vs lr_eh " +
            fmt("%.2f", final_error[FusionTopology::LrEh]) + " deg (reported only)";
  return {pass, detail};
}

int run_cli(const Context& ctx, const std::vector<std::string>& args) {
  if (ctx.cli_binary.empty()) {
    std::vector<std::string> full{"gazefusion"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    return cli::run(full, out, err);
  }
  std::string cmd = ctx.cli_binary;
  for (const auto& a : args) cmd += " '" + a + "'";
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_determinism(const Context& ctx) {
  std::vector<std::string> hashes;
  bool ok = true;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path root = ctx.work_dir / ("determinism_" + std::to_string(rep));
    fs::remove_all(root);
    const std::string data = (root / "data").string(), run = (root / "run").string();
    ok &= run_cli(ctx, {"gen-data", "--out-dir", data, "--seed", "5"}) == 0;
    ok &= run_cli(ctx, {"train", "--data-dir", data, "--out-dir", run, "--seed", "5", "--steps", "40"}) == 0;
    ok &= run_cli(ctx, {"eval", "--run-dir", run, "--data-dir", data}) == 0;
    if (!ok) break;
    hashes.push_back(sha256_file(fs::path(run) / "metrics.csv") + sha256_file(fs::path(run) / "eval.csv"));
  }
  const bool pass = ok && hashes.size() == 2 && hashes[0] == hashes[1];
  return {pass, ok ? "two gen-data/train/eval pipelines, metrics+eval hashes " +
                         std::string(pass ? "identical (" + hashes[0].substr(0, 12) + "...)" : "differ")
                   : "a pipeline command failed"};
}

Outcome criterion_batch_composition(const Context&) {
  std::vector<synth::Dataset> data = default_datasets();
  std::vector<std::vector<std::size_t>> pools;
  for (const auto& d : data) pools.push_back(d.train_indices());
  const std::size_t b = 64, m = pools.size();
  synth::MixedBatchSampler sampler(pools, b, 1);
  auto epoch = sampler.next_epoch();
  std::size_t bad = 0;
  for (const auto& batch : epoch) {
    std::vector<std::size_t> counts(m, 0);
    for (const auto& e : batch) ++counts[e.dataset];
    for (std::size_t c : counts) bad += c != b / m;
  }
  return {bad == 0 && !epoch.empty(), std::to_string(epoch.size()) + " batches of " + std::to_string(b) + ", M=" +
                                          std::to_string(m) + ": " + std::to_string(bad) +
                                          " per-dataset counts differ from B/M=" + std::to_string(b / m)};
}

Outcome criterion_angular_error(const Context&) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI), pitch(-M_PI / 2, M_PI / 2);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    GazeAngles a{yaw(rng), pitch(rng)}, b{yaw(rng), pitch(rng)};
    const double ax[3] = {std::cos(a.pitch) * std::sin(a.yaw), std::sin(a.pitch), std::cos(a.pitch) * std::cos(a.yaw)};
    const double bx[3] = {std::cos(b.pitch) * std::sin(b.yaw), std::sin(b.pitch), std::cos(b.pitch) * std::cos(b.yaw)};
    double dot = 0, na = 0, nb = 0;
    for (int k = 0; k < 3; ++k) {
      dot += ax[k] * bx[k];
      na += ax[k] * ax[k];
      nb += bx[k] * bx[k];
    }
    const double ref = std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0)) * 180.0 / M_PI;
    worst = std::max(worst, std::abs(angular_error_deg(a, b) - ref));
  }
  const double right = std::abs(angular_error_deg({0, 0}, {deg_to_rad(90), 0}) - 90.0);
  return {worst < 1e-10 && right < 1e-12,
          "10000 pairs max diff " + fmt("%.1e", worst) + " (< 1e-10); (0,0) vs (90,0) off by " + fmt("%.1e", right) +
              " (< 1e-12)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.work_dir = fs::temp_directory_path() / "gazefusion_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      ctx.work_dir = argv[++i];
    } else if (a == "--cli" && i + 1 < argc) {
      ctx.cli_binary = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--work-dir DIR] [--cli PATH]\n";
      return 1;
    }
  }
  fs::create_directories(ctx.work_dir);

  const std::vector<Criterion> criteria{
      {1, "gradient check", criterion_gradcheck},
      {2, "anchor invariance", criterion_anchor_invariance},
      {3, "parameter budget", criterion_budget},
      {4, "eye-branch independence", criterion_eye_independence},
      {5, "offset recovery", criterion_offset_recovery},
      {6, "mixing hurts, adaptation helps", criterion_mixing},
      {7, "fusion topologies train", criterion_topologies},
      {8, "pipeline determinism", criterion_determinism},
      {9, "mixed batch composition", criterion_batch_composition},
      {10, "angular error", criterion_angular_error},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
