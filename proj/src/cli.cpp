#include "gazefusion/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gazefusion/gradcheck.hpp"
#include "gazefusion/hash.hpp"
#include "gazefusion/keyvalue.hpp"
#include "gazefusion/ops.hpp"
#include "gazefusion/train.hpp"

namespace gazefusion::cli {

namespace {

namespace fs = std::filesystem;

// Failures after argument parsing (bad data, I/O, failed checks).
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw RuntimeFailure("cannot write " + path.string());
}

std::string fmt(double v, int decimals = 2) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

struct CommonFlags {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string regime;
  std::string gam;
  std::string topology;
  std::string dataset;
};

int cmd_gen_data(const CommonFlags& f, std::ostream& out) {
  std::vector<synth::DatasetSpec> specs =
      f.config.empty() ? synth::default_specs() : synth::load_specs(f.config);
  if (f.seed) {
    for (auto& s : specs) s.seed = *f.seed * 1000 + s.dataset_id;
  }
  synth::validate_collection(specs);
  fs::create_directories(f.out_dir);
  write_file(fs::path(f.out_dir) / "datasets.txt", synth::specs_to_text(specs));
  for (const auto& spec : specs) {
    synth::Dataset ds = synth::generate(spec);
    const std::string hash = synth::save_dataset(ds, fs::path(f.out_dir) / spec.name);
    out << spec.name << " (id " << spec.dataset_id << "): " << ds.samples.size() << " samples, "
        << ds.train_indices().size() << " train / " << ds.test_indices().size() << " test, manifest " << hash
        << "\n";
  }
  return kExitOk;
}

void apply_overrides(train::TrainConfig& cfg, const CommonFlags& f, bool gam_given) {
  if (f.seed) cfg.seed = *f.seed;
  if (!f.regime.empty()) cfg.regime = train::parse_regime(f.regime);
  if (!f.topology.empty()) cfg.model.topology = parse_topology(f.topology);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (gam_given) {
    cfg.gam_enabled = f.gam == "on";
  } else if (cfg.regime == train::Regime::Single) {
    cfg.gam_enabled = false;
  }
}

int cmd_train(const CommonFlags& f, bool gam_given, std::optional<std::size_t> steps,
              std::optional<std::size_t> epochs, std::optional<double> lr, std::ostream& out) {
  train::TrainConfig cfg = f.config.empty() ? train::TrainConfig{} : train::TrainConfig::load(f.config);
  apply_overrides(cfg, f, gam_given);
  if (steps) cfg.steps = *steps;
  if (epochs) cfg.epochs = *epochs;
  if (lr) cfg.lr0 = *lr;
  cfg.validate();
  const std::vector<synth::Dataset> datasets = load_data_dir(f.data_dir);
  const train::TrainResult r = train::train_run(cfg, datasets, fs::path(f.out_dir));
  out << "trained " << r.steps << " steps (" << r.steps_per_epoch << " per epoch), regime "
      << train::regime_name(cfg.regime) << ", adaptation " << (cfg.uses_gam() ? "on" : "off") << ", topology "
      << topology_name(cfg.model.topology) << "\n";
  out << "parameters: shared " << r.parameters.shared << ", per head " << r.parameters.per_head << ", trainable "
      << r.parameters.trainable << "\n";
  for (std::size_t i = 0; i < r.final_eval.size(); ++i) {
    const auto& e = r.final_eval[i];
    out << "  " << e.dataset << ": " << fmt(e.error_label_deg) << " deg (vs true gaze " << fmt(e.error_true_deg)
        << ", without adaptation " << fmt(r.final_eval_raw[i].error_label_deg) << ")\n";
  }
  out << "wrote " << (fs::path(f.out_dir) / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const CommonFlags& f, bool gam_given, std::ostream& out) {
  train::LoadedRun run = train::load_run(run_dir);
  const std::vector<synth::Dataset> datasets = load_data_dir(f.data_dir);
  const bool want_gam = gam_given ? f.gam == "on" : run.gam.has_value();
  if (want_gam && !run.gam) throw ConfigError("run " + run_dir + " was trained without adaptation heads");
  std::ostringstream csv;
  csv << "dataset,count,gam,angular_error_deg,angular_error_true_deg,raw_angular_error_deg,mean_offset_deg,"
         "absorption\n";
  for (const auto& ds : datasets) {
    if (ds.spec.face_size != run.config.model.face_size || ds.spec.eye_size != run.config.model.eye_size) continue;
    const bool use = want_gam && ds.spec.dataset_id < run.gam->num_datasets();
    const train::EvalResult e =
        train::evaluate(run.model, run.gam ? &*run.gam : nullptr, ds, use, run.config.eval_batch);
    csv << e.dataset << "," << e.count << "," << (use ? "on" : "off") << "," << kv::format_double(e.error_label_deg)
        << "," << kv::format_double(e.error_true_deg) << "," << kv::format_double(e.raw_error_label_deg) << ","
        << kv::format_double(e.mean_offset_deg) << "," << kv::format_double(e.absorption) << "\n";
    out << e.dataset << ": " << fmt(e.error_label_deg) << " deg over " << e.count << " held-out samples"
        << (use ? " (adapted)" : "") << "\n";
  }
  const fs::path dest = f.out_dir.empty() ? fs::path(run_dir) : fs::path(f.out_dir);
  fs::create_directories(dest);
  write_file(dest / "eval.csv", csv.str());
  out << "wrote " << (dest / "eval.csv").string() << " (sha256 " << sha256_hex(csv.str()) << ")\n";
  return kExitOk;
}

int cmd_grad_check(const CommonFlags& f, std::size_t max_entries, const std::string& fault, std::ostream& out) {
  ModelConfig model = ModelConfig::toy();
  if (!f.config.empty()) {
    const kv::Document doc = kv::parse(read_file(f.config), f.config);
    train::TrainConfig scratch;
    for (const auto& e : doc.entries) {
      if (!scratch.apply(e, f.config)) kv::fail(e, f.config, "unknown config key '" + e.key + "'");
    }
    model = scratch.model;
  }
  if (!f.topology.empty()) model.topology = parse_topology(f.topology);
  model.validate();
  gradcheck::Options opt;
  opt.seed = f.seed.value_or(0);
  if (!fault.empty()) testing::set_backward_fault(fault.c_str(), 1.5);
  gradcheck::Report report;
  report.merge(gradcheck::check_ops(opt), "op.");
  gradcheck::Options model_opt = opt;
  model_opt.max_entries = max_entries;
  report.merge(gradcheck::check_model(model, 4, model_opt, opt.seed), "model.");
  testing::set_backward_fault("", 1.0);
  out << gradcheck::format_report(report);
  if (!report.passed) throw RuntimeFailure("gradient check failed");
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir, std::ostream& out) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const ReportTable table = build_report(dirs);
  out << report_text(table);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "report.csv", report_csv(table));
    out << "wrote " << (fs::path(out_dir) / "report.csv").string() << "\n";
  }
  return kExitOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::vector<synth::Dataset> load_data_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw RuntimeFailure("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt")) found.push_back(entry.path());
  }
  if (found.empty()) throw RuntimeFailure("no datasets under " + dir.string() + " (run gen-data first)");
  std::vector<synth::Dataset> out;
  for (const auto& p : found) out.push_back(synth::load_dataset(p));
  std::sort(out.begin(), out.end(),
            [](const synth::Dataset& a, const synth::Dataset& b) { return a.spec.dataset_id < b.spec.dataset_id; });
  return out;
}

ReportTable build_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  ReportTable table;
  std::map<std::size_t, std::string> names_by_id;
  std::vector<std::map<std::string, double>> errors;
  for (const auto& dir : run_dirs) {
    const fs::path summary_path = dir / "summary.json";
    if (!fs::is_directory(dir)) throw RuntimeFailure("run directory " + dir.string() + " does not exist");
    if (!fs::exists(summary_path)) throw RuntimeFailure("missing " + summary_path.string());
    const auto summary = nlohmann::json::parse(read_file(summary_path));
    ReportRow row;
    row.run = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    row.regime = summary.at("regime").get<std::string>();
    row.gam = summary.at("gam").get<bool>() ? "on" : "off";
    row.topology = summary.at("topology").get<std::string>();
    std::map<std::string, double> e;
    for (const auto& f : summary.at("final")) {
      const std::string name = f.at("dataset").get<std::string>();
      names_by_id[f.at("dataset_id").get<std::size_t>()] = name;
      e[name] = f.at("angular_error_deg").get<double>();
    }
    table.rows.push_back(std::move(row));
    errors.push_back(std::move(e));
  }
  for (const auto& [id, name] : names_by_id) {
    if (std::find(table.datasets.begin(), table.datasets.end(), name) == table.datasets.end()) {
      table.datasets.push_back(name);
    }
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (const auto& name : table.datasets) {
      auto it = errors[i].find(name);
      table.rows[i].errors.push_back(it == errors[i].end() ? std::nan("") : it->second);
    }
  }
  return table;
}

std::string report_csv(const ReportTable& table) {
  std::string csv = "run,regime,gam,topology";
  for (const auto& d : table.datasets) csv += "," + d;
  csv += "\n";
  for (const auto& r : table.rows) {
    csv += r.run + "," + r.regime + "," + r.gam + "," + r.topology;
    for (double v : r.errors) csv += "," + (std::isnan(v) ? std::string() : kv::format_double(v));
    csv += "\n";
  }
  return csv;
}

ReportTable parse_report_csv(const std::string& csv) {
  std::stringstream ss(csv);
  std::string line;
  if (!std::getline(ss, line)) throw ConfigError("empty report");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "run") throw ConfigError("not a report CSV");
  ReportTable t;
  t.datasets.assign(header.begin() + 4, header.end());
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ConfigError("report row has " + std::to_string(cells.size()) + " cells");
    ReportRow r{cells[0], cells[1], cells[2], cells[3], {}};
    for (std::size_t i = 4; i < cells.size(); ++i) {
      r.errors.push_back(cells[i].empty() ? std::nan("") : std::stod(cells[i]));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string report_text(const ReportTable& table) {
  std::size_t run_w = 3;
  for (const auto& r : table.rows) run_w = std::max(run_w, r.run.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %-7s %-4s %-9s", static_cast<int>(run_w), "run", "regime", "gam", "topology");
  out << buf;
  for (const auto& d : table.datasets) {
    std::snprintf(buf, sizeof buf, " %10s", d.c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %-7s %-4s %-9s", static_cast<int>(run_w), r.run.c_str(), r.regime.c_str(),
                  r.gam.c_str(), r.topology.c_str());
    out << buf;
    for (double v : r.errors) {
      std::snprintf(buf, sizeof buf, " %10s", fmt(v).c_str());
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer gaze-feature fusion with per-dataset gaze adaptation"};
  app.name(args.empty() ? "gazefusion" : args.front());
  app.require_subcommand(1);

  CommonFlags f;
  std::uint64_t seed_value = 0;
  const std::vector<std::string> regimes{"single", "mixed"}, onoff{"on", "off"},
      topologies{"eh_lr", "lr_eh", "par", "two_eyes"};
  auto add_common = [&](CLI::App* sub, bool training_flags) {
    sub->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_value, "random seed");
    if (training_flags) {
      sub->add_option("--regime", f.regime, "training regime")->check(CLI::IsMember(regimes));
      sub->add_option("--gam", f.gam, "per-dataset gaze adaptation")->check(CLI::IsMember(onoff));
      sub->add_option("--topology", f.topology, "fusion wiring")->check(CLI::IsMember(topologies));
      sub->add_option("--dataset", f.dataset, "dataset name (single regime)");
    }
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic datasets");
  add_common(gen, false);
  gen->add_option("--out-dir", f.out_dir, "output directory")->required();

  std::optional<std::size_t> steps, epochs;
  std::optional<double> lr;
  CLI::App* trn = app.add_subcommand("train", "train a model on generated datasets");
  add_common(trn, true);
  trn->add_option("--data-dir", f.data_dir, "directory written by gen-data")->required();
  trn->add_option("--out-dir", f.out_dir, "run directory")->required();
  trn->add_option("--steps", steps, "number of optimizer updates");
  trn->add_option("--epochs", epochs, "number of epochs");
  trn->add_option("--lr", lr, "initial learning rate");

  std::string run_dir;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a trained run on held-out splits");
  add_common(ev, true);
  ev->add_option("--run-dir", run_dir, "run directory written by train")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data-dir", f.data_dir, "directory written by gen-data")->required();
  ev->add_option("--out-dir", f.out_dir, "where to write eval.csv (default: the run directory)");

  std::size_t max_entries = 16;
  std::string fault;
  CLI::App* gc = app.add_subcommand("grad-check", "compare analytic and finite-difference gradients");
  add_common(gc, false);
  gc->add_option("--topology", f.topology, "fusion wiring")->check(CLI::IsMember(topologies));
  gc->add_option("--max-entries", max_entries, "entries checked per model tensor (0: all)");
  gc->add_option("--inject-fault", fault, "scale one op's backward rule (harness self-test)")->group("");

  std::vector<std::string> report_runs;
  std::string report_out;
  CLI::App* rep = app.add_subcommand("report", "compare final errors across runs");
  rep->add_option("runs", report_runs, "run directories")->required();
  rep->add_option("--out-dir", report_out, "where to write report.csv");

  std::vector<const char*> argv;
  std::vector<std::string> storage = args.empty() ? std::vector<std::string>{"gazefusion"} : args;
  for (const auto& a : storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    CLI::App* target = &app;
    for (CLI::App* sub : app.get_subcommands()) target = sub;
    err << target->help();
    return kExitUsage;
  }

  auto given = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  try {
    if (*gen) {
      if (given(gen, "--seed")) f.seed = seed_value;
      return cmd_gen_data(f, out);
    }
    if (*trn) {
      if (given(trn, "--seed")) f.seed = seed_value;
      return cmd_train(f, given(trn, "--gam"), steps, epochs, lr, out);
    }
    if (*ev) {
      if (given(ev, "--seed")) f.seed = seed_value;
      return cmd_eval(run_dir, f, given(ev, "--gam"), out);
    }
    if (*gc) {
      if (given(gc, "--seed")) f.seed = seed_value;
      return cmd_grad_check(f, max_entries, fault, out);
    }
    if (*rep) return cmd_report(report_runs, report_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gazefusion::cli
