#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gazefusion/synth.hpp"

namespace gazefusion::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Entry point shared by the gazefusion binary and in-process tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Every subdirectory of `dir` holding a manifest.txt, ordered by dataset id.
std::vector<synth::Dataset> load_data_dir(const std::filesystem::path& dir);

struct ReportRow {
  std::string run;
  std::string regime, gam, topology;
  std::vector<double> errors;  // aligned with ReportTable::datasets; NaN when absent
};

struct ReportTable {
  std::vector<std::string> datasets;
  std::vector<ReportRow> rows;
};

// Final per-dataset angular errors from each run's summary.json.
ReportTable build_report(const std::vector<std::filesystem::path>& run_dirs);
std::string report_csv(const ReportTable& table);
ReportTable parse_report_csv(const std::string& csv);
std::string report_text(const ReportTable& table);

}  // namespace gazefusion::cli
