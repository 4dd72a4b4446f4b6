#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Plain-text key=value files. Blank lines and lines starting with '#' are
// ignored; a line of the form "[name]" opens a new section.
namespace gazefusion::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
  std::size_t section = 0;  // 0 before the first [header], then 1, 2, ...
};

struct Document {
  std::string source;  // used in error messages
  std::vector<std::string> section_names;  // index i-1 names section i
  std::vector<Entry> entries;

  // Entries of one section in file order.
  std::vector<Entry> section(std::size_t index) const;
};

// Throws ConfigError naming `source` and the offending line number.
Document parse(std::string_view text, const std::string& source = "<input>");
Document parse_file(const std::string& path);

[[noreturn]] void fail(const Entry& e, const std::string& source, const std::string& what);

double to_double(const Entry& e, const std::string& source);
std::size_t to_size(const Entry& e, const std::string& source);
std::uint64_t to_u64(const Entry& e, const std::string& source);
bool to_bool(const Entry& e, const std::string& source);  // on/off, true/false, 1/0
std::vector<double> to_doubles(const Entry& e, const std::string& source);
std::vector<std::size_t> to_sizes(const Entry& e, const std::string& source);

// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace gazefusion::kv
