#include "gazefusion/keyvalue.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "gazefusion/tensor.hpp"

namespace gazefusion::kv {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    parts.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

}  // namespace

std::vector<Entry> Document::section(std::size_t index) const {
  std::vector<Entry> out;
  for (const auto& e : entries) {
    if (e.section == index) out.push_back(e);
  }
  return out;
}

Document parse(std::string_view text, const std::string& source) {
  Document doc;
  doc.source = source;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": malformed section header '" +
                          std::string(line) + "'");
      }
      doc.section_names.emplace_back(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) +
                        "'");
    }
    doc.entries.push_back(
        {std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no,
         doc.section_names.size()});
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void fail(const Entry& e, const std::string& source, const std::string& what) {
  throw ConfigError(source + ":" + std::to_string(e.line) + ": " + e.key + ": " + what);
}

double to_double(const Entry& e, const std::string& source) {
  double v = 0.0;
  if (!parse_number(std::string_view(e.value), v)) fail(e, source, "expected a number, got '" + e.value + "'");
  return v;
}

std::size_t to_size(const Entry& e, const std::string& source) {
  std::size_t v = 0;
  if (!parse_number(std::string_view(e.value), v)) {
    fail(e, source, "expected a non-negative integer, got '" + e.value + "'");
  }
  return v;
}

std::uint64_t to_u64(const Entry& e, const std::string& source) {
  std::uint64_t v = 0;
  if (!parse_number(std::string_view(e.value), v)) fail(e, source, "expected an unsigned integer, got '" + e.value + "'");
  return v;
}

bool to_bool(const Entry& e, const std::string& source) {
  if (e.value == "on" || e.value == "true" || e.value == "1") return true;
  if (e.value == "off" || e.value == "false" || e.value == "0") return false;
  fail(e, source, "expected on/off, got '" + e.value + "'");
}

std::vector<double> to_doubles(const Entry& e, const std::string& source) {
  std::vector<double> out;
  for (auto part : split_commas(e.value)) {
    double v = 0.0;
    if (!parse_number(part, v)) fail(e, source, "expected comma-separated numbers, got '" + e.value + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const Entry& e, const std::string& source) {
  std::vector<std::size_t> out;
  for (auto part : split_commas(e.value)) {
    std::size_t v = 0;
    if (!parse_number(part, v)) fail(e, source, "expected comma-separated integers, got '" + e.value + "'");
    out.push_back(v);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace gazefusion::kv
