#include "gazefusion/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace gazefusion {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Returns false on clean EOF before the first byte.
bool get_u64(std::istream& in, std::uint64_t& v, bool eof_ok = false) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() == 0 && eof_ok) return false;
  if (in.gcount() != 8) throw std::runtime_error("tensor file truncated");
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return true;
}

double get_f64(std::istream& in) {
  std::uint64_t v = 0;
  get_u64(in, v);
  return std::bit_cast<double>(v);
}

}  // namespace

std::size_t count_parameters(const NamedTensors& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void write_tensors(std::ostream& out, const NamedTensors& tensors) {
  out.write(kTensorFileMagic, 4);
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_f64(out, v);
  }
}

NamedTensors read_tensors(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kTensorFileMagic, 4) != 0) {
    throw std::runtime_error("not a GZF1 tensor file");
  }
  NamedTensors result;
  std::uint64_t name_len = 0;
  while (get_u64(in, name_len, /*eof_ok=*/true)) {
    if (name_len > (1u << 20)) throw std::runtime_error("tensor file: implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<std::uint64_t>(in.gcount()) != name_len) throw std::runtime_error("tensor file truncated");
    std::uint64_t rank = 0;
    get_u64(in, rank);
    if (rank > 16) throw std::runtime_error("tensor file: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      get_u64(in, v);
      d = v;
    }
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = get_f64(in);
    result.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return result;
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensors(in);
}

void assign_tensors(const NamedTensors& source, NamedTensors& dest) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (auto& [name, t] : dest) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                           ", model expects " + shape_str(t.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

}  // namespace gazefusion
