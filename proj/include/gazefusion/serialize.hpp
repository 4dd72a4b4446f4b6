#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gazefusion/tensor.hpp"

namespace gazefusion {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::size_t count_parameters(const NamedTensors& params);

// Parameter file layout, all integers and floats little-endian:
//   "GZF1"
//   repeated until EOF:
//     u64 name_length, name bytes (UTF-8), u64 rank, u64 dims[rank], f64 data[prod(dims)]
inline constexpr char kTensorFileMagic[4] = {'G', 'Z', 'F', '1'};

void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

// Copies values from `source` into the same-named tensors of `dest`. Every
// destination name must be present with an identical shape.
void assign_tensors(const NamedTensors& source, NamedTensors& dest);

}  // namespace gazefusion
