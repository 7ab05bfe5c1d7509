#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "agadapt/model/transformer.hpp"
#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

// Container layout (all integers little-endian):
//   "AGCK" | u32 version | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f64 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

/// Stores every parameter plus a "meta.config" tensor with the model shape.
void save_model(const std::filesystem::path& path, const Transformer& model);
/// Restores a model; every parameter comes back frozen.
Transformer load_model(const std::filesystem::path& path);

}  // namespace agadapt
