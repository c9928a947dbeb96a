#pragma once

#include <filesystem>
#include <iosfwd>

#include "bimanual/graph_network.hpp"

namespace bimanual {

// Versioned binary container:
//   magic "BMGNWGT1" | u32 format version | u64 manifest length | manifest
//   (JSON: vocabularies, shape) | u32 tensor count | tensors.
// Each tensor: u32 name length, name, u64 rows, u64 cols, rows*cols little
// endian float64 values in row-major order. Loading rejects any manifest that
// disagrees with the compiled vocabularies or with the tensor shapes.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(std::ostream& out, const GraphNetWeights<double>& w);
GraphNetWeights<double> load_weights(std::istream& in);

void save_weights(const std::filesystem::path& path, const GraphNetWeights<double>& w);
GraphNetWeights<double> load_weights(const std::filesystem::path& path);

}  // namespace bimanual
