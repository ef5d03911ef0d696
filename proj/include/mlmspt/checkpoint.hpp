#pragma once

#include "mlmspt/model.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mlmspt {

// Checkpoint layout (little-endian):
//   "MLMSPT01"
//   u32 length | UTF-8 model config (key=value lines)
//   u32 parameter count
//   per parameter: u32 length | name, u32 rank, rank x u32 extents,
//                  f32 values, row-major
// Parameters are written in name order. Values are always stored as f32.

/// Undecoded checkpoint contents.
struct RawCheckpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

template <typename T>
std::vector<char> encode_checkpoint(const std::string& config_text, const ParameterStore<T>& params);
RawCheckpoint decode_checkpoint(std::vector<char> bytes);

template <typename T>
void save_checkpoint(const ParameterStore<T>& params, const ModelConfig& cfg,
                     const std::filesystem::path& path);

/// Reads and validates every parameter shape against the stored config.
/// Throws CheckpointError naming the offending parameter.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

RawCheckpoint read_checkpoint_raw(const std::filesystem::path& path);
template <typename T>
void write_checkpoint_raw(const std::filesystem::path& path, const std::string& config_text,
                          const ParameterStore<T>& params);

}  // namespace mlmspt
