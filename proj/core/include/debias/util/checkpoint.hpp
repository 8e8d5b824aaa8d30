#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/autodiff/tensor.hpp"

namespace debias {

/// Binary checkpoint layout (all integers and floats little-endian):
///   8 bytes   magic "DEBIASCK"
///   u32       format version (kCheckpointVersion)
///   u32 + ... model kind string (length-prefixed)
///   u64 + ... hyperparameters as JSON text (length-prefixed)
///   u32       number of weight blocks
///   per block: u32 rank, rank x u64 dims, then prod(dims) float64 values
/// Blocks follow the owning model's documented parameter order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json hyperparams;
  std::vector<ad::Tensor> blocks;
};

void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& hyperparams,
                      std::span<const ad::Tensor* const> blocks);
/// Throws std::runtime_error naming the path on a bad magic, version or kind.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

/// Copies checkpoint blocks into existing tensors, checking shapes.
void load_blocks(const Checkpoint& ckpt, std::span<ad::Tensor* const> into);

}  // namespace debias
