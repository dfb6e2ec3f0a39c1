#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jst/autodiff/tensor.hpp"

namespace jst::trainer {

struct CheckpointTensor {
  ad::Shape shape;
  std::vector<float> values;

  bool operator==(const CheckpointTensor&) const = default;
};

// Named-tensor archive. The binary file holds only the tensors; metadata
// (step, epoch, config digest, averaging sources) lives in a sidecar
// "<file>.meta" of key=value lines.
//
// File layout, little-endian:
//   "BMTC" | version u32 | record count u32 |
//   per record, sorted by name: name length u16, UTF-8 name, rank u8,
//   dims u32 x rank, payload f32 x prod(dims)
struct Checkpoint {
  static constexpr std::uint32_t format_version = 1;

  std::map<std::string, CheckpointTensor> tensors;
  std::map<std::string, std::string> metadata;

  const CheckpointTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError with the failing byte offset; never returns partial data.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Elementwise arithmetic mean. All inputs must share the exact name/shape set.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);
Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths);

}  // namespace jst::trainer
