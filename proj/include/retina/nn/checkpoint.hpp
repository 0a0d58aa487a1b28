#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "retina/nn/module.hpp"

namespace retina::nn {

/// Named tensors plus a free-form metadata string (JSON by convention).
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string meta;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

/// Little-endian binary container, version 1: magic "RTCK", u32 version,
/// u64 meta length + bytes, u64 count, then per tensor: u64 name length +
/// bytes, u64 rank, u64 dims, IEEE-754 doubles.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a module's parameters and buffers under `prefix`.
void append_state(Checkpoint& checkpoint, const Module& module, const std::string& prefix = "");
/// Restores every entry of `module` from `prefix`-qualified names; shapes must match.
void load_state(Module& module, const Checkpoint& checkpoint, const std::string& prefix = "");

}  // namespace retina::nn
