#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>

#include "knotseg/adam.hpp"
#include "knotseg/model.hpp"

namespace knotseg {

/// Training-state metadata carried alongside the parameter tables.
struct CheckpointExtras {
  std::uint64_t step = 0;   // optimizer steps taken
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t master_seed = 0;
  std::array<std::uint64_t, 4> rng_state{};  // snapshot of the training rng
  double best_val_dice = -1.0;
};

/// KCKP v1: "KCKP" | u32 version | length-prefixed config/state blob
/// (key=value text) | parameter table | batchnorm-buffer table | optimizer
/// table | trailing CRC-64. Each table is u32 count followed by records of
/// (u32 name length, name bytes, u32 rank, u32 extents..., f32 payload).
/// Written atomically; a corrupt or truncated file fails its checksum before
/// anything is deserialized.
void save_checkpoint(Model<float>& model, const AdamState<float>* opt,
                     const CheckpointExtras& extras,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::unique_ptr<Model<float>> model;
  AdamState<float> opt;  // zero moments when the file carries none
  CheckpointExtras extras;
};

/// Rebuilds the model from the embedded config. When `expected` is given, a
/// mismatching embedded config is rejected before any tensor is read.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const ModelConfig* expected = nullptr);

}  // namespace knotseg
