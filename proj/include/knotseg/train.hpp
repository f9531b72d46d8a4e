#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "knotseg/checkpoint.hpp"
#include "knotseg/config.hpp"

namespace knotseg {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double val_hd = 0.0;
  bool val_hd_defined = false;
  double val_kappa = 0.0;
  double elapsed_s = 0.0;
};

struct TrainResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path runlog;
  std::vector<EpochRecord> records;
  double best_val_dice = -1.0;
};

/// The full training protocol: seeded shuffle of whole volumes, augmentation,
/// BCE-with-logits, Adam, per-epoch validation in eval mode, a checkpoint
/// after every epoch plus the best-validation-Dice one. Deterministic under a
/// fixed seed (single-threaded; RNG streams are derived per (epoch, volume)).
/// `progress`, when given, receives one line per epoch.
TrainResult train(const TrainConfig& cfg, const EvalConfig& eval_cfg,
                  std::ostream* progress = nullptr);

}  // namespace knotseg
