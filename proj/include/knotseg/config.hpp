#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "knotseg/augment.hpp"
#include "knotseg/metrics.hpp"
#include "knotseg/model.hpp"
#include "knotseg/synthlog.hpp"

namespace knotseg {

/// Flat key=value text ('#' comments, blank lines ignored). Keys keep their
/// line number so schema violations can point at the offending line.
struct KvFile {
  struct Line {
    int lineno = 0;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::string source = "<text>";

  static KvFile parse_text(const std::string& text,
                           const std::string& source = "<text>");
  static KvFile parse_file(const std::filesystem::path& path);
};

/// Typed access over a KvFile that tracks consumed keys; finish() rejects
/// anything left over, naming its line.
class KvReader {
 public:
  explicit KvReader(const KvFile& kv);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt);
  std::int64_t get_int(const std::string& key, std::int64_t dflt);
  double get_double(const std::string& key, double dflt);
  bool get_bool(const std::string& key, bool dflt);
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt);

  /// Errors out on unconsumed (unknown) keys.
  void finish() const;

 private:
  const KvFile::Line* find(const std::string& key) const;
  const KvFile& kv_;
  std::map<std::string, bool> consumed_;
};

/// Training protocol configuration (defaults follow the full-scale protocol:
/// 150 epochs, Adam at 1e-4, batch 10 for U-Net/ConvLSTM and 4 for SegNet,
/// dropout 0.1 on the ConvLSTM bottleneck, rotation/flip augmentation).
struct TrainConfig {
  ModelConfig model;
  int epochs = 150;
  int batch_size = 0;  // 0: variant default (segnet 4, otherwise 10)
  double lr = 0.0001;
  AugmentSpec augment;
  std::uint64_t seed = 1;
  std::string manifest_path;
  std::string checkpoint_dir;
  std::string runlog_path;  // default: <checkpoint_dir>/runlog.txt
  bool resume = false;

  int resolved_batch_size() const {
    if (batch_size > 0) return batch_size;
    return model.variant == Variant::kSegNet ? 4 : 10;
  }
  void validate() const {
    model.validate();
    require(epochs >= 1, "train config: epochs must be >= 1, got ", epochs);
    require(batch_size >= 0, "train config: batch_size must be >= 1 (or 0 "
            "for the variant default)");
    require(lr > 0.0, "train config: lr must be positive");
  }
};

/// Sliding-window inference settings (window 0 means the model's sequence
/// length).
struct PredictConfig {
  int window = 0;
  int stride = 1;
};

/// Everything a CLI run needs, resolved from (defaults <- config file <-
/// command-line flags).
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  PredictConfig predict;
  GeneratorConfig gen = GeneratorConfig::full_preset();
};

/// Applies a parsed config file onto defaults. Unknown keys are rejected with
/// their line number.
RunConfig resolve_config(const KvFile& kv);

/// The resolved configuration as flat key=value text (the echo written into
/// run logs and checkpoints).
std::string config_echo(const RunConfig& cfg);

/// Model-config round trip for the checkpoint blob.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig model_config_from_kv(KvReader& kv);

}  // namespace knotseg
