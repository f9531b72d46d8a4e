#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "knotseg/metrics.hpp"
#include "knotseg/model.hpp"
#include "knotseg/volume.hpp"

namespace knotseg {

/// Binary mask stack -> float input tensor [T,1,H,W].
Tensor<float> stack_to_tensor(const std::vector<std::uint8_t>& stack, int t,
                              int h, int w);

/// Sliding-window inference over a [Z,H,W] contour stack: the model runs on
/// every `window`-slice chunk at the given stride (plus a final chunk so the
/// tail is always covered), per-slice sigmoid probabilities are accumulated
/// and divided by each slice's coverage count. Z == window degenerates to a
/// single forward pass.
std::vector<float> sliding_window_predict(
    Model<float>& model, const std::vector<std::uint8_t>& contour, int z,
    int h, int w, int window, int stride = 1);

/// Coverage counts of the window/stride sweep (exposed for tests).
std::vector<int> sliding_window_coverage(int z, int window, int stride);

struct FoldEvalResult {
  std::vector<VolumeMetrics> per_volume;
  std::vector<ReportRow> species_rows;
  std::vector<ReportRow> tree_rows;
};

/// Evaluates every volume of a fold: per-volume forward pass (eval mode),
/// threshold, Dice/HD/Kappa, then per-species and per-tree aggregation.
/// Missing volume files are enumerated before any evaluation starts.
/// `threads` > 1 evaluates volumes concurrently (forward in eval mode is
/// read-only on the model).
FoldEvalResult evaluate_fold(Model<float>& model, const Manifest& manifest,
                             const std::string& fold, const EvalConfig& cfg,
                             int threads = 1);

/// Same aggregation, but probabilities come from previously written
/// prediction files (<pred_dir>/<volume>.prob.kvol) instead of a model.
FoldEvalResult evaluate_fold_from_predictions(
    const Manifest& manifest, const std::string& fold,
    const std::filesystem::path& pred_dir, const EvalConfig& cfg);

/// Stem of the prediction file written for a dataset volume path:
/// "volumes/tree0001_vol00.kvol" -> "tree0001_vol00".
std::string prediction_stem(const std::string& volume_rel_path);

void write_reports(const FoldEvalResult& result,
                   const std::filesystem::path& report_dir);

}  // namespace knotseg
