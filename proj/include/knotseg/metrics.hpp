#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knotseg/common.hpp"

namespace knotseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(std::span<const std::uint8_t> pred,
                          std::span<const std::uint8_t> gt);

/// 2*TP / (2*TP + FP + FN); two empty volumes agree perfectly (1.0).
double dice_from_counts(const ConfusionCounts& c);

/// Cohen's kappa (p_o - p_e) / (1 - p_e); chance agreement p_e from the
/// marginals. p_e == 1 only occurs with exact agreement, mapped to 1.0.
double kappa_from_counts(const ConfusionCounts& c);

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
double kappa(std::span<const std::uint8_t> pred,
             std::span<const std::uint8_t> gt);

/// yhat = 1 where p >= threshold (boundary inclusive). Probabilities outside
/// [0,1] are rejected.
std::vector<std::uint8_t> binarize(std::span<const float> probs,
                                   double threshold);

enum class HdEmptyPolicy { kSkip, kFrameDiagonal };
enum class HdMode { kVolume3d, kSlice2dMean };

struct EvalConfig {
  double threshold = 0.5;
  double pixel_pitch_mm = 1.0;
  double slice_pitch_mm = 1.25;
  HdEmptyPolicy hd_empty_policy = HdEmptyPolicy::kSkip;
  HdMode hd_mode = HdMode::kVolume3d;

  void validate() const {
    require(threshold > 0.0 && threshold < 1.0,
            "eval config: threshold must be in (0,1), got ", threshold);
    require(pixel_pitch_mm > 0.0 && slice_pitch_mm > 0.0,
            "eval config: pitches must be positive");
  }
};

/// Exact squared Euclidean distance transform on the anisotropic grid
/// (separable parabola-envelope passes). Output per voxel: squared distance
/// in mm^2 to the nearest positive voxel; a huge sentinel where the mask is
/// empty.
std::vector<double> edt_sq(const std::uint8_t* mask, int t, int h, int w,
                           double wz, double wy, double wx);

/// Symmetric Hausdorff distance in millimeters between the positive sets.
/// nullopt when the empty policy is kSkip and either set is empty.
std::optional<double> hausdorff_mm(const std::uint8_t* pred,
                                   const std::uint8_t* gt, int t, int h, int w,
                                   const EvalConfig& cfg);

struct VolumeMetrics {
  double dice = 0.0;
  double kappa = 0.0;
  double hd_mm = 0.0;
  bool hd_defined = false;
  std::uint32_t tree_id = 0;
  std::uint32_t volume_index = 0;
  std::string species;
};

VolumeMetrics evaluate_volume(std::span<const float> probs,
                              std::span<const std::uint8_t> gt, int t, int h,
                              int w, const EvalConfig& cfg,
                              std::uint32_t tree_id = 0,
                              std::uint32_t volume_index = 0,
                              std::string species = {});

enum class GroupBy { kSpecies, kTree };

struct ReportRow {
  std::string method;
  std::string species;
  std::uint32_t tree_id = 0;  // only meaningful for per-tree rows
  int volumes = 0;
  double dice = 0.0;
  double hd_mm = 0.0;
  bool hd_defined = false;
  int hd_excluded = 0;
  double kappa = 0.0;
};

/// Arithmetic mean per group; HD averages only the defined volumes and
/// reports how many were excluded.
std::vector<ReportRow> aggregate(const std::vector<VolumeMetrics>& volumes,
                                 GroupBy group_by, const std::string& method);

void write_species_report(const std::vector<ReportRow>& rows,
                          const std::filesystem::path& txt_path,
                          const std::filesystem::path& csv_path);
void write_tree_report(const std::vector<ReportRow>& rows,
                       const std::filesystem::path& txt_path,
                       const std::filesystem::path& csv_path);
/// Per-volume kappa values (the data behind the distribution plots).
void write_kappa_distribution(const std::vector<VolumeMetrics>& volumes,
                              const std::filesystem::path& csv_path);

}  // namespace knotseg
