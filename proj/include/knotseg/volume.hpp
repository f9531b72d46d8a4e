#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "knotseg/common.hpp"

namespace knotseg {

/// Aligned pair of binary raster stacks: the outer contour ring (input) and
/// the knot mask (target), plus physical spacing. Values are 0/1 per voxel.
struct VolumeSample {
  int t = 0, h = 0, w = 0;
  std::vector<std::uint8_t> contour;
  std::vector<std::uint8_t> knots;
  float pixel_pitch_mm = 1.0f;
  float slice_pitch_mm = 1.25f;
  std::uint32_t tree_id = 0;
  float z_offset_mm = 0.0f;

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(t) * h * w;
  }
  void validate() const {
    require(t > 0 && h > 0 && w > 0, "volume: bad extents ", t, "x", h, "x", w);
    require(contour.size() == static_cast<std::size_t>(voxels()) &&
                knots.size() == static_cast<std::size_t>(voxels()),
            "volume: stack sizes disagree with extents");
  }
};

/// Probability stack written by prediction (KVOL payload variant 1).
struct ProbVolume {
  int t = 0, h = 0, w = 0;
  std::vector<float> probs;
  float pixel_pitch_mm = 1.0f;
  float slice_pitch_mm = 1.25f;
  std::uint32_t tree_id = 0;
  float z_offset_mm = 0.0f;
};

void write_volume(const VolumeSample& sample, const std::filesystem::path&);
VolumeSample read_volume(const std::filesystem::path&);

void write_prob_volume(const ProbVolume&, const std::filesystem::path&);
ProbVolume read_prob_volume(const std::filesystem::path&);

struct ManifestEntry {
  std::uint32_t tree_id = 0;
  std::string species;  // "fir" | "spruce"
  std::string fold;     // "train" | "val" | "test"
  std::vector<std::string> files;  // relative to the manifest's directory
};

/// Line-oriented dataset index: one record per tree, fold assignment is
/// per-tree by construction.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> fold_entries(const std::string& fold) const;
  std::filesystem::path resolve(const std::string& rel) const {
    return base_dir / rel;
  }
};

void write_manifest(const Manifest&, const std::filesystem::path&);
Manifest read_manifest(const std::filesystem::path&);

}  // namespace knotseg
