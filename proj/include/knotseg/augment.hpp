#pragma once

#include <array>

#include "knotseg/rng.hpp"
#include "knotseg/volume.hpp"

namespace knotseg {

/// Training-time augmentation: one rotation drawn from the 8 multiples of 45
/// degrees plus a horizontal flip with probability 0.5, applied identically
/// to every slice of both stacks.
struct AugmentSpec {
  bool enabled = true;
  double hflip_prob = 0.5;
  static constexpr int kNumAngles = 8;  // 0,45,...,315; 0 included

  static std::array<double, kNumAngles> angles_deg() {
    return {0, 45, 90, 135, 180, 225, 270, 315};
  }
};

/// Deterministic transform: rotate by angle_index * 45 degrees about the
/// raster center, then flip horizontally if requested. Multiples of 90 are
/// exact index permutations; the 45-degree family uses nearest-neighbour
/// resampling (binary masks stay binary). Rejects non-square rasters.
VolumeSample apply_augment(const VolumeSample& sample, int angle_index,
                           bool hflip);

/// Draws the transform from the rng and applies it.
VolumeSample augment_volume(const VolumeSample& sample, Rng& rng,
                            double hflip_prob = 0.5);

}  // namespace knotseg
