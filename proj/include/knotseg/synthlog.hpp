#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knotseg/rng.hpp"
#include "knotseg/volume.hpp"

namespace knotseg {

enum class Species { kFir, kSpruce };

inline const char* species_id(Species s) {
  return s == Species::kFir ? "fir" : "spruce";
}
inline Species species_from_id(const std::string& s) {
  if (s == "fir") return Species::kFir;
  if (s == "spruce") return Species::kSpruce;
  fail("unknown species '", s, "' (valid: fir, spruce)");
}

/// One branch: emerges at the pith at z_mm and climbs outward at
/// elevation_rad; the knot is the cone of half-angle knot_half_angle_rad
/// around that axis. The scar is a cosine-tapered bump on the contour,
/// centered a half-extent above the emergence height so it covers the young
/// knot slices and leaves the later ones without local evidence. An
/// invisible branch renders no bump at all.
struct BranchSpec {
  double z_mm = 0.0;
  double azimuth_rad = 0.0;
  double elevation_rad = 0.5;
  double knot_half_angle_rad = 0.1;
  double scar_bump_mm = 2.0;
  double scar_extent_mm = 6.0;
  bool visible = true;
};

struct WobbleHarmonic {
  int angular_k = 2;
  double amp_mm = 0.0;
  double z_period_mm = 400.0;
  double phase_theta = 0.0;
  double phase_z = 0.0;
};

/// Procedural description of one tree; slices render deterministically from
/// it.
struct LogSpec {
  std::uint32_t tree_id = 0;
  Species species = Species::kFir;
  double length_mm = 0.0;
  double base_radius_mm = 60.0;
  std::vector<WobbleHarmonic> radius_wobble;
  double pith_drift_amp_mm = 0.0;
  double pith_drift_period_mm = 1.0;
  double pith_drift_phase_x = 0.0;
  double pith_drift_phase_y = 0.0;
  std::vector<BranchSpec> branches;
  std::uint64_t rng_seed = 0;
};

struct SpeciesParams {
  double branch_spacing_mm = 110.0;  // mean gap of the Poisson-like process
  double scar_bump_mm_min = 3.0, scar_bump_mm_max = 6.0;
  double scar_extent_mm_min = 8.0, scar_extent_mm_max = 16.0;
  double knot_half_angle_min_rad = 0.08, knot_half_angle_max_rad = 0.16;
  double elevation_min_rad = 0.6, elevation_max_rad = 1.0;
  double wobble_amp_mm = 3.0;
  double hidden_scar_fraction = 0.1;  // branches with no bump at all
};

struct GeneratorConfig {
  std::string preset = "full";
  int raster_size = 192;
  int slices_per_tree = 800;
  int volume_slices = 40;
  double pixel_pitch_mm = 1.0;
  double slice_pitch_mm = 1.25;
  int ring_thickness_px = 2;
  double base_radius_min_mm = 55.0, base_radius_max_mm = 70.0;
  double pith_drift_amp_mm = 3.0;
  double pith_drift_period_mm = 650.0;
  SpeciesParams fir, spruce;
  int train_fir = 18, train_spruce = 8;
  int val_fir = 4, val_spruce = 2;
  int test_fir = 5, test_spruce = 5;
  std::uint64_t master_seed = 1;

  static GeneratorConfig full_preset();
  static GeneratorConfig desk_preset();
  static GeneratorConfig by_name(const std::string& preset);

  const SpeciesParams& species(Species s) const {
    return s == Species::kFir ? fir : spruce;
  }
  double length_mm() const { return slices_per_tree * slice_pitch_mm; }
  void validate() const;
};

/// Deterministic spec sampling: identical (seed, profile, config) give an
/// identical LogSpec. Branch heights follow exponential gaps with the
/// species' mean spacing; spacing <= 0 disables branches.
LogSpec sample_log_spec(std::uint64_t seed, Species species,
                        const GeneratorConfig& cfg);

/// Contour radius (mm) at polar angle theta, height z: base + wobble + scar
/// bumps of visible branches.
double contour_radius(const LogSpec& spec, double theta, double z_mm);

/// Pith position in raster coordinates (pixels) at height z.
void pith_center_px(const LogSpec& spec, const GeneratorConfig& cfg,
                    double z_mm, double& cx, double& cy);

/// True when the branch's scar bump is active at height z.
bool scar_active(const BranchSpec& b, double z_mm);

struct KnotDisc {
  double center_x_px, center_y_px;  // raster coordinates
  double radius_mm;
  double radial_dist_mm;  // distance of the disc center from the pith
};

/// Cross-section of one branch's knot cone at height z, or nullopt when the
/// cone is inactive there (below emergence, sub-pixel apex, or grown past the
/// contour interior).
std::optional<KnotDisc> knot_disc(const LogSpec& spec,
                                  const GeneratorConfig& cfg,
                                  const BranchSpec& b, double z_mm);

/// Renders one slice into caller buffers of raster_size^2 bytes each.
/// Out-of-range z yields empty rasters.
void render_slice(const LogSpec& spec, const GeneratorConfig& cfg, double z_mm,
                  std::uint8_t* contour, std::uint8_t* knots);

/// Interior predicate used to clip knots: strictly inside the inner edge of
/// the contour ring. Exposed for the containment checks.
std::vector<std::uint8_t> render_interior(const LogSpec& spec,
                                          const GeneratorConfig& cfg,
                                          double z_mm);

/// Renders all slices of one tree and chunks them into non-overlapping
/// volumes of cfg.volume_slices.
std::vector<VolumeSample> render_tree(const LogSpec& spec,
                                      const GeneratorConfig& cfg);

/// Generates the full per-species/per-fold dataset under out_dir and returns
/// the manifest (also written to out_dir/manifest.txt). Partial outputs are
/// removed on failure. `threads` > 1 renders trees concurrently; outputs are
/// identical regardless.
Manifest generate_dataset(const GeneratorConfig& cfg,
                          const std::filesystem::path& out_dir,
                          int threads = 1);

}  // namespace knotseg
