#include "knotseg/synthlog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace knotseg {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

double wrap_angle(double a) {
  while (a > kPi) a -= kTwoPi;
  while (a < -kPi) a += kTwoPi;
  return a;
}
}  // namespace

GeneratorConfig GeneratorConfig::full_preset() {
  GeneratorConfig c;
  c.preset = "full";
  c.fir = SpeciesParams{};
  c.spruce = SpeciesParams{};
  c.spruce.branch_spacing_mm = 150.0;
  c.spruce.scar_bump_mm_min = 1.8;
  c.spruce.scar_bump_mm_max = 3.8;
  c.spruce.scar_extent_mm_min = 6.0;
  c.spruce.scar_extent_mm_max = 12.0;
  c.spruce.elevation_min_rad = 0.5;
  c.spruce.elevation_max_rad = 0.9;
  c.spruce.wobble_amp_mm = 4.5;
  c.spruce.hidden_scar_fraction = 0.2;
  return c;
}

GeneratorConfig GeneratorConfig::desk_preset() {
  GeneratorConfig c;
  c.preset = "desk";
  c.raster_size = 48;
  c.slices_per_tree = 96;
  c.volume_slices = 12;
  c.base_radius_min_mm = 13.0;
  c.base_radius_max_mm = 16.0;
  c.pith_drift_amp_mm = 1.0;
  c.pith_drift_period_mm = 90.0;
  c.train_fir = 6;
  c.train_spruce = 3;
  c.val_fir = 2;
  c.val_spruce = 1;
  c.test_fir = 2;
  c.test_spruce = 2;

  c.fir.branch_spacing_mm = 22.0;
  c.fir.scar_bump_mm_min = 1.8;
  c.fir.scar_bump_mm_max = 2.6;
  c.fir.scar_extent_mm_min = 4.0;
  c.fir.scar_extent_mm_max = 7.0;
  c.fir.knot_half_angle_min_rad = 0.12;
  c.fir.knot_half_angle_max_rad = 0.22;
  c.fir.elevation_min_rad = 0.6;
  c.fir.elevation_max_rad = 0.95;
  c.fir.wobble_amp_mm = 0.9;
  c.fir.hidden_scar_fraction = 0.1;

  c.spruce = c.fir;
  c.spruce.branch_spacing_mm = 30.0;
  c.spruce.scar_bump_mm_min = 1.2;
  c.spruce.scar_bump_mm_max = 2.0;
  c.spruce.wobble_amp_mm = 1.4;
  c.spruce.hidden_scar_fraction = 0.2;
  return c;
}

GeneratorConfig GeneratorConfig::by_name(const std::string& preset) {
  if (preset == "full") return full_preset();
  if (preset == "desk") return desk_preset();
  fail("unknown generator preset '", preset, "' (valid: full, desk)");
}

void GeneratorConfig::validate() const {
  require(raster_size > 0 && raster_size % 8 == 0,
          "generator: raster_size must be a positive multiple of 8, got ",
          raster_size);
  require(volume_slices >= 1, "generator: volume_slices must be >= 1");
  require(slices_per_tree % volume_slices == 0,
          "generator: slices_per_tree (", slices_per_tree,
          ") must be divisible by volume_slices (", volume_slices, ")");
  require(ring_thickness_px >= 1, "generator: ring thickness must be >= 1 px");
  require(base_radius_min_mm > 0 &&
              base_radius_max_mm >= base_radius_min_mm,
          "generator: bad base radius range");
  for (const auto* sp : {&fir, &spruce}) {
    const double reach = base_radius_max_mm + sp->wobble_amp_mm +
                         sp->scar_bump_mm_max + pith_drift_amp_mm;
    const double half_frame = 0.5 * raster_size * pixel_pitch_mm;
    require(reach < half_frame,
            "generator: log can reach ", reach, " mm from center but the "
            "frame only allows ", half_frame,
            " mm; shrink radii/wobble/bumps");
  }
}

LogSpec sample_log_spec(std::uint64_t seed, Species species,
                        const GeneratorConfig& cfg) {
  cfg.validate();
  const SpeciesParams& sp = cfg.species(species);
  Rng rng(seed);

  LogSpec spec;
  spec.species = species;
  spec.rng_seed = seed;
  spec.length_mm = cfg.length_mm();
  spec.base_radius_mm = rng.uniform(cfg.base_radius_min_mm,
                                    cfg.base_radius_max_mm);
  spec.pith_drift_amp_mm = cfg.pith_drift_amp_mm * rng.uniform(0.3, 1.0);
  spec.pith_drift_period_mm = cfg.pith_drift_period_mm * rng.uniform(0.7, 1.3);
  spec.pith_drift_phase_x = rng.uniform(0.0, kTwoPi);
  spec.pith_drift_phase_y = rng.uniform(0.0, kTwoPi);

  // Two or three smooth low-frequency harmonics; amplitudes sum to at most
  // the species' wobble budget so the frame-fit bound stays valid.
  const int n_harm = 2 + static_cast<int>(rng.below(2));
  double weights[3], wsum = 0.0;
  for (int i = 0; i < n_harm; ++i) {
    weights[i] = rng.uniform(0.2, 1.0);
    wsum += weights[i];
  }
  const double total_amp = sp.wobble_amp_mm * rng.uniform(0.5, 1.0);
  for (int i = 0; i < n_harm; ++i) {
    WobbleHarmonic h;
    h.angular_k = 2 + static_cast<int>(rng.below(3));
    h.amp_mm = total_amp * weights[i] / wsum;
    h.z_period_mm = spec.length_mm * rng.uniform(0.6, 1.6);
    h.phase_theta = rng.uniform(0.0, kTwoPi);
    h.phase_z = rng.uniform(0.0, kTwoPi);
    spec.radius_wobble.push_back(h);
  }

  if (sp.branch_spacing_mm > 0.0) {
    double z = rng.exponential(sp.branch_spacing_mm);
    while (z < spec.length_mm) {
      BranchSpec b;
      b.z_mm = z;
      b.azimuth_rad = rng.uniform(0.0, kTwoPi);
      b.elevation_rad = rng.uniform(sp.elevation_min_rad, sp.elevation_max_rad);
      b.knot_half_angle_rad =
          rng.uniform(sp.knot_half_angle_min_rad, sp.knot_half_angle_max_rad);
      b.scar_bump_mm = rng.uniform(sp.scar_bump_mm_min, sp.scar_bump_mm_max);
      b.scar_extent_mm =
          rng.uniform(sp.scar_extent_mm_min, sp.scar_extent_mm_max);
      b.visible = !rng.bernoulli(sp.hidden_scar_fraction);
      spec.branches.push_back(b);
      z += rng.exponential(sp.branch_spacing_mm);
    }
  }
  return spec;
}

bool scar_active(const BranchSpec& b, double z_mm) {
  const double zc = b.z_mm + 0.5 * b.scar_extent_mm;
  return std::abs(z_mm - zc) < 0.5 * b.scar_extent_mm;
}

double contour_radius(const LogSpec& spec, double theta, double z_mm) {
  double r = spec.base_radius_mm;
  for (const auto& h : spec.radius_wobble) {
    r += h.amp_mm * std::cos(h.angular_k * theta + h.phase_theta) *
         std::cos(kTwoPi * z_mm / h.z_period_mm + h.phase_z);
  }
  for (const auto& b : spec.branches) {
    if (!b.visible || !scar_active(b, z_mm)) continue;
    const double dtheta = wrap_angle(theta - b.azimuth_rad);
    const double half_w = std::clamp(
        b.scar_extent_mm / (2.0 * spec.base_radius_mm), 0.15, 0.7);
    if (std::abs(dtheta) >= half_w) continue;
    const double zc = b.z_mm + 0.5 * b.scar_extent_mm;
    const double dz = (z_mm - zc) / (0.5 * b.scar_extent_mm);
    r += b.scar_bump_mm * 0.25 * (1.0 + std::cos(kPi * dtheta / half_w)) *
         (1.0 + std::cos(kPi * dz));
  }
  return r;
}

void pith_center_px(const LogSpec& spec, const GeneratorConfig& cfg,
                    double z_mm, double& cx, double& cy) {
  const double mid = 0.5 * (cfg.raster_size - 1);
  const double ph = kTwoPi * z_mm / spec.pith_drift_period_mm;
  cx = mid + spec.pith_drift_amp_mm *
                 std::sin(ph + spec.pith_drift_phase_x) / cfg.pixel_pitch_mm;
  cy = mid + spec.pith_drift_amp_mm *
                 std::sin(ph + spec.pith_drift_phase_y) / cfg.pixel_pitch_mm;
}

std::optional<KnotDisc> knot_disc(const LogSpec& spec,
                                  const GeneratorConfig& cfg,
                                  const BranchSpec& b, double z_mm) {
  const double dz = z_mm - b.z_mm;
  if (dz <= 0.0) return std::nullopt;
  // cone axis climbs at the branch elevation: radial run per unit height is
  // cot(elevation)
  const double rho = dz / std::tan(b.elevation_rad);
  const double along_axis = std::hypot(rho, dz);
  const double radius = along_axis * std::tan(b.knot_half_angle_rad);
  if (radius < 0.35 * cfg.pixel_pitch_mm) return std::nullopt;

  const double ring_mm = cfg.ring_thickness_px * cfg.pixel_pitch_mm;
  const double r_cont = contour_radius(spec, b.azimuth_rad, z_mm);
  // the disc stays fully inside the ring interior; past that the knot ends
  if (rho + radius > r_cont - 0.5 * ring_mm - 0.6) return std::nullopt;

  double cx, cy;
  pith_center_px(spec, cfg, z_mm, cx, cy);
  KnotDisc disc;
  disc.radial_dist_mm = rho;
  disc.radius_mm = radius;
  disc.center_x_px = cx + rho * std::cos(b.azimuth_rad) / cfg.pixel_pitch_mm;
  disc.center_y_px = cy + rho * std::sin(b.azimuth_rad) / cfg.pixel_pitch_mm;
  return disc;
}

namespace {

void render_slice_impl(const LogSpec& spec, const GeneratorConfig& cfg,
                       double z_mm, std::uint8_t* contour, std::uint8_t* knots,
                       std::uint8_t* interior) {
  const int n = cfg.raster_size;
  if (contour) std::fill(contour, contour + n * n, std::uint8_t(0));
  if (knots) std::fill(knots, knots + n * n, std::uint8_t(0));
  if (interior) std::fill(interior, interior + n * n, std::uint8_t(0));
  if (z_mm < 0.0 || z_mm > spec.length_mm) return;

  double cx, cy;
  pith_center_px(spec, cfg, z_mm, cx, cy);
  const double ring_half_mm = 0.5 * cfg.ring_thickness_px * cfg.pixel_pitch_mm;

  std::vector<KnotDisc> discs;
  for (const auto& b : spec.branches) {
    if (auto d = knot_disc(spec, cfg, b, z_mm)) discs.push_back(*d);
  }

  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      const double dx = (px - cx) * cfg.pixel_pitch_mm;
      const double dy = (py - cy) * cfg.pixel_pitch_mm;
      const double d = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx);
      const double r = contour_radius(spec, theta, z_mm);
      const bool inside = d < r - ring_half_mm;
      if (contour && std::abs(d - r) <= ring_half_mm) {
        contour[py * n + px] = 1;
      }
      if (interior && inside) interior[py * n + px] = 1;
      if (knots && inside) {
        for (const auto& disc : discs) {
          const double kx = (px - disc.center_x_px) * cfg.pixel_pitch_mm;
          const double ky = (py - disc.center_y_px) * cfg.pixel_pitch_mm;
          if (kx * kx + ky * ky <= disc.radius_mm * disc.radius_mm) {
            knots[py * n + px] = 1;
            break;
          }
        }
      }
    }
  }
}

}  // namespace

void render_slice(const LogSpec& spec, const GeneratorConfig& cfg, double z_mm,
                  std::uint8_t* contour, std::uint8_t* knots) {
  render_slice_impl(spec, cfg, z_mm, contour, knots, nullptr);
}

std::vector<std::uint8_t> render_interior(const LogSpec& spec,
                                          const GeneratorConfig& cfg,
                                          double z_mm) {
  std::vector<std::uint8_t> interior(
      static_cast<std::size_t>(cfg.raster_size) * cfg.raster_size);
  render_slice_impl(spec, cfg, z_mm, nullptr, nullptr, interior.data());
  return interior;
}

std::vector<VolumeSample> render_tree(const LogSpec& spec,
                                      const GeneratorConfig& cfg) {
  const int n = cfg.raster_size;
  const int t = cfg.volume_slices;
  const int n_vol = cfg.slices_per_tree / t;
  std::vector<VolumeSample> out;
  out.reserve(static_cast<std::size_t>(n_vol));
  for (int v = 0; v < n_vol; ++v) {
    VolumeSample s;
    s.t = t;
    s.h = n;
    s.w = n;
    s.pixel_pitch_mm = static_cast<float>(cfg.pixel_pitch_mm);
    s.slice_pitch_mm = static_cast<float>(cfg.slice_pitch_mm);
    s.tree_id = spec.tree_id;
    s.z_offset_mm = static_cast<float>(v * t * cfg.slice_pitch_mm);
    s.contour.resize(static_cast<std::size_t>(t) * n * n);
    s.knots.resize(static_cast<std::size_t>(t) * n * n);
    for (int i = 0; i < t; ++i) {
      const double z = (v * t + i) * cfg.slice_pitch_mm;
      render_slice(spec, cfg, z, s.contour.data() + std::size_t(i) * n * n,
                   s.knots.data() + std::size_t(i) * n * n);
    }
    out.push_back(std::move(s));
  }
  return out;
}

Manifest generate_dataset(const GeneratorConfig& cfg,
                          const std::filesystem::path& out_dir, int threads) {
  namespace fs = std::filesystem;
  cfg.validate();
  require(threads >= 1, "generate_dataset: threads must be >= 1");
  fs::create_directories(out_dir / "volumes");

  struct TreeJob {
    std::uint32_t tree_id;
    Species species;
    std::string fold;
  };
  std::vector<TreeJob> jobs;
  std::uint32_t next_id = 1;
  auto add = [&](int count, Species sp, const char* fold) {
    for (int i = 0; i < count; ++i) {
      jobs.push_back({next_id++, sp, fold});
    }
  };
  add(cfg.train_fir, Species::kFir, "train");
  add(cfg.train_spruce, Species::kSpruce, "train");
  add(cfg.val_fir, Species::kFir, "val");
  add(cfg.val_spruce, Species::kSpruce, "val");
  add(cfg.test_fir, Species::kFir, "test");
  add(cfg.test_spruce, Species::kSpruce, "test");

  Manifest manifest;
  manifest.base_dir = out_dir;
  manifest.entries.resize(jobs.size());

  std::exception_ptr first_error;
  std::mutex err_mutex;

  auto run_job = [&](std::size_t j) {
    const TreeJob& job = jobs[j];
    LogSpec spec = sample_log_spec(
        derive_seed(cfg.master_seed, "tree", job.tree_id), job.species, cfg);
    spec.tree_id = job.tree_id;
    auto volumes = render_tree(spec, cfg);
    ManifestEntry e;
    e.tree_id = job.tree_id;
    e.species = species_id(job.species);
    e.fold = job.fold;
    char name[64];
    for (std::size_t v = 0; v < volumes.size(); ++v) {
      std::snprintf(name, sizeof(name), "volumes/tree%04u_vol%02zu.kvol",
                    job.tree_id, v);
      write_volume(volumes[v], out_dir / name);
      e.files.emplace_back(name);
    }
    manifest.entries[j] = std::move(e);
  };

  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      try {
        run_job(j);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  try {
    if (threads <= 1 || jobs.size() <= 1) {
      worker(0, jobs.size());
    } else {
      const std::size_t nt =
          std::min<std::size_t>(static_cast<std::size_t>(threads),
                                jobs.size());
      std::vector<std::thread> pool;
      const std::size_t per = (jobs.size() + nt - 1) / nt;
      for (std::size_t k = 0; k < nt; ++k) {
        const std::size_t b = k * per;
        const std::size_t e = std::min(jobs.size(), b + per);
        if (b < e) pool.emplace_back(worker, b, e);
      }
      for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    write_manifest(manifest, out_dir / "manifest.txt");
  } catch (...) {
    // no partial datasets: drop everything we created
    std::error_code ec;
    fs::remove_all(out_dir / "volumes", ec);
    fs::remove(out_dir / "manifest.txt", ec);
    throw;
  }
  return manifest;
}

}  // namespace knotseg
