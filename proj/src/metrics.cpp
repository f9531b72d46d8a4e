#include "knotseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace knotseg {

namespace {
// Far beyond any reachable squared distance; survives the parabola passes
// without overflowing.
constexpr double kUnreachable = 1e30;
}  // namespace

ConfusionCounts confusion(std::span<const std::uint8_t> pred,
                          std::span<const std::uint8_t> gt) {
  require(pred.size() == gt.size(), "confusion: size mismatch ", pred.size(),
          " vs ", gt.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] <= 1 && gt[i] <= 1, "confusion: masks must be binary");
    if (pred[i] && gt[i]) ++c.tp;
    else if (pred[i] && !gt[i]) ++c.fp;
    else if (!pred[i] && gt[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice_from_counts(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both sets empty: perfect agreement
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double kappa_from_counts(const ConfusionCounts& c) {
  const double n = static_cast<double>(c.total());
  require(n > 0, "kappa: empty volume");
  const double po = (static_cast<double>(c.tp) + c.tn) / n;
  const double pe = (static_cast<double>(c.tp + c.fp) * (c.tp + c.fn) +
                     static_cast<double>(c.fn + c.tn) * (c.fp + c.tn)) /
                    (n * n);
  if (pe == 1.0) return 1.0;  // degenerate marginals imply exact agreement
  return (po - pe) / (1.0 - pe);
}

double dice(std::span<const std::uint8_t> pred,
            std::span<const std::uint8_t> gt) {
  return dice_from_counts(confusion(pred, gt));
}

double kappa(std::span<const std::uint8_t> pred,
             std::span<const std::uint8_t> gt) {
  return kappa_from_counts(confusion(pred, gt));
}

std::vector<std::uint8_t> binarize(std::span<const float> probs,
                                   double threshold) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      fail("binarize: probability ", p, " at index ", i, " outside [0,1]");
    }
    out[i] = p >= threshold ? 1 : 0;
  }
  return out;
}

namespace {

// Felzenszwalb-Huttenlocher 1-d squared distance transform along a strided
// line. w2 is the squared voxel pitch of this axis.
void dt1d(double* f, std::int64_t n, std::int64_t stride, double w2,
          std::vector<double>& scratch, std::vector<int>& v,
          std::vector<double>& z) {
  if (n == 1) return;
  scratch.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) scratch[i] = f[i * stride];

  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  z[0] = -kUnreachable;
  z[1] = kUnreachable;
  for (std::int64_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const std::int64_t p = v[k];
      s = (scratch[q] - scratch[p] + w2 * (q * q - p * p)) /
          (2.0 * w2 * (q - p));
      if (k > 0 && s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = static_cast<int>(q);
    z[k] = s;
    z[k + 1] = kUnreachable;
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const std::int64_t p = v[k];
    f[q * stride] = w2 * (q - p) * (q - p) + scratch[p];
  }
}

}  // namespace

std::vector<double> edt_sq(const std::uint8_t* mask, int t, int h, int w,
                           double wz, double wy, double wx) {
  const std::int64_t n = static_cast<std::int64_t>(t) * h * w;
  std::vector<double> d(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) d[i] = mask[i] ? 0.0 : kUnreachable;

  std::vector<double> scratch;
  std::vector<int> v;
  std::vector<double> z;

  // x pass: contiguous rows
  for (std::int64_t row = 0; row < static_cast<std::int64_t>(t) * h; ++row) {
    dt1d(d.data() + row * w, w, 1, wx * wx, scratch, v, z);
  }
  // y pass: columns within each slice
  for (std::int64_t slice = 0; slice < t; ++slice) {
    for (std::int64_t x = 0; x < w; ++x) {
      dt1d(d.data() + slice * h * w + x, h, w, wy * wy, scratch, v, z);
    }
  }
  // z pass: across slices
  if (t > 1) {
    for (std::int64_t yx = 0; yx < static_cast<std::int64_t>(h) * w; ++yx) {
      dt1d(d.data() + yx, t, static_cast<std::int64_t>(h) * w, wz * wz,
           scratch, v, z);
    }
  }
  return d;
}

namespace {

bool any_positive(const std::uint8_t* m, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    if (m[i]) return true;
  }
  return false;
}

// max over positive voxels of `from` of the squared distance field of `to`
double directed_hd_sq(const std::uint8_t* from, const std::vector<double>& to,
                      std::int64_t n) {
  double best = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (from[i] && to[i] > best) best = to[i];
  }
  return best;
}

std::optional<double> hausdorff_sets(const std::uint8_t* pred,
                                     const std::uint8_t* gt, int t, int h,
                                     int w, double wz, double wy, double wx) {
  const std::int64_t n = static_cast<std::int64_t>(t) * h * w;
  if (!any_positive(pred, n) || !any_positive(gt, n)) return std::nullopt;
  const auto d_gt = edt_sq(gt, t, h, w, wz, wy, wx);
  const auto d_pred = edt_sq(pred, t, h, w, wz, wy, wx);
  const double hd_sq = std::max(directed_hd_sq(pred, d_gt, n),
                                directed_hd_sq(gt, d_pred, n));
  return std::sqrt(hd_sq);
}

double frame_diagonal_mm(int t, int h, int w, const EvalConfig& cfg) {
  const double dx = w * cfg.pixel_pitch_mm;
  const double dy = h * cfg.pixel_pitch_mm;
  const double dz = t * cfg.slice_pitch_mm;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::optional<double> hausdorff_mm(const std::uint8_t* pred,
                                   const std::uint8_t* gt, int t, int h, int w,
                                   const EvalConfig& cfg) {
  cfg.validate();
  std::optional<double> hd;
  if (cfg.hd_mode == HdMode::kVolume3d) {
    hd = hausdorff_sets(pred, gt, t, h, w, cfg.slice_pitch_mm,
                        cfg.pixel_pitch_mm, cfg.pixel_pitch_mm);
  } else {
    // per-slice 2-d Hausdorff averaged over slices where both sets are
    // non-empty
    double acc = 0.0;
    int used = 0;
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int s = 0; s < t; ++s) {
      auto slice_hd =
          hausdorff_sets(pred + s * hw, gt + s * hw, 1, h, w, 1.0,
                         cfg.pixel_pitch_mm, cfg.pixel_pitch_mm);
      if (slice_hd) {
        acc += *slice_hd;
        ++used;
      }
    }
    if (used > 0) hd = acc / used;
  }
  if (!hd) {
    if (cfg.hd_empty_policy == HdEmptyPolicy::kFrameDiagonal) {
      return frame_diagonal_mm(t, h, w, cfg);
    }
    return std::nullopt;  // recorded as an exclusion by the caller
  }
  return hd;
}

VolumeMetrics evaluate_volume(std::span<const float> probs,
                              std::span<const std::uint8_t> gt, int t, int h,
                              int w, const EvalConfig& cfg,
                              std::uint32_t tree_id,
                              std::uint32_t volume_index, std::string species) {
  cfg.validate();
  require(probs.size() == gt.size() &&
              probs.size() == static_cast<std::size_t>(t) * h * w,
          "evaluate_volume: size mismatch");
  const auto pred = binarize(probs, cfg.threshold);
  const auto counts = confusion(pred, gt);
  VolumeMetrics m;
  m.dice = dice_from_counts(counts);
  m.kappa = kappa_from_counts(counts);
  const auto hd = hausdorff_mm(pred.data(), gt.data(), t, h, w, cfg);
  m.hd_defined = hd.has_value();
  m.hd_mm = hd.value_or(0.0);
  m.tree_id = tree_id;
  m.volume_index = volume_index;
  m.species = std::move(species);
  return m;
}

std::vector<ReportRow> aggregate(const std::vector<VolumeMetrics>& volumes,
                                 GroupBy group_by, const std::string& method) {
  require(!volumes.empty(), "aggregate: empty volume list");
  // key: species name (+ tree id for per-tree grouping); map keeps rows in a
  // stable fir-before-spruce, ascending-tree order
  std::map<std::pair<std::string, std::uint32_t>, std::vector<const VolumeMetrics*>>
      groups;
  for (const auto& v : volumes) {
    const std::string sp = v.species.empty() ? "all" : v.species;
    const std::string key_sp = sp == "fir" ? "0fir" : (sp == "spruce" ? "1spruce" : sp);
    const std::uint32_t key_id = group_by == GroupBy::kTree ? v.tree_id : 0;
    groups[{key_sp, key_id}].push_back(&v);
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, members] : groups) {
    ReportRow r;
    r.method = method;
    r.species = members.front()->species.empty() ? "all"
                                                 : members.front()->species;
    r.tree_id = key.second;
    r.volumes = static_cast<int>(members.size());
    double hd_acc = 0.0;
    int hd_n = 0;
    for (const auto* v : members) {
      r.dice += v->dice;
      r.kappa += v->kappa;
      if (v->hd_defined) {
        hd_acc += v->hd_mm;
        ++hd_n;
      } else {
        ++r.hd_excluded;
      }
    }
    r.dice /= r.volumes;
    r.kappa /= r.volumes;
    r.hd_defined = hd_n > 0;
    r.hd_mm = hd_n > 0 ? hd_acc / hd_n : 0.0;
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_hd(const ReportRow& r) {
  return r.hd_defined ? fmt(r.hd_mm) : std::string("n/a");
}

void write_text_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) fail_runtime(p.string(), ": cannot open for writing");
  out << text;
}

}  // namespace

void write_species_report(const std::vector<ReportRow>& rows,
                          const std::filesystem::path& txt_path,
                          const std::filesystem::path& csv_path) {
  std::string txt, csv;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-8s %8s %10s %8s %6s %6s\n",
                "Method", "Species", "Dice", "HD(mm)", "Kappa", "Vols",
                "HDex");
  txt += line;
  csv += "method,species,dice,hd_mm,kappa,volumes,hd_excluded\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-10s %-8s %8s %10s %8s %6d %6d\n",
                  r.method.c_str(), r.species.c_str(), fmt(r.dice).c_str(),
                  fmt_hd(r).c_str(), fmt(r.kappa).c_str(), r.volumes,
                  r.hd_excluded);
    txt += line;
    csv += r.method + "," + r.species + "," + fmt(r.dice) + "," + fmt_hd(r) +
           "," + fmt(r.kappa) + "," + std::to_string(r.volumes) + "," +
           std::to_string(r.hd_excluded) + "\n";
  }
  write_text_file(txt_path, txt);
  write_text_file(csv_path, csv);
}

void write_tree_report(const std::vector<ReportRow>& rows,
                       const std::filesystem::path& txt_path,
                       const std::filesystem::path& csv_path) {
  std::string txt, csv;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %6s %8s %10s %8s %6s\n", "Species",
                "Tree", "Dice", "HD(mm)", "Kappa", "Vols");
  txt += line;
  csv += "species,tree_id,dice,hd_mm,kappa,volumes\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-8s %6u %8s %10s %8s %6d\n",
                  r.species.c_str(), r.tree_id, fmt(r.dice).c_str(),
                  fmt_hd(r).c_str(), fmt(r.kappa).c_str(), r.volumes);
    txt += line;
    csv += r.species + "," + std::to_string(r.tree_id) + "," + fmt(r.dice) +
           "," + fmt_hd(r) + "," + fmt(r.kappa) + "," +
           std::to_string(r.volumes) + "\n";
  }
  write_text_file(txt_path, txt);
  write_text_file(csv_path, csv);
}

void write_kappa_distribution(const std::vector<VolumeMetrics>& volumes,
                              const std::filesystem::path& csv_path) {
  std::string csv = "tree_id,species,volume_index,kappa\n";
  for (const auto& v : volumes) {
    csv += std::to_string(v.tree_id) + "," + v.species + "," +
           std::to_string(v.volume_index) + "," + fmt(v.kappa) + "\n";
  }
  write_text_file(csv_path, csv);
}

}  // namespace knotseg
