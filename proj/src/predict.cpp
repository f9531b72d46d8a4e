#include "knotseg/predict.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include "knotseg/ops.hpp"

namespace knotseg {

Tensor<float> stack_to_tensor(const std::vector<std::uint8_t>& stack, int t,
                              int h, int w) {
  require(stack.size() == static_cast<std::size_t>(t) * h * w,
          "stack_to_tensor: size mismatch");
  auto out = Tensor<float>::zeros({t, 1, h, w});
  for (std::size_t i = 0; i < stack.size(); ++i) {
    out[static_cast<std::int64_t>(i)] = stack[i] ? 1.0f : 0.0f;
  }
  return out;
}

std::vector<int> sliding_window_coverage(int z, int window, int stride) {
  std::vector<int> count(static_cast<std::size_t>(z), 0);
  int last_start = -1;
  for (int i = 0; i + window <= z; i += stride) {
    for (int k = 0; k < window; ++k) ++count[i + k];
    last_start = i;
  }
  if (last_start != z - window) {  // tail window so the last slices are seen
    for (int k = 0; k < window; ++k) ++count[z - window + k];
  }
  return count;
}

std::vector<float> sliding_window_predict(
    Model<float>& model, const std::vector<std::uint8_t>& contour, int z,
    int h, int w, int window, int stride) {
  require(stride >= 1, "sliding_window_predict: stride must be >= 1");
  if (z < window) {
    fail("sliding_window_predict: stack has ", z, " slices but the window is ",
         window, "; pad the stack or switch to the desk preset");
  }
  require(contour.size() == static_cast<std::size_t>(z) * h * w,
          "sliding_window_predict: stack size mismatch");

  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  std::vector<double> accum(static_cast<std::size_t>(z) * hw, 0.0);
  std::vector<int> count(static_cast<std::size_t>(z), 0);

  auto run_window = [&](int start) {
    std::vector<std::uint8_t> chunk(
        contour.begin() + static_cast<std::size_t>(start) * hw,
        contour.begin() + static_cast<std::size_t>(start + window) * hw);
    auto input = stack_to_tensor(chunk, window, h, w);
    auto logits = model.forward(input, Mode::kEval, nullptr);
    auto probs = sigmoid(logits, static_cast<Tape<float>*>(nullptr));
    for (int k = 0; k < window; ++k) {
      const float* p = probs.data() + static_cast<std::int64_t>(k) * hw;
      double* a = accum.data() + static_cast<std::int64_t>(start + k) * hw;
      for (std::int64_t j = 0; j < hw; ++j) a[j] += p[j];
      ++count[start + k];
    }
  };

  int last_start = -1;
  for (int i = 0; i + window <= z; i += stride) {
    run_window(i);
    last_start = i;
  }
  if (last_start != z - window) run_window(z - window);

  std::vector<float> out(accum.size());
  for (int s = 0; s < z; ++s) {
    const double inv = 1.0 / count[s];
    for (std::int64_t j = 0; j < hw; ++j) {
      out[static_cast<std::size_t>(s) * hw + j] =
          static_cast<float>(accum[static_cast<std::size_t>(s) * hw + j] * inv);
    }
  }
  return out;
}

namespace {

struct VolumeRef {
  const ManifestEntry* entry;
  std::uint32_t volume_index;
  std::string rel_path;
};

std::vector<VolumeRef> collect_fold(const Manifest& manifest,
                                    const std::string& fold) {
  std::vector<VolumeRef> refs;
  for (const auto* e : manifest.fold_entries(fold)) {
    for (std::size_t v = 0; v < e->files.size(); ++v) {
      refs.push_back({e, static_cast<std::uint32_t>(v), e->files[v]});
    }
  }
  require(!refs.empty(), "fold '", fold, "' has no volumes in the manifest");
  return refs;
}

void check_files_exist(const Manifest& manifest,
                       const std::vector<VolumeRef>& refs) {
  std::string missing;
  int n_missing = 0;
  for (const auto& r : refs) {
    const auto p = manifest.resolve(r.rel_path);
    if (!std::filesystem::exists(p)) {
      missing += "\n  " + p.string();
      ++n_missing;
    }
  }
  if (n_missing > 0) {
    fail_runtime("missing ", n_missing, " volume file(s):", missing);
  }
}

FoldEvalResult finish_fold(std::vector<VolumeMetrics> per_volume,
                           const std::string& method) {
  FoldEvalResult out;
  out.species_rows = aggregate(per_volume, GroupBy::kSpecies, method);
  out.tree_rows = aggregate(per_volume, GroupBy::kTree, method);
  out.per_volume = std::move(per_volume);
  return out;
}

}  // namespace

FoldEvalResult evaluate_fold(Model<float>& model, const Manifest& manifest,
                             const std::string& fold, const EvalConfig& cfg,
                             int threads) {
  cfg.validate();
  const auto refs = collect_fold(manifest, fold);
  check_files_exist(manifest, refs);

  std::vector<VolumeMetrics> per_volume(refs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= refs.size()) return;
      try {
        const auto& r = refs[i];
        const VolumeSample s = read_volume(manifest.resolve(r.rel_path));
        const auto probs = sliding_window_predict(model, s.contour, s.t, s.h,
                                                  s.w, s.t, 1);
        per_volume[i] = evaluate_volume(
            probs, s.knots, s.t, s.h, s.w, cfg, r.entry->tree_id,
            r.volume_index, r.entry->species);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return finish_fold(std::move(per_volume),
                     variant_display(model.config().variant));
}

std::string prediction_stem(const std::string& volume_rel_path) {
  return std::filesystem::path(volume_rel_path).stem().string();
}

FoldEvalResult evaluate_fold_from_predictions(
    const Manifest& manifest, const std::string& fold,
    const std::filesystem::path& pred_dir, const EvalConfig& cfg) {
  cfg.validate();
  const auto refs = collect_fold(manifest, fold);
  check_files_exist(manifest, refs);
  std::string missing;
  int n_missing = 0;
  for (const auto& r : refs) {
    const auto p = pred_dir / (prediction_stem(r.rel_path) + ".prob.kvol");
    if (!std::filesystem::exists(p)) {
      missing += "\n  " + p.string();
      ++n_missing;
    }
  }
  if (n_missing > 0) {
    fail_runtime("missing ", n_missing, " prediction file(s):", missing);
  }

  std::vector<VolumeMetrics> per_volume;
  per_volume.reserve(refs.size());
  for (const auto& r : refs) {
    const VolumeSample s = read_volume(manifest.resolve(r.rel_path));
    const ProbVolume pv = read_prob_volume(
        pred_dir / (prediction_stem(r.rel_path) + ".prob.kvol"));
    require(pv.t == s.t && pv.h == s.h && pv.w == s.w,
            "prediction for ", r.rel_path, " has shape ", pv.t, "x", pv.h, "x",
            pv.w, ", volume is ", s.t, "x", s.h, "x", s.w);
    per_volume.push_back(evaluate_volume(pv.probs, s.knots, s.t, s.h, s.w, cfg,
                                         r.entry->tree_id, r.volume_index,
                                         r.entry->species));
  }
  return finish_fold(std::move(per_volume), "stored");
}

void write_reports(const FoldEvalResult& result,
                   const std::filesystem::path& report_dir) {
  std::filesystem::create_directories(report_dir);
  write_species_report(result.species_rows, report_dir / "species_report.txt",
                       report_dir / "species_report.csv");
  write_tree_report(result.tree_rows, report_dir / "tree_report.txt",
                    report_dir / "tree_report.csv");
  write_kappa_distribution(result.per_volume,
                           report_dir / "kappa_distribution.csv");
}

}  // namespace knotseg
