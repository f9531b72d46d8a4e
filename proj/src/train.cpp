#include "knotseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include "knotseg/augment.hpp"
#include "knotseg/ops.hpp"
#include "knotseg/predict.hpp"

namespace knotseg {

namespace {

struct TrainVolume {
  std::filesystem::path path;
  std::uint32_t tree_id;
  std::uint32_t volume_index;
  std::string species;
};

std::vector<TrainVolume> fold_volumes(const Manifest& manifest,
                                      const std::string& fold) {
  std::vector<TrainVolume> out;
  for (const auto* e : manifest.fold_entries(fold)) {
    for (std::size_t v = 0; v < e->files.size(); ++v) {
      out.push_back({manifest.resolve(e->files[v]), e->tree_id,
                     static_cast<std::uint32_t>(v), e->species});
    }
  }
  return out;
}

void check_sample_shape(const VolumeSample& s, const ModelConfig& mc,
                        const std::filesystem::path& path) {
  if (s.h != mc.input_resolution || s.w != mc.input_resolution ||
      s.t != mc.sequence_length) {
    fail_runtime(path.string(), ": volume is ", s.t, "x", s.h, "x", s.w,
                 " but the model expects ", mc.sequence_length, "x",
                 mc.input_resolution, "x", mc.input_resolution,
                 "; regenerate the dataset or adjust the model config");
  }
}

std::string fmt_epoch(const EpochRecord& r) {
  char hd[32];
  if (r.val_hd_defined) {
    std::snprintf(hd, sizeof(hd), "%.4f", r.val_hd);
  } else {
    std::snprintf(hd, sizeof(hd), "n/a");
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch=%d loss=%.6f val_dice=%.4f val_hd=%s val_kappa=%.4f "
                "elapsed_s=%.1f",
                r.epoch, r.train_loss, r.val_dice, hd, r.val_kappa,
                r.elapsed_s);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const EvalConfig& eval_cfg,
                  std::ostream* progress) {
  cfg.validate();
  eval_cfg.validate();
  require(!cfg.manifest_path.empty(), "train: no dataset manifest given");
  require(!cfg.checkpoint_dir.empty(), "train: no checkpoint directory given");

  const Manifest manifest = read_manifest(cfg.manifest_path);
  auto train_set = fold_volumes(manifest, "train");
  auto val_set = fold_volumes(manifest, "val");
  require(!train_set.empty(), "train: the train fold is empty");

  // shape agreement checked up front on one volume; the rest are validated
  // as they stream through the epoch loop
  {
    const VolumeSample probe = read_volume(train_set.front().path);
    check_sample_shape(probe, cfg.model, train_set.front().path);
  }

  const std::filesystem::path ckpt_dir(cfg.checkpoint_dir);
  std::filesystem::create_directories(ckpt_dir);
  const auto last_path = ckpt_dir / "last.kckp";
  const auto best_path = ckpt_dir / "best.kckp";
  const std::filesystem::path runlog_path =
      cfg.runlog_path.empty() ? (ckpt_dir / "runlog.txt").string()
                              : cfg.runlog_path;

  std::unique_ptr<Model<float>> model;
  AdamState<float> opt;
  opt.lr = static_cast<float>(cfg.lr);
  int start_epoch = 0;
  double best_val_dice = -1.0;

  if (cfg.resume && std::filesystem::exists(last_path)) {
    auto loaded = load_checkpoint(last_path, &cfg.model);
    model = std::move(loaded.model);
    opt = std::move(loaded.opt);
    opt.lr = static_cast<float>(cfg.lr);
    start_epoch = static_cast<int>(loaded.extras.epoch);
    best_val_dice = loaded.extras.best_val_dice;
  } else {
    model = std::make_unique<Model<float>>(cfg.model, cfg.seed);
  }
  auto params = model->parameters();
  if (opt.m.empty()) opt.attach(params);

  std::ofstream runlog(runlog_path, cfg.resume && start_epoch > 0
                                        ? std::ios::app
                                        : std::ios::trunc);
  if (!runlog) fail_runtime(runlog_path.string(), ": cannot open run log");
  if (start_epoch == 0) {
    runlog << "# knotseg run log\n";
    runlog << "# data=" << cfg.manifest_path << "\n";
    std::istringstream echo(model_config_text(cfg.model));
    std::string line;
    while (std::getline(echo, line)) runlog << "# " << line << "\n";
    runlog << "# epochs=" << cfg.epochs
           << "\n# batch_size=" << cfg.resolved_batch_size()
           << "\n# lr=" << cfg.lr << "\n# seed=" << cfg.seed
           << "\n# augment=" << (cfg.augment.enabled ? "on" : "off")
           << "\n# hflip_prob=" << cfg.augment.hflip_prob
           << "\n# rotation_angles=" << AugmentSpec::kNumAngles
           << "\n# threshold=" << eval_cfg.threshold << "\n";
  }

  TrainResult result;
  result.last_checkpoint = last_path;
  result.best_checkpoint = best_path;
  result.runlog = runlog_path;
  result.best_val_dice = best_val_dice;

  const int batch = cfg.resolved_batch_size();
  Rng train_rng = derive_rng(cfg.seed, "train-master");

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    {
      Rng shuffle_rng = derive_rng(cfg.seed, "shuffle", epoch);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }
    }

    double loss_sum = 0.0;
    std::size_t n_seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + std::size_t(batch));
      const float inv_batch = 1.0f / static_cast<float>(b1 - b0);
      model->zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainVolume& tv = train_set[order[k]];
        VolumeSample sample = read_volume(tv.path);
        check_sample_shape(sample, cfg.model, tv.path);
        if (cfg.augment.enabled) {
          Rng aug_rng = derive_rng(cfg.seed, "aug", epoch, order[k]);
          sample = augment_volume(sample, aug_rng, cfg.augment.hflip_prob);
        }
        auto input = stack_to_tensor(sample.contour, sample.t, sample.h,
                                     sample.w);
        auto target = stack_to_tensor(sample.knots, sample.t, sample.h,
                                      sample.w);
        Rng drop_rng = derive_rng(cfg.seed, "dropout", epoch, order[k]);
        Tape<float> tape;
        auto logits = model->forward(input, Mode::kTrain, &tape, &drop_rng);
        auto loss = bce_with_logits(logits, target, &tape);
        if (std::isnan(loss[0])) {
          fail_runtime("train: NaN loss at epoch ", epoch, ", tree ",
                       tv.tree_id, " volume ", tv.volume_index);
        }
        loss_sum += loss[0];
        ++n_seen;
        // scale so the batch gradient is the mean of per-volume gradients
        auto scale = Tensor<float>::scalar(inv_batch);
        auto scaled = mul(loss, scale, &tape);
        backward(tape, scaled);
      }
      adam_step(params, opt);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_seen);

    if (!val_set.empty()) {
      double dice_acc = 0.0, kappa_acc = 0.0, hd_acc = 0.0;
      int hd_n = 0;
      for (const auto& tv : val_set) {
        const VolumeSample s = read_volume(tv.path);
        const auto probs =
            sliding_window_predict(*model, s.contour, s.t, s.h, s.w, s.t, 1);
        const auto m = evaluate_volume(probs, s.knots, s.t, s.h, s.w, eval_cfg,
                                       tv.tree_id, tv.volume_index, tv.species);
        dice_acc += m.dice;
        kappa_acc += m.kappa;
        if (m.hd_defined) {
          hd_acc += m.hd_mm;
          ++hd_n;
        }
      }
      rec.val_dice = dice_acc / static_cast<double>(val_set.size());
      rec.val_kappa = kappa_acc / static_cast<double>(val_set.size());
      rec.val_hd_defined = hd_n > 0;
      rec.val_hd = hd_n > 0 ? hd_acc / hd_n : 0.0;
    }

    rec.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    CheckpointExtras extras;
    extras.step = opt.t;
    extras.epoch = static_cast<std::uint64_t>(epoch + 1);
    extras.master_seed = cfg.seed;
    extras.rng_state = train_rng.state();
    extras.best_val_dice = best_val_dice;
    save_checkpoint(*model, &opt, extras, last_path);
    if (!val_set.empty() && rec.val_dice > best_val_dice) {
      best_val_dice = rec.val_dice;
      extras.best_val_dice = best_val_dice;
      save_checkpoint(*model, &opt, extras, best_path);
    }

    runlog << fmt_epoch(rec) << "\n";
    runlog.flush();
    if (progress) (*progress) << fmt_epoch(rec) << std::endl;
    result.records.push_back(rec);
    result.best_val_dice = best_val_dice;
  }
  return result;
}

}  // namespace knotseg
