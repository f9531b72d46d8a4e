#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knotseg/convlstm.hpp"
#include "knotseg/ops.hpp"

namespace knotseg {

enum class Variant { kSegNet, kUNet, kConvLstm };

inline const char* variant_id(Variant v) {
  switch (v) {
    case Variant::kSegNet: return "segnet";
    case Variant::kUNet: return "unet";
    case Variant::kConvLstm: return "convlstm";
  }
  return "?";
}

inline const char* variant_display(Variant v) {
  switch (v) {
    case Variant::kSegNet: return "SegNet";
    case Variant::kUNet: return "U-Net";
    case Variant::kConvLstm: return "ConvLSTM";
  }
  return "?";
}

inline Variant variant_from_id(const std::string& s) {
  if (s == "segnet") return Variant::kSegNet;
  if (s == "unet") return Variant::kUNet;
  if (s == "convlstm") return Variant::kConvLstm;
  fail("unknown model variant '", s, "' (valid: segnet, unet, convlstm)");
}

/// Architecture hyperparameters. The full preset matches the training
/// protocol (192x192, 40-slice volumes, channels 32/48/64); the desk preset
/// shrinks everything for CPU-scale runs and CI.
struct ModelConfig {
  Variant variant = Variant::kConvLstm;
  int input_resolution = 192;
  int sequence_length = 40;
  std::array<int, 3> encoder_channels{32, 48, 64};
  float dropout_p = 0.1f;
  std::string scale_preset = "full";

  static ModelConfig desk(Variant v) {
    ModelConfig c;
    c.variant = v;
    c.input_resolution = 48;
    c.sequence_length = 12;
    c.encoder_channels = {8, 12, 16};
    c.scale_preset = "desk";
    return c;
  }

  void validate() const {
    require(input_resolution > 0 && input_resolution % 8 == 0,
            "model config: input_resolution must be a positive multiple of 8 "
            "(3 pooling stages), got ", input_resolution);
    require(sequence_length >= 1, "model config: sequence_length must be >= 1");
    for (int ch : encoder_channels) {
      require(ch >= 1, "model config: encoder channels must be positive");
    }
    require(dropout_p >= 0.0f && dropout_p < 1.0f,
            "model config: dropout_p must be in [0,1), got ", dropout_p);
  }

  bool operator==(const ModelConfig& o) const {
    return variant == o.variant && input_resolution == o.input_resolution &&
           sequence_length == o.sequence_length &&
           encoder_channels == o.encoder_channels && dropout_p == o.dropout_p &&
           scale_preset == o.scale_preset;
  }

  std::string summary() const {
    return format_msg(variant_id(variant), " res=", input_resolution,
                      " seq=", sequence_length, " ch=", encoder_channels[0],
                      "/", encoder_channels[1], "/", encoder_channels[2],
                      " dropout=", dropout_p, " preset=", scale_preset);
  }
};

namespace detail {

/// Conv3x3 + BatchNorm + ReLU unit used by every feedforward block.
template <typename Scalar>
struct ConvBn {
  Tensor<Scalar> w, b, gamma, beta;
  BnState<Scalar> bn;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode,
                         Tape<Scalar>* tape) {
    auto y = conv2d(x, w, b, tape);
    y = batchnorm2d(y, gamma, beta, bn, mode, tape);
    return relu(y, tape);
  }
};

template <typename Scalar>
struct FfEncBlock {
  ConvBn<Scalar> c1, c2;
};

template <typename Scalar>
struct DecBlock {
  ConvBn<Scalar> c1, c2;
};

template <typename Scalar>
struct BiLstmBlock {
  ConvLstmCellParams<Scalar> fwd, bwd;
};

}  // namespace detail

/// One of the three segmentation networks, mapping [T,1,H,W] contour stacks
/// to per-pixel knot logits of the same shape. The feedforward variants treat
/// the slice axis as a batch axis; the ConvLSTM variant propagates state
/// along it in both directions.
template <typename Scalar>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = derive_rng(seed, "model-init");
    const auto& ch = cfg_.encoder_channels;
    if (cfg_.variant == Variant::kConvLstm) {
      int cin = 1;
      for (int i = 0; i < 3; ++i) {
        lstm_enc_.push_back(make_bilstm(i, cin, ch[i], rng));
        cin = ch[i];
      }
    } else {
      int cin = 1;
      for (int i = 0; i < 3; ++i) {
        detail::FfEncBlock<Scalar> blk;
        blk.c1 = make_convbn(prefix("enc", i, "1"), cin, ch[i], 3, rng);
        blk.c2 = make_convbn(prefix("enc", i, "2"), ch[i], ch[i], 3, rng);
        ff_enc_.push_back(std::move(blk));
        cin = ch[i];
      }
    }
    // Decoder widths mirror the encoder: blocks emit [c2, c1, c0]. The U-Net
    // variant concatenates the matching-resolution encoder features first.
    const int dec_out[3] = {ch[2], ch[1], ch[0]};
    const int skip_ch[3] = {ch[2], ch[1], ch[0]};
    int prev = ch[2];
    for (int i = 0; i < 3; ++i) {
      const int cin_block =
          cfg_.variant == Variant::kUNet ? prev + skip_ch[i] : prev;
      detail::DecBlock<Scalar> blk;
      blk.c1 = make_convbn(prefix("dec", i, "1"), cin_block, dec_out[i], 3, rng);
      blk.c2 = make_convbn(prefix("dec", i, "2"), dec_out[i], dec_out[i], 3,
                           rng);
      dec_.push_back(std::move(blk));
      prev = dec_out[i];
    }
    final_w_ = Tensor<Scalar>::uniform_fan_in({1, ch[0], 1, 1}, ch[0], rng)
                   .set_requires_grad()
                   .set_name("final.w");
    final_b_ = Tensor<Scalar>::zeros({1}).set_requires_grad().set_name(
        "final.b");
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// Full forward pass. `dropout_rng` is only consulted by the ConvLSTM
  /// variant in train mode (dropout sits between encoder and decoder).
  Tensor<Scalar> forward(const Tensor<Scalar>& volume, Mode mode,
                         Tape<Scalar>* tape, Rng* dropout_rng = nullptr) {
    require(volume.rank() == 4 && volume.dim(1) == 1,
            "model: input must be [T,1,H,W], got ", shape_str(volume.shape()));
    require(volume.dim(2) % 8 == 0 && volume.dim(3) % 8 == 0,
            "model: spatial dims must be divisible by 8, got ",
            volume.dim(2), "x", volume.dim(3));

    switch (cfg_.variant) {
      case Variant::kSegNet: {
        auto x = volume;
        for (auto& blk : ff_enc_) {
          x = blk.c2.forward(blk.c1.forward(x, mode, tape), mode, tape);
          x = maxpool2(x, tape);
        }
        return decode(x, {}, mode, tape);
      }
      case Variant::kUNet: {
        auto x = volume;
        std::vector<Tensor<Scalar>> skips;
        for (auto& blk : ff_enc_) {
          x = blk.c2.forward(blk.c1.forward(x, mode, tape), mode, tape);
          skips.push_back(x);
          x = maxpool2(x, tape);
        }
        return decode(x, skips, mode, tape);
      }
      case Variant::kConvLstm: {
        auto x = volume;
        for (auto& blk : lstm_enc_) {
          x = biconvlstm_block(x, blk.fwd, blk.bwd, tape);
          x = maxpool2(x, tape);
        }
        if (mode == Mode::kTrain && cfg_.dropout_p > 0.0f) {
          require(dropout_rng != nullptr,
                  "model: ConvLSTM train-mode forward needs a dropout RNG");
          x = dropout(x, cfg_.dropout_p, mode, *dropout_rng, tape);
        }
        return decode(x, {}, mode, tape);
      }
    }
    fail_runtime("model: unreachable variant");
  }

  /// All learnable parameters in stable construction order.
  std::vector<Tensor<Scalar>> parameters() {
    std::vector<Tensor<Scalar>> out;
    auto take_convbn = [&](detail::ConvBn<Scalar>& cb) {
      out.push_back(cb.w);
      out.push_back(cb.b);
      out.push_back(cb.gamma);
      out.push_back(cb.beta);
    };
    for (auto& blk : lstm_enc_) {
      for (auto* dir : {&blk.fwd, &blk.bwd}) {
        for (auto* t : {&dir->w_xi, &dir->w_xf, &dir->w_xo, &dir->w_xg,
                        &dir->w_hi, &dir->w_hf, &dir->w_ho, &dir->w_hg,
                        &dir->b_i, &dir->b_f, &dir->b_o, &dir->b_g}) {
          out.push_back(*t);
        }
      }
    }
    for (auto& blk : ff_enc_) {
      take_convbn(blk.c1);
      take_convbn(blk.c2);
    }
    for (auto& blk : dec_) {
      take_convbn(blk.c1);
      take_convbn(blk.c2);
    }
    out.push_back(final_w_);
    out.push_back(final_b_);
    return out;
  }

  /// Batchnorm running statistics, in stable order, named to mirror the
  /// owning layer.
  std::vector<std::pair<std::string, BnState<Scalar>*>> bn_states() {
    std::vector<std::pair<std::string, BnState<Scalar>*>> out;
    for (std::size_t i = 0; i < ff_enc_.size(); ++i) {
      out.emplace_back(prefix("enc", static_cast<int>(i), "1"),
                       &ff_enc_[i].c1.bn);
      out.emplace_back(prefix("enc", static_cast<int>(i), "2"),
                       &ff_enc_[i].c2.bn);
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      out.emplace_back(prefix("dec", static_cast<int>(i), "1"),
                       &dec_[i].c1.bn);
      out.emplace_back(prefix("dec", static_cast<int>(i), "2"),
                       &dec_[i].c2.bn);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

 private:
  static std::string prefix(const char* stage, int i, const char* sub) {
    return format_msg(stage, i, ".", sub);
  }

  detail::ConvBn<Scalar> make_convbn(const std::string& name, int cin,
                                     int cout, int k, Rng& rng) {
    detail::ConvBn<Scalar> cb;
    cb.w = Tensor<Scalar>::uniform_fan_in({cout, cin, k, k},
                                          static_cast<std::int64_t>(cin) * k * k,
                                          rng)
               .set_requires_grad()
               .set_name(name + ".conv.w");
    cb.b = Tensor<Scalar>::zeros({cout}).set_requires_grad().set_name(
        name + ".conv.b");
    cb.gamma = Tensor<Scalar>::full({cout}, Scalar(1))
                   .set_requires_grad()
                   .set_name(name + ".bn.gamma");
    cb.beta = Tensor<Scalar>::zeros({cout}).set_requires_grad().set_name(
        name + ".bn.beta");
    cb.bn = BnState<Scalar>(cout);
    return cb;
  }

  detail::BiLstmBlock<Scalar> make_bilstm(int i, int cin, int chid, Rng& rng) {
    auto make_dir = [&](const char* dir) {
      ConvLstmCellParams<Scalar> p;
      const std::string base = format_msg("enc", i, ".", dir, ".");
      const std::int64_t fan_x = static_cast<std::int64_t>(cin) * 9;
      const std::int64_t fan_h = static_cast<std::int64_t>(chid) * 9;
      auto kernel = [&](const char* nm, int cin_k, std::int64_t fan) {
        return Tensor<Scalar>::uniform_fan_in({chid, cin_k, 3, 3}, fan, rng)
            .set_requires_grad()
            .set_name(base + nm);
      };
      p.w_xi = kernel("w_xi", cin, fan_x);
      p.w_xf = kernel("w_xf", cin, fan_x);
      p.w_xo = kernel("w_xo", cin, fan_x);
      p.w_xg = kernel("w_xg", cin, fan_x);
      p.w_hi = kernel("w_hi", chid, fan_h);
      p.w_hf = kernel("w_hf", chid, fan_h);
      p.w_ho = kernel("w_ho", chid, fan_h);
      p.w_hg = kernel("w_hg", chid, fan_h);
      p.b_i = Tensor<Scalar>::zeros({chid}).set_requires_grad().set_name(
          base + "b_i");
      // +1 forget-gate bias keeps early cell state from washing out.
      p.b_f = Tensor<Scalar>::full({chid}, Scalar(1))
                  .set_requires_grad()
                  .set_name(base + "b_f");
      p.b_o = Tensor<Scalar>::zeros({chid}).set_requires_grad().set_name(
          base + "b_o");
      p.b_g = Tensor<Scalar>::zeros({chid}).set_requires_grad().set_name(
          base + "b_g");
      return p;
    };
    detail::BiLstmBlock<Scalar> blk;
    blk.fwd = make_dir("fwd");
    blk.bwd = make_dir("bwd");
    return blk;
  }

  Tensor<Scalar> decode(Tensor<Scalar> x,
                        const std::vector<Tensor<Scalar>>& skips, Mode mode,
                        Tape<Scalar>* tape) {
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      x = upsample_nearest2(x, tape);
      if (!skips.empty()) {
        x = concat_channels(x, skips[skips.size() - 1 - i], tape);
      }
      x = dec_[i].c2.forward(dec_[i].c1.forward(x, mode, tape), mode, tape);
    }
    return conv2d(x, final_w_, final_b_, tape);
  }

  ModelConfig cfg_;
  std::vector<detail::BiLstmBlock<Scalar>> lstm_enc_;
  std::vector<detail::FfEncBlock<Scalar>> ff_enc_;
  std::vector<detail::DecBlock<Scalar>> dec_;
  Tensor<Scalar> final_w_, final_b_;
};

}  // namespace knotseg
