#pragma once

#include <utility>
#include <vector>

#include "knotseg/ops.hpp"

namespace knotseg {

/// Gate parameters of one convolutional LSTM direction. All kernels are 3x3;
/// input-to-gate kernels are [Chid,Cin,3,3], hidden-to-gate kernels
/// [Chid,Chid,3,3], biases [Chid].
template <typename Scalar>
struct ConvLstmCellParams {
  Tensor<Scalar> w_xi, w_xf, w_xo, w_xg;
  Tensor<Scalar> w_hi, w_hf, w_ho, w_hg;
  Tensor<Scalar> b_i, b_f, b_o, b_g;

  std::int64_t hidden_channels() const { return w_xi.dim(0); }
  std::int64_t input_channels() const { return w_xi.dim(1); }
};

template <typename Scalar>
struct LstmStatePair {
  Tensor<Scalar> h;
  Tensor<Scalar> c;
};

/// One recurrence step:
///   i = sigma(Wxi*x + Whi*h + bi)    f = sigma(Wxf*x + Whf*h + bf)
///   o = sigma(Wxo*x + Who*h + bo)    g = tanh(Wxg*x + Whg*h + bg)
///   c' = f.c + i.g                   h' = o.tanh(c')
/// with same-padded convolutions as the gate transforms.
template <typename Scalar>
LstmStatePair<Scalar> convlstm_cell_step(const Tensor<Scalar>& x,
                                         const Tensor<Scalar>& h,
                                         const Tensor<Scalar>& c,
                                         const ConvLstmCellParams<Scalar>& p,
                                         Tape<Scalar>* tape) {
  require(same_shape(h, c), "convlstm_cell_step: hidden state ",
          shape_str(h.shape()), " and cell state ", shape_str(c.shape()),
          " must share shape");

  auto gate = [&](const Tensor<Scalar>& wx, const Tensor<Scalar>& wh,
                  const Tensor<Scalar>& b, Act act) {
    auto pre = add(conv2d(x, wx, b, tape), conv2d(h, wh, tape), tape);
    return activation(pre, act, tape);
  };

  auto i = gate(p.w_xi, p.w_hi, p.b_i, Act::kSigmoid);
  auto f = gate(p.w_xf, p.w_hf, p.b_f, Act::kSigmoid);
  auto o = gate(p.w_xo, p.w_ho, p.b_o, Act::kSigmoid);
  auto g = gate(p.w_xg, p.w_hg, p.b_g, Act::kTanh);

  auto c_next = add(mul(f, c, tape), mul(i, g, tape), tape);
  auto h_next = mul(o, tanh_act(c_next, tape), tape);
  return {std::move(h_next), std::move(c_next)};
}

/// Bidirectional ConvLSTM over a [T,Cin,H,W] sequence. Both directions start
/// from zero states and their per-timestep hidden outputs are fused by
/// elementwise sum, giving [T,Chid,H,W].
template <typename Scalar>
Tensor<Scalar> biconvlstm_block(const Tensor<Scalar>& seq,
                                const ConvLstmCellParams<Scalar>& fwd,
                                const ConvLstmCellParams<Scalar>& bwd,
                                Tape<Scalar>* tape) {
  require(seq.rank() == 4, "biconvlstm_block: sequence must be [T,C,H,W], "
          "got ", shape_str(seq.shape()));
  const std::int64_t t_len = seq.dim(0);
  require(t_len >= 1, "biconvlstm_block: empty sequence");
  require(fwd.hidden_channels() == bwd.hidden_channels(),
          "biconvlstm_block: directions disagree on hidden channels (",
          fwd.hidden_channels(), " vs ", bwd.hidden_channels(), ")");
  const std::int64_t chid = fwd.hidden_channels();
  const std::int64_t h = seq.dim(2), w = seq.dim(3);

  auto run_direction = [&](const ConvLstmCellParams<Scalar>& p, bool reverse) {
    std::vector<Tensor<Scalar>> outs(static_cast<std::size_t>(t_len));
    auto hidden = Tensor<Scalar>::zeros({1, chid, h, w});
    auto cell = Tensor<Scalar>::zeros({1, chid, h, w});
    for (std::int64_t step = 0; step < t_len; ++step) {
      const std::int64_t t = reverse ? t_len - 1 - step : step;
      auto x_t = slice0(seq, t, tape);
      auto next = convlstm_cell_step(x_t, hidden, cell, p, tape);
      hidden = next.h;
      cell = next.c;
      outs[static_cast<std::size_t>(t)] = hidden;
    }
    return outs;
  };

  auto fwd_outs = run_direction(fwd, false);
  auto bwd_outs = run_direction(bwd, true);

  std::vector<Tensor<Scalar>> fused(static_cast<std::size_t>(t_len));
  for (std::int64_t t = 0; t < t_len; ++t) {
    fused[static_cast<std::size_t>(t)] =
        add(fwd_outs[static_cast<std::size_t>(t)],
            bwd_outs[static_cast<std::size_t>(t)], tape);
  }
  return concat0(fused, tape);
}

}  // namespace knotseg
