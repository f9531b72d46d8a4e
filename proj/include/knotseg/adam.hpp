#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "knotseg/common.hpp"
#include "knotseg/tensor.hpp"

namespace knotseg {

/// Bias-corrected Adam. Moment buffers are indexed in lockstep with the
/// parameter list handed to adam_step; lr default follows the training
/// protocol, betas/eps are the optimizer's usual defaults.
template <typename Scalar>
struct AdamState {
  Scalar lr = Scalar(0.0001);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  std::uint64_t t = 0;
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;

  void attach(const std::vector<Tensor<Scalar>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
      v.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
    }
  }
};

/// One optimizer step over all parameters. Parameters with no accumulated
/// gradient are treated as having zero gradient. A NaN gradient aborts the
/// step before any parameter is touched.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  require(params.size() == state.m.size(),
          "adam_step: state tracks ", state.m.size(), " parameters, got ",
          params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.has_grad()) continue;
    require(static_cast<std::size_t>(p.numel()) == state.m[pi].size(),
            "adam_step: moment shape mismatch for parameter ", p.name());
    for (const Scalar g : p.grad()) {
      if (std::isnan(static_cast<double>(g))) {
        fail_runtime("adam_step: NaN gradient in parameter '",
                     p.name().empty() ? "<unnamed>" : p.name(), "'");
      }
    }
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1),
                                    static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2),
                                    static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.has_grad()) continue;
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const auto& g = p.grad();
    Scalar* w = p.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = state.beta1 * m[i] + (Scalar(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (Scalar(1) - state.beta2) * g[i] * g[i];
      const Scalar mhat = m[i] / static_cast<Scalar>(bc1);
      const Scalar vhat = v[i] / static_cast<Scalar>(bc2);
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace knotseg
