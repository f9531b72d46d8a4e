#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "knotseg/tape.hpp"
#include "knotseg/tensor.hpp"

namespace testutil {

using knotseg::Tape;
using knotseg::Tensor;

// All gradient oracles run the engine's double instantiation: the finite
// differences and the recomputed forward passes are 64-bit.
using T64 = Tensor<double>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
  bool ok = true;
  std::string worst;
};

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) / denom;
}

/// Central finite-difference gradient check. `build` must construct the graph
/// from the current leaf values and return the scalar loss; it is re-run for
/// every perturbation. Leaves to check must have requires_grad set.
inline GradCheckResult check_gradients(
    std::vector<T64> leaves,
    const std::function<T64(Tape<double>*)>& build, double rtol = 1e-3,
    double atol = 1e-6, double h = 1e-3) {
  GradCheckResult res;

  Tape<double> tape;
  T64 loss = build(&tape);
  knotseg::backward(tape, loss);

  for (auto& leaf : leaves) {
    for (std::int64_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf[i];
      leaf[i] = saved + h;
      const double fp = build(nullptr)[0];
      leaf[i] = saved - h;
      const double fm = build(nullptr)[0];
      leaf[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double err = std::abs(analytic - fd);
      const double tol = atol + rtol * std::max(std::abs(analytic),
                                                std::abs(fd));
      res.checked += 1;
      const double rerr = rel_err(analytic, fd);
      if (rerr > res.max_rel_err) {
        res.max_rel_err = rerr;
        res.worst = knotseg::format_msg(
            "leaf '", leaf.name(), "' [", i, "]: analytic=", analytic,
            " fd=", fd);
      }
      if (err > tol) res.ok = false;
    }
  }
  return res;
}

/// Fills a tensor with uniform values from [lo,hi], nudging anything within
/// `margin` of zero away from it (keeps relu/maxpool FD checks off the kink).
inline void fill_uniform(T64& t, knotseg::Rng& rng, double lo, double hi,
                         double margin = 0.0) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(lo, hi);
    if (margin > 0.0 && std::abs(v) < margin) {
      v = v < 0.0 ? v - margin : v + margin;
    }
    t[i] = v;
  }
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    base_ = std::filesystem::temp_directory_path() /
            ("knotseg_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(base_);
    std::filesystem::create_directories(base_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(base_, ec);
  }
  const std::filesystem::path& path() const { return base_; }

 private:
  std::filesystem::path base_;
};

}  // namespace testutil
