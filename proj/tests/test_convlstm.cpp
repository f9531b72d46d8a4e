#include <doctest.h>

#include <cmath>
#include <cstring>

#include "knotseg/convlstm.hpp"
#include "testutil.hpp"

using knotseg::ConvLstmCellParams;
using knotseg::Rng;
using knotseg::Tape;
using testutil::check_gradients;
using testutil::fill_uniform;
using testutil::T64;

namespace {

ConvLstmCellParams<double> zero_params(int cin, int chid) {
  ConvLstmCellParams<double> p;
  p.w_xi = T64::zeros({chid, cin, 3, 3});
  p.w_xf = T64::zeros({chid, cin, 3, 3});
  p.w_xo = T64::zeros({chid, cin, 3, 3});
  p.w_xg = T64::zeros({chid, cin, 3, 3});
  p.w_hi = T64::zeros({chid, chid, 3, 3});
  p.w_hf = T64::zeros({chid, chid, 3, 3});
  p.w_ho = T64::zeros({chid, chid, 3, 3});
  p.w_hg = T64::zeros({chid, chid, 3, 3});
  p.b_i = T64::zeros({chid});
  p.b_f = T64::zeros({chid});
  p.b_o = T64::zeros({chid});
  p.b_g = T64::zeros({chid});
  return p;
}

ConvLstmCellParams<double> random_params(int cin, int chid, Rng& rng,
                                         const std::string& tag) {
  auto p = zero_params(cin, chid);
  auto init = [&](T64& t, const char* nm) {
    fill_uniform(t, rng, -0.4, 0.4);
    t.set_requires_grad().set_name(tag + nm);
  };
  init(p.w_xi, ".w_xi");
  init(p.w_xf, ".w_xf");
  init(p.w_xo, ".w_xo");
  init(p.w_xg, ".w_xg");
  init(p.w_hi, ".w_hi");
  init(p.w_hf, ".w_hf");
  init(p.w_ho, ".w_ho");
  init(p.w_hg, ".w_hg");
  init(p.b_i, ".b_i");
  init(p.b_f, ".b_f");
  init(p.b_o, ".b_o");
  init(p.b_g, ".b_g");
  return p;
}

std::vector<T64> all_tensors(ConvLstmCellParams<double>& p) {
  return {p.w_xi, p.w_xf, p.w_xo, p.w_xg, p.w_hi, p.w_hf,
          p.w_ho, p.w_hg, p.b_i,  p.b_f,  p.b_o,  p.b_g};
}

}  // namespace

TEST_CASE("convlstm cell: all-zero inputs give half-open gates and zero "
          "states") {
  auto p = zero_params(1, 2);
  auto x = T64::zeros({1, 1, 4, 4});
  auto h = T64::zeros({1, 2, 4, 4});
  auto c = T64::zeros({1, 2, 4, 4});
  auto next = knotseg::convlstm_cell_step(x, h, c, p,
                                          static_cast<Tape<double>*>(nullptr));
  for (std::int64_t i = 0; i < next.c.numel(); ++i) CHECK(next.c[i] == 0.0);
  for (std::int64_t i = 0; i < next.h.numel(); ++i) CHECK(next.h[i] == 0.0);
}

TEST_CASE("convlstm cell: saturated forget gate carries the cell state") {
  auto p = zero_params(1, 1);
  for (std::int64_t i = 0; i < p.b_f.numel(); ++i) p.b_f[i] = 10.0;
  auto x = T64::zeros({1, 1, 3, 3});
  auto h = T64::zeros({1, 1, 3, 3});
  auto c = T64::zeros({1, 1, 3, 3});
  for (std::int64_t i = 0; i < c.numel(); ++i) c[i] = 0.3 + 0.05 * i;
  auto next = knotseg::convlstm_cell_step(x, h, c, p,
                                          static_cast<Tape<double>*>(nullptr));
  const double f = 1.0 / (1.0 + std::exp(-10.0));
  for (std::int64_t i = 0; i < c.numel(); ++i) {
    CHECK(next.c[i] == doctest::Approx(c[i] * f).epsilon(1e-12));
    CHECK(std::abs(next.c[i] - c[i]) <= 1e-4);
    CHECK(next.h[i] ==
          doctest::Approx(0.5 * std::tanh(next.c[i])).epsilon(1e-12));
  }
}

TEST_CASE("convlstm cell: rejects h/c shape mismatch") {
  auto p = zero_params(1, 2);
  auto x = T64::zeros({1, 1, 4, 4});
  auto h = T64::zeros({1, 2, 4, 4});
  auto c = T64::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(knotseg::convlstm_cell_step(
                      x, h, c, p, static_cast<Tape<double>*>(nullptr)),
                  std::invalid_argument);
}

TEST_CASE("convlstm cell: one-step gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto p = random_params(2, 2, rng, "cell");
    auto x = T64::zeros({1, 2, 3, 3}).set_requires_grad().set_name("x");
    auto h = T64::zeros({1, 2, 3, 3}).set_requires_grad().set_name("h");
    auto c = T64::zeros({1, 2, 3, 3}).set_requires_grad().set_name("c");
    auto m = T64::zeros({1, 2, 3, 3});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(h, rng, -0.5, 0.5);
    fill_uniform(c, rng, -0.5, 0.5);
    fill_uniform(m, rng, -1.0, 1.0);

    auto build = [&](Tape<double>* tape) {
      auto next = knotseg::convlstm_cell_step(x, h, c, p, tape);
      auto hm = knotseg::mul(next.h, m, tape);
      auto cm = knotseg::mul(next.c, m, tape);
      return knotseg::sum(knotseg::add(hm, cm, tape), tape);
    };
    auto leaves = all_tensors(p);
    leaves.push_back(x);
    leaves.push_back(h);
    leaves.push_back(c);
    auto res = check_gradients(leaves, build);
    CAPTURE(seed);
    CAPTURE(res.worst);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}

TEST_CASE("biconvlstm: T=1 degenerates to the sum of two one-step cells") {
  Rng rng(21);
  auto fwd = random_params(1, 2, rng, "f");
  auto bwd = random_params(1, 2, rng, "b");
  auto seq = T64::zeros({1, 1, 4, 4});
  fill_uniform(seq, rng, -1.0, 1.0);

  auto out = knotseg::biconvlstm_block(seq, fwd, bwd,
                                       static_cast<Tape<double>*>(nullptr));
  REQUIRE(out.shape() == knotseg::Shape{1, 2, 4, 4});

  auto h0 = T64::zeros({1, 2, 4, 4});
  auto c0 = T64::zeros({1, 2, 4, 4});
  auto sf = knotseg::convlstm_cell_step(seq, h0, c0, fwd,
                                        static_cast<Tape<double>*>(nullptr));
  auto sb = knotseg::convlstm_cell_step(seq, h0, c0, bwd,
                                        static_cast<Tape<double>*>(nullptr));
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] == sf.h[i] + sb.h[i]);
  }
}

TEST_CASE("biconvlstm: swapping directions and reversing input reverses the "
          "output bitwise") {
  Rng rng(22);
  auto fwd = random_params(2, 3, rng, "f");
  auto bwd = random_params(2, 3, rng, "b");
  const std::int64_t t_len = 5;
  auto seq = T64::zeros({t_len, 2, 4, 4});
  fill_uniform(seq, rng, -1.0, 1.0);

  auto reverse0 = [](const T64& x) {
    auto out = T64::zeros(x.shape());
    const std::int64_t block = x.numel() / x.dim(0);
    for (std::int64_t t = 0; t < x.dim(0); ++t) {
      std::memcpy(out.data() + t * block,
                  x.data() + (x.dim(0) - 1 - t) * block,
                  static_cast<std::size_t>(block) * sizeof(double));
    }
    return out;
  };

  auto out = knotseg::biconvlstm_block(seq, fwd, bwd,
                                       static_cast<Tape<double>*>(nullptr));
  auto out_swapped = knotseg::biconvlstm_block(
      reverse0(seq), bwd, fwd, static_cast<Tape<double>*>(nullptr));
  auto expect = reverse0(out);
  REQUIRE(out_swapped.shape() == expect.shape());
  CHECK(std::memcmp(out_swapped.data(), expect.data(),
                    static_cast<std::size_t>(expect.numel()) *
                        sizeof(double)) == 0);
}

TEST_CASE("biconvlstm: all-zero parameters give an all-zero output sequence") {
  Rng rng(23);
  auto fwd = zero_params(1, 2);
  auto bwd = zero_params(1, 2);
  auto seq = T64::zeros({4, 1, 4, 4});
  fill_uniform(seq, rng, -1.0, 1.0);
  auto out = knotseg::biconvlstm_block(seq, fwd, bwd,
                                       static_cast<Tape<double>*>(nullptr));
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("biconvlstm: empty sequence rejected") {
  auto fwd = zero_params(1, 2);
  auto bwd = zero_params(1, 2);
  auto seq = T64::zeros({0, 1, 4, 4});
  CHECK_THROWS_AS(knotseg::biconvlstm_block(
                      seq, fwd, bwd, static_cast<Tape<double>*>(nullptr)),
                  std::invalid_argument);
}

TEST_CASE("biconvlstm: multi-step gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed + 40);
    auto fwd = random_params(1, 2, rng, "f");
    auto bwd = random_params(1, 2, rng, "b");
    auto seq = T64::zeros({3, 1, 2, 2}).set_requires_grad().set_name("seq");
    auto m = T64::zeros({3, 2, 2, 2});
    fill_uniform(seq, rng, -1.0, 1.0);
    fill_uniform(m, rng, -1.0, 1.0);
    auto build = [&](Tape<double>* tape) {
      auto out = knotseg::biconvlstm_block(seq, fwd, bwd, tape);
      return knotseg::sum(knotseg::mul(out, m, tape), tape);
    };
    auto leaves = all_tensors(fwd);
    auto more = all_tensors(bwd);
    leaves.insert(leaves.end(), more.begin(), more.end());
    leaves.push_back(seq);
    auto res = check_gradients(leaves, build);
    CAPTURE(seed);
    CAPTURE(res.worst);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}
