// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "neuroflow/error.hpp"
#include "neuroflow/oracle.hpp"
#include "neuroflow/quantizer.hpp"

namespace nf = neuroflow;
using namespace neuroflow::testing;

namespace {

// Independent reference: long-double MSE over every exponent, first minimum wins.
int sweep_exponent(const std::vector<float>& v) {
  if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) return 0;
  int best = 0;
  long double best_err = std::numeric_limits<long double>::infinity();
  for (int e = -31; e <= 31; ++e) {
    const long double step = std::ldexp(1.0L, e);
    long double err = 0;
    for (float x : v) {
      long double q = std::roundl(static_cast<long double>(x) / step);
      q = std::clamp(q, -128.0L, 127.0L);
      const long double d = static_cast<long double>(x) - q * step;
      err += d * d;
    }
    if (err < best_err) {
      best_err = err;
      best = e;
    }
  }
  return best;
}

nf::FloatMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937& rng, float scale = 1.0f) {
  nf::FloatMatrix m{r, c, random_floats(r * c, rng, -scale, scale)};
  return m;
}

float row_max(const nf::FloatMatrix& m, std::size_t r) {
  float v = 0;
  for (std::size_t c = 0; c < m.cols; ++c) v = std::max(v, std::fabs(m.at(r, c)));
  return v;
}

float col_max(const nf::FloatMatrix& m, std::size_t c) {
  float v = 0;
  for (std::size_t r = 0; r < m.rows; ++r) v = std::max(v, std::fabs(m.at(r, c)));
  return v;
}

}  // namespace

TEST(BestPow2, ExactMultiplesOfTwoToMinusSeven) {
  EXPECT_EQ(nf::best_pow2_exponent(std::vector<float>{0.5f, -0.25f, 0.75f}), -7);
}

TEST(BestPow2, AllZeroIsZero) { EXPECT_EQ(nf::best_pow2_exponent(std::vector<float>{0.0f, 0.0f}), 0); }

TEST(BestPow2, OneTwentySevenFitsAtZero) { EXPECT_EQ(nf::best_pow2_exponent(std::vector<float>{127.0f}), 0); }

TEST(BestPow2, MatchesLongDoubleSweep) {
  std::mt19937 rng(11);
  for (int t = 0; t < 40; ++t) {
    const float scale = std::ldexp(1.0f, static_cast<int>(rng() % 20) - 10);
    auto v = random_floats(1 + rng() % 300, rng, -scale, scale);
    EXPECT_EQ(nf::best_pow2_exponent(v), sweep_exponent(v)) << "trial " << t;
  }
}

TEST(BestPow2, PermutationInvariant) {
  std::mt19937 rng(12);
  for (int t = 0; t < 20; ++t) {
    auto v = random_floats(257, rng, -3.0f, 3.0f);
    const int e = nf::best_pow2_exponent(v);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(v.begin(), v.end(), rng);
      EXPECT_EQ(nf::best_pow2_exponent(v), e);
    }
  }
}

TEST(BestPow2, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(nf::best_pow2_exponent(std::vector<float>{}), nf::Error);
  EXPECT_THROW(nf::best_pow2_exponent(std::vector<float>{1.0f, std::nanf("")}), nf::Error);
}

TEST(QuantizeTensor, Examples) {
  EXPECT_EQ(nf::quantize_tensor(std::vector<float>{0.75f}, -7)[0], 96);
  EXPECT_EQ(nf::quantize_tensor(std::vector<float>{0.0f}, 5)[0], 0);
  EXPECT_EQ(nf::quantize_tensor(std::vector<float>{2.0f}, -7)[0], 127);
  EXPECT_EQ(nf::quantize_tensor(std::vector<float>{-2.0f}, -7)[0], -128);
  EXPECT_EQ(nf::quantize_tensor(std::vector<float>{-0.01171875f}, -7)[0], -2);  // -1.5 rounds away from zero
  EXPECT_THROW(nf::quantize_tensor(std::vector<float>{1.0f}, 32), nf::Error);
}

TEST(QuantizeTensor, RoundTripWithinHalfStep) {
  std::mt19937 rng(13);
  for (int e = -10; e <= 2; ++e) {
    const auto v = random_floats(500, rng, -200.0f * std::ldexp(1.0f, e), 200.0f * std::ldexp(1.0f, e));
    const auto back = nf::dequantize_tensor(nf::quantize_tensor(v, e), e);
    const double bound = std::ldexp(1.0, e - 1);
    const double lo = -128.0 * std::ldexp(1.0, e), hi = 127.0 * std::ldexp(1.0, e);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < lo || v[i] > hi) continue;
      EXPECT_LE(std::fabs(static_cast<double>(v[i]) - back[i]), bound);
    }
  }
}

TEST(Cle, HandExample) {
  nf::FloatMatrix w1{2, 2, {4.0f, 1.0f, 1.0f, 1.0f}};
  nf::FloatMatrix w2{2, 2, {1.0f, 1.0f, 0.5f, 1.0f}};
  const auto eq = nf::cross_layer_equalize(w1, std::vector<float>{2.0f, 3.0f}, w2);
  EXPECT_DOUBLE_EQ(eq.scales[0], 2.0);
  EXPECT_DOUBLE_EQ(eq.scales[1], 1.0);
  EXPECT_EQ(eq.w1.data, (std::vector<float>{2.0f, 0.5f, 1.0f, 1.0f}));
  EXPECT_EQ(eq.w2.data, (std::vector<float>{2.0f, 1.0f, 1.0f, 1.0f}));
  EXPECT_EQ(*eq.b1, (std::vector<float>{1.0f, 3.0f}));
}

TEST(Cle, IdentityIsUnchanged) {
  nf::FloatMatrix id{3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  const auto eq = nf::cross_layer_equalize(id, std::nullopt, id);
  EXPECT_EQ(eq.scales, std::vector<double>(3, 1.0));
  EXPECT_EQ(eq.w1.data, id.data);
  EXPECT_EQ(eq.w2.data, id.data);
}

TEST(Cle, ZeroColumnLeavesChannel) {
  nf::FloatMatrix w1{2, 2, {4, 4, 1, 1}};
  nf::FloatMatrix w2{2, 2, {0, 1, 0, 1}};
  const auto eq = nf::cross_layer_equalize(w1, std::nullopt, w2);
  EXPECT_EQ(eq.scales[0], 1.0);
  EXPECT_EQ(eq.w1.at(0, 0), 4.0f);
}

TEST(Cle, ShapeMismatchRejected) {
  nf::FloatMatrix w1{2, 3, std::vector<float>(6, 1.0f)};
  nf::FloatMatrix w2{2, 3, std::vector<float>(6, 1.0f)};
  EXPECT_THROW(nf::cross_layer_equalize(w1, std::nullopt, w2), nf::Error);
}

TEST(Cle, RangesEqualisedPerChannel) {
  std::mt19937 rng(14);
  for (int t = 0; t < 10; ++t) {
    auto w1 = random_matrix(12, 7, rng, 3.0f);
    auto w2 = random_matrix(5, 12, rng, 0.2f);
    const auto eq = nf::cross_layer_equalize(w1, std::nullopt, w2);
    for (std::size_t i = 0; i < 12; ++i) {
      const float a = row_max(eq.w1, i), b = col_max(eq.w2, i);
      EXPECT_NEAR(a, b, 1e-6 * std::max(a, b));
    }
  }
}

TEST(Cle, ModelFunctionPreserved) {
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    const auto g = make_mlp({20, 16, 12, 6}, seed, false);
    const auto e = nf::equalize_model(g);
    EXPECT_NE(e.constants, g.constants);
    std::mt19937 rng(seed);
    for (int i = 0; i < 20; ++i) {
      const auto x = random_floats(20, rng);
      const auto a = nf::float_forward(g, x), b = nf::float_forward(e, x);
      float amax = 0;
      for (float v : a) amax = std::max(amax, std::fabs(v));
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LE(std::fabs(a[k] - b[k]), 1e-4f * std::max(amax, 1e-6f));
    }
  }
}

TEST(QuantizeModel, EmptyCalibrationRejected) {
  EXPECT_THROW(nf::quantize_model(make_mlp({8, 4}, 1), nf::CalibrationSet{}), nf::Error);
}

TEST(QuantizeModel, IdentityLinearExponents) {
  auto g = make_mlp({8, 8}, 1, false);
  std::vector<float> ident(64, 0.0f);
  for (int i = 0; i < 8; ++i) ident[static_cast<std::size_t>(i * 9)] = 1.0f;
  g.set_constant("fc1.weight", std::span<const float>(ident));
  std::vector<float> zeros(8, 0.0f);
  g.set_constant("fc1.bias", std::span<const float>(zeros));
  std::mt19937 rng(2);
  nf::CalibrationSet c;
  std::vector<float> all;
  for (int i = 0; i < 64; ++i) {
    c.samples.push_back(random_floats(8, rng, -1.0f, 1.0f));
    all.insert(all.end(), c.samples.back().begin(), c.samples.back().end());
  }
  const auto q = nf::quantize_model(g, c, {false});
  EXPECT_EQ(q.tensor("fc1.weight").scale_exp, sweep_exponent(ident));
  EXPECT_EQ(q.tensor("fc1.weight").scale_exp, -6);  // 1.0 saturates at -7
  EXPECT_EQ(q.tensor("input").scale_exp, sweep_exponent(all));
  EXPECT_EQ(q.tensor("input").scale_exp, -7);
}

TEST(QuantizeModel, BalancedNetworkUnaffectedByCle) {
  auto g = make_mlp({6, 6, 6}, 3, false);
  std::mt19937 rng(3);
  for (auto w : {"fc1.weight", "fc2.weight"}) {
    std::vector<float> v(36);
    for (auto& x : v) x = (rng() & 1) ? 0.5f : -0.5f;
    g.set_constant(w, std::span<const float>(v));
  }
  const auto calib = random_calibration(16, 6, 4);
  const auto a = nf::quantize_model(g, calib, {true});
  const auto b = nf::quantize_model(g, calib, {false});
  EXPECT_EQ(a.constants.at("fc1.weight"), b.constants.at("fc1.weight"));
  EXPECT_EQ(a.constants.at("fc2.weight"), b.constants.at("fc2.weight"));
}

TEST(QuantizeModel, ExponentsInRangeAndBiasAtInPlusW) {
  const auto q = nf::quantize_model(make_eval_mlp(5), random_calibration(16, 784, 6));
  EXPECT_TRUE(q.is_quantized());
  for (const auto& [name, spec] : q.tensors) {
    ASSERT_TRUE(spec.scale_exp) << name;
    EXPECT_GE(*spec.scale_exp, -31);
    EXPECT_LE(*spec.scale_exp, 31);
  }
  for (const auto& n : q.nodes) {
    if (n.kind == nf::NodeKind::Softmax) EXPECT_EQ(n.out_exp, -7);
    if (!n.is_linear_family()) continue;
    EXPECT_EQ(*q.tensor(*n.bias).scale_exp, n.in_exps[0] + *q.tensor(*n.weight).scale_exp);
  }
}

TEST(QuantizeModel, Top1AgreementWithFloat) {
  const auto g = make_eval_mlp(7);
  const auto calib = random_calibration(128, 784, 8);
  const auto q = nf::fuse_linear_relu(nf::quantize_model(g, calib));
  const int in_exp = *q.tensor("input").scale_exp;
  int agree = 0;
  for (const auto& x : calib.samples) {
    const auto f = nf::float_forward(g, x);
    const auto y = nf::quant_forward(q, nf::quantize_tensor(x, in_exp));
    const auto fa = std::max_element(f.begin(), f.begin() + 10) - f.begin();
    const auto qa = std::max_element(y.begin(), y.begin() + 10) - y.begin();
    // Saturated probabilities tie at 127; the float argmax must be among the top lanes.
    agree += (fa == qa || y[static_cast<std::size_t>(fa)] == y[static_cast<std::size_t>(qa)]) ? 1 : 0;
  }
  EXPECT_GE(agree, 127);  // >= 99% of 128
}
