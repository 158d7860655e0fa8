// SPDX-License-Identifier: Apache-2.0
#pragma once

// INT8 post-training quantization with power-of-two scales: MSE-optimal
// exponent search, cross-layer equalization, and whole-model conversion.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "neuroflow/graph_ir.hpp"

namespace neuroflow {

inline constexpr int kMinExponent = -31;
inline constexpr int kMaxExponent = 31;

/// A quantization scale restricted to 2^exponent.
class Pow2Scale {
 public:
  explicit Pow2Scale(int exponent);
  int exponent() const { return exponent_; }
  double real() const;

 private:
  int exponent_;
};

struct CalibrationSet {
  std::vector<std::vector<float>> samples;
  std::size_t size() const { return samples.size(); }
};

/// Exponent in [-31, 31] minimising the mean squared quantization error;
/// ties go to the smaller exponent. An all-zero tensor yields 0.
int best_pow2_exponent(std::span<const float> values, int bits = 8);

std::vector<std::int8_t> quantize_tensor(std::span<const float> values, int exponent);
std::vector<float> dequantize_tensor(std::span<const std::int8_t> values, int exponent);

/// Row-major dense matrix.
struct FloatMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct EqualizedPair {
  FloatMatrix w1;
  std::optional<std::vector<float>> b1;
  FloatMatrix w2;
  std::vector<double> scales;  // one factor per intermediate channel
};

/// Balances the ranges of w1 (m x k) output channels against the matching
/// w2 (n x m) input columns across a positive-homogeneous activation.
EqualizedPair cross_layer_equalize(const FloatMatrix& w1, const std::optional<std::vector<float>>& b1,
                                   const FloatMatrix& w2);

struct QuantizeOptions {
  bool use_cle = true;
  int softmax_out_exp = -7;
};

/// Applies CLE to every Linear-ReLU-Linear triple, then converts weights to
/// int8, biases to int32 and annotates every node with its exponents.
ApplicationGraph quantize_model(const ApplicationGraph& graph, const CalibrationSet& calib,
                                const QuantizeOptions& options = {});

/// The equalization step on its own (float graph in, float graph out).
ApplicationGraph equalize_model(const ApplicationGraph& graph);

}  // namespace neuroflow
