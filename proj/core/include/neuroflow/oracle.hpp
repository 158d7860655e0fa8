// SPDX-License-Identifier: Apache-2.0
#pragma once

// Golden-model execution of float and quantized graphs. The quantized path
// defines the integer semantics the chip simulator has to reproduce exactly.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "neuroflow/graph_ir.hpp"

namespace neuroflow {

/// Integer parameters of one requantizing kernel.
struct QuantKernelSpec {
  int in_exp = 0;
  int w_exp = 0;
  int out_exp = 0;
  bool relu = false;

  /// Right shift applied to the accumulator: out_exp - (in_exp + w_exp).
  /// Throws when it falls outside [-31, 31].
  int shift() const;
};

double round_half_away_from_zero(double v);

/// shift >= 0 divides by 2^shift with round-half-away-from-zero, shift < 0
/// multiplies by 2^-shift; both saturate to int8.
std::int8_t requantize(std::int64_t acc, int shift);

/// Dequantize, float32 stable softmax, requantize.
std::vector<std::int8_t> softmax_int8(std::span<const std::int8_t> x, int in_exp, int out_exp = -7);

/// Float32 softmax with the row maximum subtracted first.
std::vector<float> softmax_f32(std::span<const float> x);

std::vector<float> float_forward(const ApplicationGraph& graph, std::span<const float> input);

/// Every tensor value computed by a float forward pass, keyed by name.
std::map<std::string, std::vector<float>> float_forward_trace(const ApplicationGraph& graph,
                                                              std::span<const float> input);

/// Integer execution in topological order. Graphs may still contain
/// Quantize/Dequantize nodes; float edges are evaluated in float32.
std::vector<std::int8_t> quant_forward(const ApplicationGraph& qgraph, std::span<const std::int8_t> input);

}  // namespace neuroflow
