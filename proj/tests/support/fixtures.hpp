// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model builders and helpers shared by unit tests, the acceptance runner
// and the benchmarks.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "neuroflow/graph_ir.hpp"
#include "neuroflow/quantizer.hpp"

namespace neuroflow::testing {

/// Float MLP: Linear layers of `dims`, ReLU between them, optional trailing
/// Softmax. Weight rows at or beyond `valid_out` in the last layer are zero.
ApplicationGraph make_mlp(const std::vector<int>& dims, std::uint32_t seed, bool softmax = true, int valid_out = -1);

/// The evaluation MLP: 784-512-256-16 with Softmax, 10 valid classes.
ApplicationGraph make_eval_mlp(std::uint32_t seed);

/// int8 input (exp -4) -> Linear -> int8 (exp -5) -> Dequantize -> Softmax ->
/// Quantize(-7): exponents match across every QDQ pair.
ApplicationGraph qdq_softmax_graph(std::uint32_t seed);

std::vector<float> random_floats(std::size_t n, std::mt19937& rng, float lo = 0.0f, float hi = 1.0f);
std::vector<std::int8_t> random_int8(std::size_t n, std::mt19937& rng);
CalibrationSet random_calibration(std::size_t count, std::size_t dim, std::uint32_t seed);

/// Every activation edge given an exponent, ready for the quantized oracle.
ApplicationGraph quantized_eval_mlp(std::uint32_t seed, bool use_cle = true);

/// Directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Directory holding the checked-in data files (calibration targets).
std::filesystem::path data_dir();

}  // namespace neuroflow::testing
