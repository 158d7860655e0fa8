// SPDX-License-Identifier: Apache-2.0
#pragma once

// The compile flow from a model manifest to a DRAM image, and the host-side
// helpers around running compiled images.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neuroflow/dram_image.hpp"
#include "neuroflow/graph_ir.hpp"
#include "neuroflow/partitioner.hpp"
#include "neuroflow/quantizer.hpp"

namespace neuroflow {

struct CompileOptions {
  bool use_cle = true;
  PlanOptions plan;
  int num_pes = kMaxPes;
  std::uint32_t sram_budget = 98304;
};

struct CompileResult {
  ApplicationGraph qgraph;  // quantized, stripped and fused
  std::vector<Node> order;
  std::vector<TilePlan> plans;
  Mapping mapping;
  CompiledImage compiled;
  Bytes image;
};

/// Runs validate, quantize_model (skipped for already-quantized graphs),
/// strip_qdq, fuse_linear_relu, topo_sort, plan_model, map_model and
/// build_image. Errors name the failing pass.
CompileResult compile_model(const ApplicationGraph& model, const CalibrationSet& calib,
                            const CompileOptions& options = {});

std::filesystem::path symbols_path(const std::filesystem::path& image);
std::filesystem::path plan_path(const std::filesystem::path& image);
std::filesystem::path qmodel_path(const std::filesystem::path& image);

/// Writes the image, its symbol sidecar, the plan report and the quantized model.
void write_artifacts(const CompileResult& result, const std::filesystem::path& image);

std::string plan_report_json(const CompileResult& result);
std::string plan_summary(const CompileResult& result);

/// Accepts a headerless int8 blob of `len` bytes, or float32 of 4*len bytes
/// which is quantized with `exponent`.
std::vector<std::int8_t> decode_input(std::span<const std::uint8_t> raw, std::size_t len, int exponent);

}  // namespace neuroflow
