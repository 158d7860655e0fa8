// SPDX-License-Identifier: Apache-2.0
#pragma once

// Equal-tile partitioning of layers across worker PEs under the per-PE SRAM
// budget, chunked weight streaming, and PE placement.

#include <cstdint>
#include <string>
#include <vector>

#include "neuroflow/graph_ir.hpp"

namespace neuroflow {

/// Position of a PE: QPE column/row and core index inside the QPE.
struct PeCoord {
  std::uint8_t x = 0;
  std::uint8_t y = 0;
  std::uint8_t core = 0;

  /// Packed as (x << 16) | (y << 8) | core.
  std::uint32_t pack() const { return (std::uint32_t{x} << 16) | (std::uint32_t{y} << 8) | core; }
  static PeCoord unpack(std::uint32_t w) {
    return {static_cast<std::uint8_t>(w >> 16), static_cast<std::uint8_t>(w >> 8), static_cast<std::uint8_t>(w)};
  }
  friend bool operator==(const PeCoord&, const PeCoord&) = default;
};

inline constexpr int kMaxPes = 152;
inline constexpr int kMinTile = 16;
inline constexpr std::uint32_t kLayerConfigBytes = 256;

struct ChipDescriptor {
  int num_pes = kMaxPes;
  std::uint32_t sram_bytes_per_pe = 131072;
  std::uint32_t usable_sram_bytes = 98304;
  std::uint64_t dram_bytes = std::uint64_t{2} << 30;
  std::vector<PeCoord> pe_grid;

  /// 38 QPEs of 4 cores, QPEs rastered 8 per row.
  static ChipDescriptor spinnaker2(int num_pes = kMaxPes, std::uint32_t usable_sram = 98304);
  void validate() const;
  int max_workers() const { return num_pes - 1; }
};

struct WeightChunk {
  std::uint32_t offset = 0;  // relative to the worker's weight slice
  std::uint32_t length = 0;
  friend bool operator==(const WeightChunk&, const WeightChunk&) = default;
};

struct TilePlan {
  int layer_id = 0;
  NodeKind kind = NodeKind::Linear;
  int num_workers = 1;
  int tile_out = kMinTile;
  int padded_out = kMinTile;
  int valid_out = 0;  // unpadded output length
  int in_len = 0;     // input elements read per worker (both operands for Add)
  int out_len = 0;    // output elements written per worker
  int rows_per_chunk = 0;
  std::vector<WeightChunk> weight_chunks;

  std::uint32_t max_chunk_bytes() const;
  friend bool operator==(const TilePlan&, const TilePlan&) = default;
};

struct LayerShape {
  NodeKind kind = NodeKind::Linear;
  int in_len = 0;
  int out_len = 0;
};

struct PlanOptions {
  int tile_target = 64;
};

LayerShape layer_shape(const ApplicationGraph& graph, const Node& node);

TilePlan plan_layer(int layer_id, const LayerShape& shape, const ChipDescriptor& chip,
                    const PlanOptions& options = {});

/// Plans every node of an already-linearized graph, in the given order.
std::vector<TilePlan> plan_model(const ApplicationGraph& graph, const std::vector<Node>& order,
                                 const ChipDescriptor& chip, const PlanOptions& options = {});

/// Peak per-worker SRAM use: input + int32 accumulators + double-buffered
/// weight chunk + layer configuration.
std::uint32_t sram_footprint(const TilePlan& plan);

struct Mapping {
  int scheduler_pe = 0;                       // index into the PE grid
  std::vector<std::vector<int>> worker_pes;   // per layer
  int workers_used = 0;                       // distinct worker PEs over all layers
};

Mapping map_model(const std::vector<TilePlan>& plans, const ChipDescriptor& chip);

}  // namespace neuroflow
