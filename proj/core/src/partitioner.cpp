// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/partitioner.hpp"

#include <algorithm>

#include "neuroflow/error.hpp"

namespace neuroflow {

ChipDescriptor ChipDescriptor::spinnaker2(int num_pes, std::uint32_t usable_sram) {
  ChipDescriptor chip;
  chip.num_pes = num_pes;
  chip.usable_sram_bytes = usable_sram;
  for (int i = 0; i < num_pes; ++i) {
    int qpe = i / 4;
    chip.pe_grid.push_back({static_cast<std::uint8_t>(qpe % 8), static_cast<std::uint8_t>(qpe / 8),
                            static_cast<std::uint8_t>(i % 4)});
  }
  chip.validate();
  return chip;
}

void ChipDescriptor::validate() const {
  if (num_pes < 2 || num_pes > kMaxPes)
    throw Error("num_pes must lie in [2, " + std::to_string(kMaxPes) + "], got " + std::to_string(num_pes));
  if (usable_sram_bytes == 0 || usable_sram_bytes >= sram_bytes_per_pe)
    throw Error("usable SRAM budget must be positive and below the " + std::to_string(sram_bytes_per_pe) +
                "-byte PE SRAM");
  if (static_cast<int>(pe_grid.size()) != num_pes) throw Error("PE grid size does not match num_pes");
  for (std::size_t i = 0; i < pe_grid.size(); ++i)
    for (std::size_t j = i + 1; j < pe_grid.size(); ++j)
      if (pe_grid[i] == pe_grid[j]) throw Error("duplicate PE coordinate in grid");
}

std::uint32_t TilePlan::max_chunk_bytes() const {
  std::uint32_t m = 0;
  for (const auto& c : weight_chunks) m = std::max(m, c.length);
  return m;
}

std::uint32_t sram_footprint(const TilePlan& plan) {
  return static_cast<std::uint32_t>(plan.in_len) + static_cast<std::uint32_t>(plan.out_len) * 4 +
         2 * plan.max_chunk_bytes() + kLayerConfigBytes;
}

namespace {

int round_up16(int v) { return (v + kMinTile - 1) / kMinTile * kMinTile; }

std::vector<int> tile_candidates(int padded) {
  std::vector<int> c;
  for (int t = kMinTile; t <= padded; t += kMinTile)
    if (padded % t == 0) c.push_back(t);
  return c;
}

// Preferred tile first, then larger tiles (fewer workers), then smaller ones.
std::vector<int> search_order(const std::vector<int>& cands, int target) {
  auto pivot = std::upper_bound(cands.begin(), cands.end(), std::max(target, kMinTile));
  std::vector<int> order;
  if (pivot != cands.begin()) order.push_back(*(pivot - 1));
  for (auto it = pivot; it != cands.end(); ++it) order.push_back(*it);
  if (pivot != cands.begin())
    for (auto it = pivot - 1; it != cands.begin();) order.push_back(*--it);
  return order;
}

bool chunk_linear(TilePlan& p, const ChipDescriptor& chip) {
  const std::int64_t fixed = p.in_len + std::int64_t{p.out_len} * 4 + kLayerConfigBytes;
  const std::int64_t remaining = std::int64_t{chip.usable_sram_bytes} - fixed;
  const std::int64_t row = p.in_len;
  int rows = 0;
  for (int d = p.tile_out; d >= 1; --d) {
    if (p.tile_out % d == 0 && 2 * d * row <= remaining) {
      rows = d;
      break;
    }
  }
  if (rows == 0) return false;
  p.rows_per_chunk = rows;
  p.weight_chunks.clear();
  for (int r = 0; r < p.tile_out; r += rows)
    p.weight_chunks.push_back({static_cast<std::uint32_t>(r * row), static_cast<std::uint32_t>(rows * row)});
  return true;
}

}  // namespace

LayerShape layer_shape(const ApplicationGraph& g, const Node& n) {
  LayerShape s;
  s.kind = n.kind;
  s.in_len = static_cast<int>(g.tensor(n.inputs.at(0)).numel());
  s.out_len = static_cast<int>(g.tensor(n.outputs.at(0)).numel());
  if (n.is_linear_family()) {
    const auto& w = g.tensor(*n.weight);
    if (w.shape.size() != 2 || w.shape[0] != s.out_len || w.shape[1] != s.in_len)
      throw Error("layer " + std::to_string(n.id) + ": weight shape does not match " + std::to_string(s.in_len) +
                  " -> " + std::to_string(s.out_len));
  }
  if (n.kind == NodeKind::Add && g.tensor(n.inputs.at(1)).numel() != s.in_len)
    throw Error("layer " + std::to_string(n.id) + ": Add operands differ in length");
  return s;
}

TilePlan plan_layer(int layer_id, const LayerShape& shape, const ChipDescriptor& chip, const PlanOptions& options) {
  if (shape.in_len < 1 || shape.out_len < 1)
    throw Error("layer " + std::to_string(layer_id) + ": empty input or output");
  if (options.tile_target < kMinTile || options.tile_target % kMinTile != 0)
    throw Error("tile target must be a positive multiple of 16, got " + std::to_string(options.tile_target));

  TilePlan p;
  p.layer_id = layer_id;
  p.kind = shape.kind;
  p.valid_out = shape.out_len;
  p.padded_out = round_up16(shape.out_len);
  const std::string where = "layer " + std::to_string(layer_id) + " (" + std::string(to_string(shape.kind)) + ")";

  switch (shape.kind) {
    case NodeKind::Linear:
    case NodeKind::LinearReLU: {
      const auto cands = tile_candidates(p.padded_out);
      bool any_fits_pes = false;
      for (int tile : search_order(cands, options.tile_target)) {
        const int workers = p.padded_out / tile;
        if (workers > chip.max_workers()) continue;
        any_fits_pes = true;
        TilePlan trial = p;
        trial.tile_out = tile;
        trial.num_workers = workers;
        trial.in_len = shape.in_len;
        trial.out_len = tile;
        if (chunk_linear(trial, chip)) return trial;
      }
      if (!any_fits_pes)
        throw Error(where + ": insufficient PEs for " + std::to_string(p.padded_out) + " outputs on " +
                    std::to_string(chip.max_workers()) + " workers");
      throw Error(where + ": a single " + std::to_string(shape.in_len) +
                  "-byte weight row does not fit the SRAM budget even with double-buffered chunking");
    }
    case NodeKind::Add: {
      auto cands = tile_candidates(p.padded_out);
      std::reverse(cands.begin(), cands.end());
      for (int tile : cands) {
        const int workers = p.padded_out / tile;
        if (workers > chip.max_workers()) break;
        TilePlan trial = p;
        trial.tile_out = tile;
        trial.num_workers = workers;
        trial.in_len = 2 * tile;
        trial.out_len = tile;
        if (sram_footprint(trial) <= chip.usable_sram_bytes) return trial;
      }
      throw Error(where + ": cannot split " + std::to_string(shape.out_len) + " elements within the SRAM budget");
    }
    case NodeKind::Softmax: {
      p.tile_out = p.padded_out;
      p.num_workers = 1;
      p.in_len = shape.in_len;
      p.out_len = p.padded_out;
      if (sram_footprint(p) > chip.usable_sram_bytes)
        throw Error(where + ": softmax over " + std::to_string(shape.in_len) + " elements exceeds one PE's SRAM");
      return p;
    }
    default:
      throw Error(where + ": unsupported layer kind for the chip");
  }
}

std::vector<TilePlan> plan_model(const ApplicationGraph& g, const std::vector<Node>& order,
                                 const ChipDescriptor& chip, const PlanOptions& options) {
  std::vector<TilePlan> plans;
  plans.reserve(order.size());
  for (const auto& n : order) {
    switch (n.kind) {
      case NodeKind::Linear:
      case NodeKind::LinearReLU:
      case NodeKind::Add:
      case NodeKind::Softmax:
        break;
      default:
        throw Error("unsupported layer: node " + std::to_string(n.id) + " of kind " + std::string(to_string(n.kind)) +
                    " has no chip implementation");
    }
    plans.push_back(plan_layer(n.id, layer_shape(g, n), chip, options));
  }
  return plans;
}

Mapping map_model(const std::vector<TilePlan>& plans, const ChipDescriptor& chip) {
  Mapping m;
  m.scheduler_pe = 0;
  for (const auto& p : plans) {
    if (p.num_workers > chip.max_workers())
      throw Error("insufficient PEs: layer " + std::to_string(p.layer_id) + " needs " +
                  std::to_string(p.num_workers) + " workers, chip has " + std::to_string(chip.max_workers()));
    std::vector<int> pes(static_cast<std::size_t>(p.num_workers));
    for (int k = 0; k < p.num_workers; ++k) pes[static_cast<std::size_t>(k)] = k + 1;
    m.workers_used = std::max(m.workers_used, p.num_workers);
    m.worker_pes.push_back(std::move(pes));
  }
  return m;
}

}  // namespace neuroflow
