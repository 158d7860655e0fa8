// SPDX-License-Identifier: Apache-2.0
#pragma once

// Cost parameters of the simulated chip and their calibration against a
// measured per-layer runtime table.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuroflow/graph_ir.hpp"
#include "neuroflow/partitioner.hpp"

namespace neuroflow {

/// Durations in nanoseconds, bandwidths per nanosecond. All strictly positive.
struct TimingModel {
  double dram_dma_setup_ns = 500.0;
  double dram_bytes_per_ns = 0.2613;  // per concurrent DMA stream
  double noc_msg_ns = 200.0;
  double irq_dispatch_ns = 300.0;
  double mla_macs_per_ns = 1.730;
  double scalar_op_ns = 60.0;
  double exp_eval_ns = 200.0;
  double scheduler_header_fetch_ns = 2000.0;
  double scheduler_per_worker_trigger_ns = 500.0;
  double timing_store_ns = 8850.0;
  double worker_layer_setup_ns = 30000.0;
  double setup_base_ns = 8000.0;
  double setup_per_worker_ns = 190.0;
  double cleanup_base_ns = 2300.0;
  double cleanup_per_worker_ns = 590.0;

  void validate() const;

  std::uint64_t dma_ns(std::uint64_t bytes) const;
  std::uint64_t mla_ns(std::uint64_t macs) const;
  std::uint64_t scalar_ns(std::uint64_t ops) const;
  std::uint64_t exp_ns(std::uint64_t evals) const;

  friend bool operator==(const TimingModel&, const TimingModel&) = default;
};

std::uint64_t to_ns(double v);

void save_timing_model(const TimingModel& model, const std::filesystem::path& path);
TimingModel load_timing_model(const std::filesystem::path& path);

/// Work one worker performs for a layer; enough to predict its duration.
struct LayerWork {
  NodeKind kind = NodeKind::Linear;
  int workers = 1;
  int in_len = 0;     // input elements per worker (per operand for Add)
  int tile_out = 0;   // output elements per worker
  int valid_len = 0;  // softmax lanes
  std::vector<std::uint32_t> chunk_bytes;
  std::uint32_t config_bytes = 32;
};

LayerWork layer_work(const TilePlan& plan);

struct WorkerCost {
  std::uint64_t busy_ns = 0;
  std::uint64_t dma_ns = 0;
  std::uint64_t compute_ns = 0;
};

/// Serial (non-overlapped) worker cost, mirroring the simulator's worker program.
WorkerCost predict_worker(const TimingModel& m, const LayerWork& w);
/// Layer wall time from header fetch to the end of the timing-record store.
std::uint64_t predict_layer_ns(const TimingModel& m, const LayerWork& w);
std::uint64_t predict_setup_ns(const TimingModel& m, int workers);
std::uint64_t predict_cleanup_ns(const TimingModel& m, int workers);

struct CalibrationTargets {
  struct Layer {
    std::string name;
    NodeKind kind = NodeKind::Linear;
    double runtime_us = 0;
    int input = 0;
    int output = 0;
    int workers = 0;
  };
  std::vector<Layer> layers;
  double setup_us = 0;
  double cleanup_us = 0;
  int setup_workers = 0;
  // Optional second operating point with more workers enabled.
  int all_workers = 0;
  double all_setup_us = 0;
  double all_cleanup_us = 0;
  double weight_fetch_us = 0;  // first linear layer, per worker
  double mla_us = 0;           // first linear layer, per worker
  double overhead_us = 0;      // mean per-layer scheduling overhead
  double total_us = 0;         // optional: setup + layers + cleanup
};

CalibrationTargets load_calibration_targets(const std::filesystem::path& path);

struct Residual {
  std::string row;
  double target_us = 0;
  double predicted_us = 0;
};

struct CalibrationResult {
  TimingModel model;
  std::vector<Residual> residuals;
};

CalibrationResult calibrate_timing(const CalibrationTargets& targets);

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path);

}  // namespace neuroflow
