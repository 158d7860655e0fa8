// SPDX-License-Identifier: Apache-2.0
#pragma once

// Decodes the timing records the scheduler leaves in DRAM and renders them.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuroflow/dram_image.hpp"

namespace neuroflow {

/// One 16-byte timing record: {start_ns, end_ns, dma_ns, compute_ns} as u32.
struct PeRecord {
  int pe = 0;
  std::uint64_t start_ns = 0;
  std::uint64_t end_ns = 0;
  std::uint64_t dma_ns = 0;
  std::uint64_t compute_ns = 0;

  std::uint64_t busy_ns() const { return end_ns - start_ns; }
  friend bool operator==(const PeRecord&, const PeRecord&) = default;
};

struct LayerTiming {
  int index = 0;
  std::string name;
  NodeKind kind = NodeKind::Linear;
  int input = 0;
  int output = 0;
  PeRecord scheduler;
  std::vector<PeRecord> workers;

  std::uint64_t runtime_ns() const { return scheduler.busy_ns(); }
  std::uint64_t max_worker_busy_ns() const;
  /// Layer wall time not covered by the slowest worker.
  std::uint64_t overhead_ns() const;
  /// Slowest worker's DMA time over the layer runtime.
  double dma_share() const;
  /// Slowest worker's accelerator time over the layer runtime.
  double compute_utilization() const;

  friend bool operator==(const LayerTiming&, const LayerTiming&) = default;
};

struct TimeLog {
  PeRecord setup;
  PeRecord cleanup;
  std::vector<LayerTiming> layers;

  /// Setup, every layer runtime and cleanup.
  std::uint64_t total_ns() const;
  double mean_overhead_ns() const;

  friend bool operator==(const TimeLog&, const TimeLog&) = default;
};

inline constexpr std::size_t kRecordWords = 4;

void store_record(std::span<std::uint8_t> dram, std::uint32_t addr, const PeRecord& r);
PeRecord load_record(std::span<const std::uint8_t> dram, std::uint32_t addr, int pe);

/// Reads every record from a post-run DRAM image. Layer names come from
/// `symbols` when given. Throws when a record was never written.
TimeLog collect(std::span<const std::uint8_t> dram, const SymbolTable* symbols = nullptr);

enum class ReportFormat { Table, Csv, Json };
ReportFormat report_format_from_string(std::string_view s);

std::string report(const TimeLog& log, ReportFormat format);

/// Inverse of report(log, ReportFormat::Csv).
TimeLog parse_timing_csv(std::string_view csv);

}  // namespace neuroflow
