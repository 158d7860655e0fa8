// SPDX-License-Identifier: Apache-2.0
#pragma once

// Discrete-event simulator of the chip running a DRAM image: one scheduler
// PE walks the layer chain and triggers worker PEs by interrupt; workers
// stream weights from DRAM, compute, write back and report over the NoC.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuroflow/dram_image.hpp"
#include "neuroflow/profiler.hpp"
#include "neuroflow/timing_model.hpp"

namespace neuroflow {

enum class EventKind { HostStart, Irq, DmaComplete, NocMsg, ComputeDone, WorkerDone };

std::string_view to_string(EventKind k);

struct TraceEvent {
  std::uint64_t time_ns = 0;
  int pe = 0;
  EventKind kind = EventKind::HostStart;
  std::string detail;
};

struct SimOptions {
  /// Double-buffer weight chunks so the next DMA runs under the current MLA pass.
  bool overlap = false;
  bool record_trace = false;
  /// Test hook: this worker PE never reports completion.
  std::optional<int> drop_completion_from;
};

struct RunResult {
  std::vector<std::int8_t> output;  // graph output buffer, padded lanes included
  TimeLog timing;
  Bytes dram;
  std::vector<TraceEvent> trace;
  std::uint64_t end_ns = 0;
  std::uint64_t events = 0;
};

class ChipSimulator {
 public:
  ChipSimulator(Bytes image, TimingModel model, SimOptions options = {});

  /// Executes one inference on a private copy of the image.
  /// `input` must hold exactly the graph input's element count.
  RunResult run(std::span<const std::int8_t> input) const;

  const DramImage& image() const { return image_; }
  const TimingModel& model() const { return model_; }
  const SimOptions& options() const { return options_; }

 private:
  Bytes bytes_;
  DramImage image_;
  TimingModel model_;
  SimOptions options_;
};

}  // namespace neuroflow
