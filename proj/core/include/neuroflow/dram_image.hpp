// SPDX-License-Identifier: Apache-2.0
#pragma once

// Byte-exact DRAM image consumed by the chip: global configuration, timing
// area, chained per-layer configuration blocks, and activation memory.
// Every word is a little-endian u32; DMA targets are 16-byte aligned.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "neuroflow/bytes.hpp"
#include "neuroflow/graph_ir.hpp"
#include "neuroflow/partitioner.hpp"

namespace neuroflow {

inline constexpr std::uint32_t kImageMagic = 0x53504E32;
inline constexpr std::uint32_t kImageVersion = 1;
inline constexpr std::uint32_t kGlobalWords = 16 + kMaxPes;
inline constexpr std::uint32_t kGlobalBytes = kGlobalWords * 4;
inline constexpr std::uint32_t kHeaderBytes = 32;
inline constexpr std::uint32_t kSchedulerCfgBytes = 16;
inline constexpr std::uint32_t kTimingRecordBytes = 16;
inline constexpr std::uint32_t kAlign = 16;

inline constexpr std::uint32_t kWorkerEnabled = 1u << 31;
inline constexpr std::uint32_t kSchedulerRole = 1u << 30;

enum class LayerType : std::uint32_t {
  Linear = 1,
  LinearReLU = 2,
  Add = 3,
  Softmax = 4,
  Finish = 0xFFFFFFFF,
};

std::string_view to_string(LayerType t);

enum LayerFlags : std::uint32_t {
  kFlagRelu = 1u << 0,
  kFlagGraphOutput = 1u << 1,
  kFlagGraphInput = 1u << 2,
};

struct GlobalConfig {
  std::uint32_t magic = kImageMagic;
  std::uint32_t version = kImageVersion;
  std::uint32_t num_layers = 0;
  std::uint32_t scheduler_pe = 0;  // packed PeCoord
  std::uint32_t first_layer_addr = 0;
  std::uint32_t timing_area_addr = 0;
  std::uint32_t timing_area_len = 0;
  std::uint32_t data_area_addr = 0;
  std::uint32_t data_area_len = 0;
  std::uint32_t input_addr = 0;
  std::uint32_t input_len = 0;
  std::uint32_t output_addr = 0;
  std::uint32_t output_len = 0;
  std::uint32_t num_workers = 0;  // worker PEs enabled for the model
  std::uint32_t timing_pes = 0;   // records per layer row (scheduler + workers)
  std::uint32_t reserved = 0;
  /// Per PE index: kWorkerEnabled / kSchedulerRole bits over the packed coordinate.
  std::array<std::uint32_t, kMaxPes> worker_table{};

  friend bool operator==(const GlobalConfig&, const GlobalConfig&) = default;
};

struct LayerHeader {
  std::uint32_t layer_type = 0;
  std::uint32_t num_workers = 0;
  std::uint32_t next_layer_addr = 0;
  std::uint32_t scheduler_cfg_addr = 0;
  std::uint32_t worker_cfg_table_addr = 0;
  std::uint32_t io_map_addr = 0;
  std::uint32_t const_addr = 0;
  std::uint32_t flags = 0;

  friend bool operator==(const LayerHeader&, const LayerHeader&) = default;
};

struct SchedulerConfig {
  std::uint32_t layer_index = 0;
  std::uint32_t timing_row_addr = 0;
  std::uint32_t const_len = 0;
  std::uint32_t valid_out = 0;

  friend bool operator==(const SchedulerConfig&, const SchedulerConfig&) = default;
};

struct DmaChunk {
  std::uint32_t addr = 0;
  std::uint32_t len = 0;
  friend bool operator==(const DmaChunk&, const DmaChunk&) = default;
};

/// Aux words by layer type: Add {input2_addr, lhs_align, rhs_align},
/// Softmax {in_exp, out_exp, valid_len}, Linear none.
struct WorkerConfig {
  std::uint32_t tile_out = 0;
  std::uint32_t in_len = 0;
  std::uint32_t input_addr = 0;
  std::uint32_t output_addr = 0;
  std::int32_t shift = 0;
  std::uint32_t relu = 0;
  std::uint32_t bias_addr = 0;
  std::vector<DmaChunk> chunks;
  std::vector<std::uint32_t> aux;

  std::uint32_t byte_size() const;
  friend bool operator==(const WorkerConfig&, const WorkerConfig&) = default;
};

std::size_t aux_words(LayerType t);

struct IoEntry {
  std::uint32_t input_addr = 0;
  std::uint32_t input_len = 0;
  std::uint32_t output_addr = 0;
  std::uint32_t output_len = 0;
  friend bool operator==(const IoEntry&, const IoEntry&) = default;
};

struct LayerBlock {
  std::uint32_t addr = 0;  // header address
  LayerHeader header;
  SchedulerConfig sched;
  std::vector<std::uint32_t> worker_cfg_addrs;
  std::vector<WorkerConfig> workers;
  std::vector<IoEntry> io_map;
  Bytes constants;

  friend bool operator==(const LayerBlock&, const LayerBlock&) = default;
};

struct Region {
  std::uint32_t offset = 0;
  std::uint32_t length = 0;
  std::uint32_t end() const { return offset + length; }
  friend bool operator==(const Region&, const Region&) = default;
};

enum RegionIndex { kRegionGlobal = 0, kRegionTiming = 1, kRegionLayers = 2, kRegionData = 3 };
std::string_view region_name(int index);

struct DramImage {
  GlobalConfig global;
  std::vector<LayerBlock> layers;
  std::uint32_t finish_addr = 0;
  LayerHeader finish;
  std::array<Region, 4> regions{};
  std::uint32_t total_len = 0;

  friend bool operator==(const DramImage&, const DramImage&) = default;
};

/// Host-side names for image addresses; kept out of the binary.
struct Symbol {
  std::uint32_t addr = 0;
  std::uint32_t len = 0;
  friend bool operator==(const Symbol&, const Symbol&) = default;
};

struct LayerInfo {
  std::string name;
  NodeKind kind = NodeKind::Linear;
  int input_len = 0;
  int output_len = 0;
  int workers = 0;
  friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

struct SymbolTable {
  std::map<std::string, Symbol> symbols;  // "graph_input", "graph_output", "layer:N", tensor names
  std::vector<LayerInfo> layers;
  int input_exp = 0;
  int output_exp = 0;
  int output_valid_len = 0;

  friend bool operator==(const SymbolTable&, const SymbolTable&) = default;
};

struct CompiledImage {
  DramImage image;
  SymbolTable symbols;
};

CompiledImage build_image(const ApplicationGraph& qgraph, const std::vector<Node>& order,
                          const std::vector<TilePlan>& plans, const Mapping& mapping, const ChipDescriptor& chip);

Bytes serialize(const DramImage& image);
DramImage parse(std::span<const std::uint8_t> bytes);

struct Location {
  std::uint32_t addr = 0;
  std::uint32_t len = 0;
  int region = 0;
  std::uint32_t region_offset = 0;
};

Location locate(const DramImage& image, const SymbolTable& symbols, const std::string& query);

void save_symbols(const SymbolTable& symbols, const DramImage& image, const std::filesystem::path& path);
SymbolTable load_symbols(const std::filesystem::path& path);

/// Header addresses reached by following next_layer_addr from the first layer,
/// ending with the Finish sentinel. Throws on a cycle or a dangling pointer.
std::vector<std::uint32_t> walk_layer_chain(std::span<const std::uint8_t> bytes);

}  // namespace neuroflow
