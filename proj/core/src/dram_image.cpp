// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/dram_image.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "neuroflow/error.hpp"
#include "neuroflow/oracle.hpp"

namespace neuroflow {

std::string_view to_string(LayerType t) {
  switch (t) {
    case LayerType::Linear: return "Linear";
    case LayerType::LinearReLU: return "LinearReLU";
    case LayerType::Add: return "Add";
    case LayerType::Softmax: return "Softmax";
    case LayerType::Finish: return "Finish";
  }
  return "?";
}

std::string_view region_name(int index) {
  static constexpr std::string_view names[] = {"global", "timing", "layers", "data"};
  return names[index];
}

std::size_t aux_words(LayerType t) {
  return (t == LayerType::Add || t == LayerType::Softmax) ? 3 : 0;
}

std::uint32_t WorkerConfig::byte_size() const {
  return static_cast<std::uint32_t>(4 * (8 + 2 * chunks.size() + aux.size()));
}

namespace {

std::uint32_t a16(std::uint64_t v) { return static_cast<std::uint32_t>(align_up(v, kAlign)); }

LayerType layer_type_for(NodeKind k) {
  switch (k) {
    case NodeKind::Linear: return LayerType::Linear;
    case NodeKind::LinearReLU: return LayerType::LinearReLU;
    case NodeKind::Add: return LayerType::Add;
    case NodeKind::Softmax: return LayerType::Softmax;
    default: throw Error("no layer type for node kind " + std::string(to_string(k)));
  }
}

struct BlockLayout {
  std::uint32_t header = 0, sched = 0, table = 0, io = 0, consts = 0, const_len = 0, end = 0;
  std::vector<std::uint32_t> workers;
};

std::uint32_t worker_cfg_bytes(const TilePlan& p, LayerType t) {
  std::size_t chunks = (t == LayerType::Linear || t == LayerType::LinearReLU) ? p.weight_chunks.size() : 0;
  return static_cast<std::uint32_t>(4 * (8 + 2 * chunks + aux_words(t)));
}

}  // namespace

CompiledImage build_image(const ApplicationGraph& g, const std::vector<Node>& order, const std::vector<TilePlan>& plans,
                          const Mapping& mapping, const ChipDescriptor& chip) {
  if (plans.size() != order.size()) throw Error("build_image: " + std::to_string(order.size()) + " layers but " +
                                                std::to_string(plans.size()) + " plans");
  for (std::size_t i = 0; i < order.size(); ++i)
    if (plans[i].layer_id != order[i].id)
      throw Error("build_image: layer " + std::to_string(order[i].id) + " has no plan");
  if (mapping.worker_pes.size() != plans.size()) throw Error("build_image: mapping does not cover every layer");
  if (g.graph_inputs.size() != 1 || g.graph_outputs.size() != 1)
    throw Error("build_image: the chip flow supports exactly one graph input and one graph output");

  const auto L = static_cast<std::uint32_t>(order.size());
  const auto P = static_cast<std::uint32_t>(1 + mapping.workers_used);

  CompiledImage out;
  DramImage& img = out.image;
  GlobalConfig& gc = img.global;

  img.regions[kRegionGlobal] = {0, kGlobalBytes};
  const std::uint32_t timing_len = (L * P + 2) * kTimingRecordBytes;
  img.regions[kRegionTiming] = {kGlobalBytes, timing_len};

  // Pass 1: block layout inside the layer-configuration region.
  std::uint32_t cursor = img.regions[kRegionTiming].end();
  std::vector<BlockLayout> layout(L);
  for (std::uint32_t i = 0; i < L; ++i) {
    const TilePlan& p = plans[i];
    const LayerType t = layer_type_for(p.kind);
    BlockLayout& b = layout[i];
    b.header = cursor;
    b.sched = b.header + kHeaderBytes;
    b.table = b.sched + kSchedulerCfgBytes;
    std::uint32_t at = a16(b.table + 4ull * p.num_workers);
    for (int k = 0; k < p.num_workers; ++k) {
      b.workers.push_back(at);
      at = a16(at + worker_cfg_bytes(p, t));
    }
    b.io = at;
    at = a16(b.io + 16ull * p.num_workers);
    b.consts = at;
    if (p.kind == NodeKind::Linear || p.kind == NodeKind::LinearReLU) {
      const std::uint32_t wbytes = static_cast<std::uint32_t>(p.padded_out) * static_cast<std::uint32_t>(p.in_len);
      b.const_len = a16(wbytes) + static_cast<std::uint32_t>(p.padded_out) * 4;
    }
    b.end = a16(b.consts + b.const_len);
    cursor = b.end;
  }
  img.finish_addr = cursor;
  cursor += kHeaderBytes;
  img.regions[kRegionLayers] = {img.regions[kRegionTiming].end(), cursor - img.regions[kRegionTiming].end()};

  // Activation buffers, never reused across layers.
  std::map<std::string, Symbol> buffers;
  auto alloc = [&](const std::string& tensor) {
    const auto n = static_cast<std::uint32_t>(g.tensor(tensor).numel());
    Symbol s{cursor, n};
    buffers[tensor] = s;
    cursor = a16(cursor + a16(n));
    return s;
  };
  const std::uint32_t data_start = cursor;
  alloc(g.graph_inputs.front());
  for (const auto& n : order) {
    if (buffers.count(n.outputs[0])) throw Error("tensor '" + n.outputs[0] + "' written twice");
    alloc(n.outputs[0]);
  }
  img.regions[kRegionData] = {data_start, cursor - data_start};
  img.total_len = cursor;
  if (img.total_len > chip.dram_bytes)
    throw Error("DRAM image needs " + std::to_string(img.total_len) + " bytes, chip has " +
                std::to_string(chip.dram_bytes));

  const std::string& in_name = g.graph_inputs.front();
  const std::string& out_name = g.graph_outputs.front();
  auto buffer_of = [&](const std::string& t) {
    auto it = buffers.find(t);
    if (it == buffers.end()) throw Error("tensor '" + t + "' has no DRAM buffer");
    return it->second;
  };

  gc.num_layers = L;
  gc.scheduler_pe = chip.pe_grid.at(static_cast<std::size_t>(mapping.scheduler_pe)).pack();
  gc.first_layer_addr = L ? layout[0].header : img.finish_addr;
  gc.timing_area_addr = img.regions[kRegionTiming].offset;
  gc.timing_area_len = timing_len;
  gc.data_area_addr = img.regions[kRegionData].offset;
  gc.data_area_len = img.regions[kRegionData].length;
  gc.input_addr = buffer_of(in_name).addr;
  gc.input_len = buffer_of(in_name).len;
  gc.output_addr = buffer_of(out_name).addr;
  gc.output_len = buffer_of(out_name).len;
  gc.num_workers = static_cast<std::uint32_t>(mapping.workers_used);
  gc.timing_pes = P;
  for (int pe = 0; pe < chip.num_pes; ++pe) {
    std::uint32_t w = chip.pe_grid[static_cast<std::size_t>(pe)].pack();
    if (pe == mapping.scheduler_pe) w |= kSchedulerRole;
    else if (pe <= mapping.workers_used) w |= kWorkerEnabled;
    gc.worker_table[static_cast<std::size_t>(pe)] = w;
  }

  SymbolTable& sym = out.symbols;
  sym.input_exp = g.tensor(in_name).scale_exp.value_or(0);
  sym.output_exp = g.tensor(out_name).scale_exp.value_or(0);
  sym.output_valid_len = static_cast<int>(g.tensor(out_name).numel());
  sym.symbols["graph_input"] = buffer_of(in_name);
  sym.symbols["graph_output"] = buffer_of(out_name);
  for (const auto& [t, s] : buffers) sym.symbols[t] = s;

  // Pass 2: contents.
  for (std::uint32_t i = 0; i < L; ++i) {
    const Node& n = order[i];
    const TilePlan& p = plans[i];
    const BlockLayout& b = layout[i];
    const LayerType type = layer_type_for(n.kind);
    LayerBlock blk;
    blk.addr = b.header;
    blk.header.layer_type = static_cast<std::uint32_t>(type);
    blk.header.num_workers = static_cast<std::uint32_t>(p.num_workers);
    blk.header.next_layer_addr = i + 1 < L ? layout[i + 1].header : img.finish_addr;
    blk.header.scheduler_cfg_addr = b.sched;
    blk.header.worker_cfg_table_addr = b.table;
    blk.header.io_map_addr = b.io;
    blk.header.const_addr = b.const_len ? b.consts : 0;
    blk.header.flags = (n.kind == NodeKind::LinearReLU ? kFlagRelu : 0u) |
                       (n.outputs[0] == out_name ? kFlagGraphOutput : 0u) |
                       (std::find(n.inputs.begin(), n.inputs.end(), in_name) != n.inputs.end() ? kFlagGraphInput : 0u);
    blk.sched = {i, gc.timing_area_addr + i * P * kTimingRecordBytes, b.const_len, static_cast<std::uint32_t>(p.valid_out)};
    blk.worker_cfg_addrs = b.workers;

    const Symbol in0 = buffer_of(n.inputs[0]);
    const Symbol outb = buffer_of(n.outputs[0]);
    if (n.in_exps.size() < n.inputs.size())
      throw Error("layer " + std::to_string(n.id) + " is missing input exponents; quantize the model first");

    std::uint32_t weight_base = 0, bias_base = 0;
    if (n.is_linear_family()) {
      const auto& ws = g.tensor(*n.weight);
      if (ws.dtype != DType::Int8 || !ws.scale_exp) throw Error("layer " + std::to_string(n.id) + ": weight is not int8");
      const auto w = g.constant_i8(*n.weight);
      const auto wbytes = static_cast<std::uint32_t>(p.padded_out) * static_cast<std::uint32_t>(p.in_len);
      blk.constants.assign(b.const_len, 0);
      // Row-major weights: worker k's tile is rows [k*tile, (k+1)*tile); padded rows stay zero.
      for (std::size_t j = 0; j < w.size(); ++j) blk.constants[j] = static_cast<std::uint8_t>(w[j]);
      const std::uint32_t bias_off = a16(wbytes);
      if (n.bias) {
        const auto bq = g.constant_i32(*n.bias);
        for (std::size_t j = 0; j < bq.size(); ++j) store_i32(blk.constants, bias_off + j * 4, bq[j]);
      }
      weight_base = b.consts;
      bias_base = b.consts + bias_off;
    }

    for (int k = 0; k < p.num_workers; ++k) {
      const auto ku = static_cast<std::uint32_t>(k);
      const auto tile = static_cast<std::uint32_t>(p.tile_out);
      WorkerConfig wc;
      wc.tile_out = tile;
      IoEntry io;
      switch (n.kind) {
        case NodeKind::Linear:
        case NodeKind::LinearReLU: {
          QuantKernelSpec ks{n.in_exps[0], *g.tensor(*n.weight).scale_exp, n.out_exp, n.kind == NodeKind::LinearReLU};
          wc.in_len = static_cast<std::uint32_t>(p.in_len);
          wc.input_addr = in0.addr;
          wc.output_addr = outb.addr + ku * tile;
          wc.shift = ks.shift();
          wc.relu = ks.relu ? 1 : 0;
          wc.bias_addr = bias_base + ku * tile * 4;
          const std::uint32_t slice = weight_base + ku * tile * wc.in_len;
          for (const auto& c : p.weight_chunks) wc.chunks.push_back({slice + c.offset, c.length});
          io = {wc.input_addr, wc.in_len, wc.output_addr, tile};
          break;
        }
        case NodeKind::Add: {
          const Symbol in1 = buffer_of(n.inputs[1]);
          const int ea = n.in_exps[0], eb = n.in_exps[1];
          const int emin = std::min(ea, eb);
          QuantKernelSpec ks{emin, 0, n.out_exp, false};
          wc.in_len = tile;
          wc.input_addr = in0.addr + ku * tile;
          wc.output_addr = outb.addr + ku * tile;
          wc.shift = ks.shift();
          wc.aux = {in1.addr + ku * tile, static_cast<std::uint32_t>(ea - emin), static_cast<std::uint32_t>(eb - emin)};
          io = {wc.input_addr, 2 * tile, wc.output_addr, tile};
          break;
        }
        case NodeKind::Softmax:
          wc.in_len = static_cast<std::uint32_t>(p.in_len);
          wc.input_addr = in0.addr;
          wc.output_addr = outb.addr;
          wc.aux = {static_cast<std::uint32_t>(n.in_exps[0]), static_cast<std::uint32_t>(n.out_exp),
                    static_cast<std::uint32_t>(p.valid_out)};
          io = {wc.input_addr, wc.in_len, wc.output_addr, tile};
          break;
        default:
          throw Error("unsupported layer kind in build_image");
      }
      blk.workers.push_back(std::move(wc));
      blk.io_map.push_back(io);
    }
    sym.symbols["layer:" + std::to_string(i)] = {b.header, b.end - b.header};
    sym.layers.push_back({n.name, n.kind, n.kind == NodeKind::Softmax ? p.in_len : layer_shape(g, n).in_len,
                          p.padded_out, p.num_workers});
    img.layers.push_back(std::move(blk));
  }
  img.finish.layer_type = static_cast<std::uint32_t>(LayerType::Finish);
  sym.symbols["layer:finish"] = {img.finish_addr, kHeaderBytes};
  return out;
}

namespace {

void put_header(Bytes& out, std::uint32_t at, const LayerHeader& h) {
  const std::uint32_t w[] = {h.layer_type, h.num_workers, h.next_layer_addr, h.scheduler_cfg_addr,
                             h.worker_cfg_table_addr, h.io_map_addr, h.const_addr, h.flags};
  for (std::uint32_t i = 0; i < 8; ++i) store_u32(out, at + 4 * i, w[i]);
}

LayerHeader get_header(std::span<const std::uint8_t> in, std::uint32_t at) {
  LayerHeader h;
  std::uint32_t* w[] = {&h.layer_type, &h.num_workers, &h.next_layer_addr, &h.scheduler_cfg_addr,
                        &h.worker_cfg_table_addr, &h.io_map_addr, &h.const_addr, &h.flags};
  for (std::uint32_t i = 0; i < 8; ++i) *w[i] = load_u32(in, at + 4 * i);
  return h;
}

void need(std::span<const std::uint8_t> in, std::uint64_t at, std::uint64_t len, const char* what) {
  if (at + len > in.size())
    throw ParseError("truncated image: " + std::string(what) + " at offset " + std::to_string(at) + " needs " +
                         std::to_string(len) + " bytes, image has " + std::to_string(in.size()),
                     static_cast<std::size_t>(at));
}

void aligned(std::uint32_t addr, const char* what) {
  if (addr % kAlign != 0)
    throw ParseError("misaligned address: " + std::string(what) + " at " + std::to_string(addr), addr);
}

bool is_layer_type(std::uint32_t t) {
  return t == 1 || t == 2 || t == 3 || t == 4 || t == static_cast<std::uint32_t>(LayerType::Finish);
}

}  // namespace

Bytes serialize(const DramImage& img) {
  Bytes out(img.total_len, 0);
  const GlobalConfig& g = img.global;
  const std::uint32_t words[] = {g.magic,          g.version,          g.num_layers,      g.scheduler_pe,
                                 g.first_layer_addr, g.timing_area_addr, g.timing_area_len, g.data_area_addr,
                                 g.data_area_len,  g.input_addr,       g.input_len,       g.output_addr,
                                 g.output_len,     g.num_workers,      g.timing_pes,      g.reserved};
  if (img.total_len < kGlobalBytes) throw Error("serialize: image shorter than the global configuration");
  for (std::uint32_t i = 0; i < 16; ++i) store_u32(out, 4 * i, words[i]);
  for (std::uint32_t i = 0; i < kMaxPes; ++i) store_u32(out, 64 + 4 * i, g.worker_table[i]);

  for (const auto& blk : img.layers) {
    put_header(out, blk.addr, blk.header);
    const std::uint32_t s = blk.header.scheduler_cfg_addr;
    store_u32(out, s, blk.sched.layer_index);
    store_u32(out, s + 4, blk.sched.timing_row_addr);
    store_u32(out, s + 8, blk.sched.const_len);
    store_u32(out, s + 12, blk.sched.valid_out);
    for (std::size_t k = 0; k < blk.worker_cfg_addrs.size(); ++k)
      store_u32(out, blk.header.worker_cfg_table_addr + 4 * k, blk.worker_cfg_addrs[k]);
    for (std::size_t k = 0; k < blk.workers.size(); ++k) {
      const WorkerConfig& wc = blk.workers[k];
      std::uint32_t at = blk.worker_cfg_addrs[k];
      const std::uint32_t fixed[] = {wc.tile_out, wc.in_len, wc.input_addr, wc.output_addr,
                                     static_cast<std::uint32_t>(wc.shift), wc.relu, wc.bias_addr,
                                     static_cast<std::uint32_t>(wc.chunks.size())};
      for (std::uint32_t v : fixed) { store_u32(out, at, v); at += 4; }
      for (const auto& c : wc.chunks) {
        store_u32(out, at, c.addr);
        store_u32(out, at + 4, c.len);
        at += 8;
      }
      for (std::uint32_t v : wc.aux) { store_u32(out, at, v); at += 4; }
    }
    for (std::size_t k = 0; k < blk.io_map.size(); ++k) {
      const std::uint32_t at = blk.header.io_map_addr + static_cast<std::uint32_t>(16 * k);
      store_u32(out, at, blk.io_map[k].input_addr);
      store_u32(out, at + 4, blk.io_map[k].input_len);
      store_u32(out, at + 8, blk.io_map[k].output_addr);
      store_u32(out, at + 12, blk.io_map[k].output_len);
    }
    if (!blk.constants.empty())
      std::copy(blk.constants.begin(), blk.constants.end(), out.begin() + blk.header.const_addr);
  }
  put_header(out, img.finish_addr, img.finish);
  return out;
}

DramImage parse(std::span<const std::uint8_t> in) {
  need(in, 0, 4, "magic");
  if (load_u32(in, 0) != kImageMagic) throw ParseError("bad magic", 0);
  need(in, 0, kGlobalBytes, "global configuration");

  DramImage img;
  GlobalConfig& g = img.global;
  std::uint32_t* words[] = {&g.magic,          &g.version,          &g.num_layers,      &g.scheduler_pe,
                            &g.first_layer_addr, &g.timing_area_addr, &g.timing_area_len, &g.data_area_addr,
                            &g.data_area_len,  &g.input_addr,       &g.input_len,       &g.output_addr,
                            &g.output_len,     &g.num_workers,      &g.timing_pes,      &g.reserved};
  for (std::uint32_t i = 0; i < 16; ++i) *words[i] = load_u32(in, 4 * i);
  for (std::uint32_t i = 0; i < kMaxPes; ++i) g.worker_table[i] = load_u32(in, 64 + 4 * i);
  if (g.version != kImageVersion) throw ParseError("unsupported image version " + std::to_string(g.version), 4);

  aligned(g.first_layer_addr, "first layer");
  aligned(g.timing_area_addr, "timing area");
  aligned(g.data_area_addr, "data area");
  aligned(g.input_addr, "input buffer");
  aligned(g.output_addr, "output buffer");

  img.regions[kRegionGlobal] = {0, kGlobalBytes};
  img.regions[kRegionTiming] = {g.timing_area_addr, g.timing_area_len};
  img.regions[kRegionLayers] = {g.timing_area_addr + g.timing_area_len,
                                g.data_area_addr - (g.timing_area_addr + g.timing_area_len)};
  img.regions[kRegionData] = {g.data_area_addr, g.data_area_len};
  if (g.timing_area_addr != kGlobalBytes || g.first_layer_addr < img.regions[kRegionLayers].offset ||
      g.data_area_addr < img.regions[kRegionLayers].offset)
    throw ParseError("regions are not contiguous in global -> timing -> layers -> data order", 20);
  img.total_len = g.data_area_addr + g.data_area_len;
  need(in, 0, img.total_len, "image payload");
  if (g.input_addr < g.data_area_addr || g.input_addr + g.input_len > img.total_len ||
      g.output_addr < g.data_area_addr || g.output_addr + g.output_len > img.total_len)
    throw ParseError("input/output buffers lie outside the data area", 36);

  const Region layers_region = img.regions[kRegionLayers];
  auto inside_layers = [&](std::uint32_t at, std::uint32_t len, const char* what) {
    if (at < layers_region.offset || std::uint64_t{at} + len > layers_region.end())
      throw ParseError(std::string(what) + " at " + std::to_string(at) + " lies outside the layer region", at);
  };

  std::set<std::uint32_t> visited;
  std::uint32_t at = g.first_layer_addr;
  for (std::uint32_t i = 0; i < g.num_layers; ++i) {
    aligned(at, "layer header");
    need(in, at, kHeaderBytes, "layer header");
    inside_layers(at, kHeaderBytes, "layer header");
    if (!visited.insert(at).second) throw ParseError("layer chain cycles back to " + std::to_string(at), at);
    LayerBlock blk;
    blk.addr = at;
    blk.header = get_header(in, at);
    const auto type = static_cast<LayerType>(blk.header.layer_type);
    if (!is_layer_type(blk.header.layer_type) || type == LayerType::Finish)
      throw ParseError("layer " + std::to_string(i) + ": bad layer type " + std::to_string(blk.header.layer_type), at);

    const std::uint32_t s = blk.header.scheduler_cfg_addr;
    inside_layers(s, kSchedulerCfgBytes, "scheduler config");
    blk.sched = {load_u32(in, s), load_u32(in, s + 4), load_u32(in, s + 8), load_u32(in, s + 12)};

    const std::uint32_t nw = blk.header.num_workers;
    if (nw > kMaxPes) throw ParseError("layer " + std::to_string(i) + ": too many workers", at + 4);
    inside_layers(blk.header.worker_cfg_table_addr, 4 * nw, "worker table");
    for (std::uint32_t k = 0; k < nw; ++k) {
      const std::uint32_t wa = load_u32(in, blk.header.worker_cfg_table_addr + 4 * k);
      aligned(wa, "worker config");
      inside_layers(wa, 32, "worker config");
      blk.worker_cfg_addrs.push_back(wa);
      WorkerConfig wc;
      wc.tile_out = load_u32(in, wa);
      wc.in_len = load_u32(in, wa + 4);
      wc.input_addr = load_u32(in, wa + 8);
      wc.output_addr = load_u32(in, wa + 12);
      wc.shift = load_i32(in, wa + 16);
      wc.relu = load_u32(in, wa + 20);
      wc.bias_addr = load_u32(in, wa + 24);
      const std::uint32_t nc = load_u32(in, wa + 28);
      const std::size_t naux = aux_words(type);
      if (nc > 1u << 16) throw ParseError("implausible chunk count", wa + 28);
      inside_layers(wa, static_cast<std::uint32_t>(32 + 8 * nc + 4 * naux), "worker config");
      for (std::uint32_t c = 0; c < nc; ++c) wc.chunks.push_back({load_u32(in, wa + 32 + 8 * c), load_u32(in, wa + 36 + 8 * c)});
      for (std::size_t x = 0; x < naux; ++x) wc.aux.push_back(load_u32(in, wa + 32 + 8 * nc + static_cast<std::uint32_t>(4 * x)));
      blk.workers.push_back(std::move(wc));
    }
    inside_layers(blk.header.io_map_addr, 16 * nw, "io map");
    for (std::uint32_t k = 0; k < nw; ++k) {
      const std::uint32_t ia = blk.header.io_map_addr + 16 * k;
      blk.io_map.push_back({load_u32(in, ia), load_u32(in, ia + 4), load_u32(in, ia + 8), load_u32(in, ia + 12)});
    }
    if (blk.sched.const_len) {
      aligned(blk.header.const_addr, "constants");
      inside_layers(blk.header.const_addr, blk.sched.const_len, "constants");
      blk.constants.assign(in.begin() + blk.header.const_addr,
                           in.begin() + blk.header.const_addr + blk.sched.const_len);
    }
    at = blk.header.next_layer_addr;
    img.layers.push_back(std::move(blk));
  }
  aligned(at, "finish header");
  need(in, at, kHeaderBytes, "finish header");
  inside_layers(at, kHeaderBytes, "finish header");
  img.finish_addr = at;
  img.finish = get_header(in, at);
  if (img.finish.layer_type != static_cast<std::uint32_t>(LayerType::Finish))
    throw ParseError("layer chain does not end in the Finish sentinel", at);
  return img;
}

std::vector<std::uint32_t> walk_layer_chain(std::span<const std::uint8_t> in) {
  need(in, 0, kGlobalBytes, "global configuration");
  std::vector<std::uint32_t> chain;
  std::set<std::uint32_t> visited;
  std::uint32_t at = load_u32(in, 16);
  for (;;) {
    need(in, at, kHeaderBytes, "layer header");
    if (!visited.insert(at).second) throw ParseError("layer chain cycles back to " + std::to_string(at), at);
    chain.push_back(at);
    if (load_u32(in, at) == static_cast<std::uint32_t>(LayerType::Finish)) break;
    at = load_u32(in, at + 8);
  }
  return chain;
}

Location locate(const DramImage& image, const SymbolTable& symbols, const std::string& query) {
  auto it = symbols.symbols.find(query);
  if (it == symbols.symbols.end()) throw Error("unknown symbol '" + query + "'");
  Location loc{it->second.addr, it->second.len, -1, 0};
  for (int r = 0; r < 4; ++r) {
    const Region& reg = image.regions[static_cast<std::size_t>(r)];
    if (loc.addr >= reg.offset && loc.addr < reg.end()) {
      loc.region = r;
      loc.region_offset = loc.addr - reg.offset;
    }
  }
  if (loc.region < 0) throw Error("symbol '" + query + "' lies outside every region");
  return loc;
}

void save_symbols(const SymbolTable& symbols, const DramImage& image, const std::filesystem::path& path) {
  using nlohmann::json;
  json regions = json::array();
  for (int r = 0; r < 4; ++r)
    regions.push_back({{"name", std::string(region_name(r))},
                       {"offset", image.regions[static_cast<std::size_t>(r)].offset},
                       {"length", image.regions[static_cast<std::size_t>(r)].length}});
  json syms = json::object();
  for (const auto& [name, s] : symbols.symbols) syms[name] = {{"addr", s.addr}, {"len", s.len}};
  json layers = json::array();
  for (const auto& l : symbols.layers)
    layers.push_back({{"name", l.name}, {"kind", std::string(to_string(l.kind))}, {"input", l.input_len},
                      {"output", l.output_len}, {"workers", l.workers}});
  json doc{{"format", "neuroflow-image-symbols"},
           {"version", 1},
           {"total_len", image.total_len},
           {"regions", regions},
           {"symbols", syms},
           {"layers", layers},
           {"input_exp", symbols.input_exp},
           {"output_exp", symbols.output_exp},
           {"output_valid_len", symbols.output_valid_len}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

SymbolTable load_symbols(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  SymbolTable t;
  try {
    json doc = json::parse(in);
    if (doc.value("format", std::string()) != "neuroflow-image-symbols")
      throw ParseError(path.string() + ": not an image symbol manifest");
    for (const auto& [name, s] : doc.at("symbols").items())
      t.symbols[name] = {s.at("addr").get<std::uint32_t>(), s.at("len").get<std::uint32_t>()};
    for (const auto& l : doc.at("layers"))
      t.layers.push_back({l.at("name").get<std::string>(), node_kind_from_string(l.at("kind").get<std::string>()),
                          l.at("input").get<int>(), l.at("output").get<int>(), l.at("workers").get<int>()});
    t.input_exp = doc.at("input_exp").get<int>();
    t.output_exp = doc.at("output_exp").get<int>();
    t.output_valid_len = doc.at("output_valid_len").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return t;
}

}  // namespace neuroflow
