// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/chipsim.hpp"

#include <algorithm>
#include <array>
#include <fmt/format.h>
#include <functional>
#include <map>
#include <queue>

#include "neuroflow/error.hpp"
#include "neuroflow/oracle.hpp"

namespace neuroflow {

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::HostStart: return "host_start";
    case EventKind::Irq: return "irq";
    case EventKind::DmaComplete: return "dma_complete";
    case EventKind::NocMsg: return "noc_msg";
    case EventKind::ComputeDone: return "compute_done";
    case EventKind::WorkerDone: return "worker_done";
  }
  return "?";
}

ChipSimulator::ChipSimulator(Bytes image, TimingModel model, SimOptions options)
    : bytes_(std::move(image)), image_(parse(bytes_)), model_(model), options_(options) {
  model_.validate();
}

namespace {

enum class Tag { None, GlobalLoaded, SetupDone, HeaderLoaded, StoreDone, CleanupDone, Trigger, Finish, Step };

struct Event {
  std::uint64_t time = 0;
  int pe = 0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::HostStart;
  Tag tag = Tag::None;
  std::uint32_t a = 0, b = 0, c = 0;  // tag-specific words
  PeRecord record;                     // completion payload

  bool operator>(const Event& o) const {
    if (time != o.time) return time > o.time;
    if (pe != o.pe) return pe > o.pe;
    return seq > o.seq;
  }
};

enum class PeState { Sleep, Busy, Halted };

struct Step {
  std::uint64_t at = 0;
  EventKind kind = EventKind::ComputeDone;
  const char* label = "";
  std::function<void()> effect;
};

struct Worker {
  PeState state = PeState::Sleep;
  std::vector<Step> program;
  std::size_t next = 0;
  std::uint32_t layer = 0;
  PeRecord record;
  // Local SRAM contents.
  std::vector<std::int8_t> in, in2, out;
  std::vector<std::int32_t> bias;
  std::vector<std::int64_t> acc;
  std::array<std::vector<std::int8_t>, 2> wbuf;
};

struct DecodedConfig {
  WorkerConfig wc;
  std::uint32_t bytes = 0;
};

DecodedConfig decode_worker_config(std::span<const std::uint8_t> dram, std::uint32_t addr, LayerType type) {
  if (addr + 32u > dram.size()) throw Error(fmt::format("worker configuration at {} lies outside DRAM", addr));
  DecodedConfig d;
  WorkerConfig& w = d.wc;
  w.tile_out = load_u32(dram, addr);
  w.in_len = load_u32(dram, addr + 4);
  w.input_addr = load_u32(dram, addr + 8);
  w.output_addr = load_u32(dram, addr + 12);
  w.shift = load_i32(dram, addr + 16);
  w.relu = load_u32(dram, addr + 20);
  w.bias_addr = load_u32(dram, addr + 24);
  const std::uint32_t chunks = load_u32(dram, addr + 28);
  std::uint32_t at = addr + 32;
  if (at + 8ull * chunks + 4ull * aux_words(type) > dram.size())
    throw Error(fmt::format("worker configuration at {} overruns DRAM", addr));
  for (std::uint32_t i = 0; i < chunks; ++i, at += 8) w.chunks.push_back({load_u32(dram, at), load_u32(dram, at + 4)});
  for (std::size_t i = 0; i < aux_words(type); ++i, at += 4) w.aux.push_back(load_u32(dram, at));
  d.bytes = at - addr;
  return d;
}

class Run {
 public:
  Run(const TimingModel& m, const SimOptions& o, Bytes dram) : m_(m), opt_(o), dram_(std::move(dram)) {}

  RunResult execute(std::span<const std::int8_t> input) {
    const std::uint32_t in_addr = load_u32(dram_, 36);
    const std::uint32_t in_len = load_u32(dram_, 40);
    if (input.size() != in_len)
      throw Error(fmt::format("input has {} elements, the image expects {}", input.size(), in_len));
    std::copy(input.begin(), input.end(), reinterpret_cast<std::int8_t*>(dram_.data() + in_addr));
    workers_.resize(kMaxPes);

    post(0, 0, EventKind::HostStart, Tag::None);
    while (!queue_.empty()) {
      Event e = queue_.top();
      queue_.pop();
      now_ = e.time;
      ++events_;
      if (opt_.record_trace) trace(e);
      if (e.pe == 0) scheduler(e);
      else worker(e);
    }
    if (!halted_) deadlock();

    RunResult r;
    const std::uint32_t out_addr = load_u32(dram_, 44);
    const std::uint32_t out_len = load_u32(dram_, 48);
    r.output.assign(reinterpret_cast<const std::int8_t*>(dram_.data() + out_addr),
                    reinterpret_cast<const std::int8_t*>(dram_.data() + out_addr + out_len));
    r.timing = collect(dram_);
    r.dram = std::move(dram_);
    r.trace = std::move(trace_);
    r.end_ns = now_;
    r.events = events_;
    return r;
  }

 private:
  void post(std::uint64_t t, int pe, EventKind kind, Tag tag, std::uint32_t a = 0, std::uint32_t b = 0,
            std::uint32_t c = 0, const PeRecord& rec = {}) {
    queue_.push(Event{t, pe, seq_++, kind, tag, a, b, c, rec});
  }

  void trace(const Event& e) {
    std::string detail;
    switch (e.tag) {
      case Tag::GlobalLoaded: detail = "global config loaded"; break;
      case Tag::SetupDone: detail = "setup done"; break;
      case Tag::HeaderLoaded: detail = fmt::format("header @{}", e.a); break;
      case Tag::StoreDone: detail = fmt::format("timing stored, layer {}", layer_index_); break;
      case Tag::CleanupDone: detail = "cleanup done"; break;
      case Tag::Trigger: detail = fmt::format("layer {} cfg @{}", e.c, e.a); break;
      case Tag::Finish: detail = "finish"; break;
      case Tag::Step: {
        const Worker& w = workers_[static_cast<std::size_t>(e.pe)];
        if (w.next < w.program.size()) detail = w.program[w.next].label;
        break;
      }
      case Tag::None:
        if (e.kind == EventKind::NocMsg) detail = fmt::format("completion from PE {}", e.record.pe);
        break;
    }
    trace_.push_back({e.time, e.pe, e.kind, std::move(detail)});
  }

  [[noreturn]] void deadlock() const {
    std::string missing;
    for (std::uint32_t k = 0; k < expected_; ++k) {
      const int pe = enabled_[k];
      if (!received_.count(pe)) missing += (missing.empty() ? "" : ", ") + std::to_string(pe);
    }
    if (collecting_)
      throw Error(fmt::format("deadlock at {} ns: scheduler waits in layer {} for {} of {} completions (PEs {})", now_,
                              layer_index_, expected_ - received_.size(), expected_, missing));
    throw Error(fmt::format("deadlock at {} ns: event queue drained before the scheduler halted", now_));
  }

  // ---- scheduler PE ----

  void scheduler(const Event& e) {
    switch (e.kind) {
      case EventKind::HostStart:
        setup_.start_ns = now_;
        post(now_ + m_.dma_ns(kGlobalBytes), 0, EventKind::DmaComplete, Tag::GlobalLoaded);
        return;
      case EventKind::NocMsg:
        completion(e.record);
        return;
      default:
        break;
    }
    switch (e.tag) {
      case Tag::GlobalLoaded: {
        if (load_u32(dram_, 0) != kImageMagic) throw Error("scheduler: bad magic in global configuration");
        num_layers_ = load_u32(dram_, 8);
        first_layer_ = load_u32(dram_, 16);
        timing_addr_ = load_u32(dram_, 20);
        timing_pes_ = load_u32(dram_, 56);
        for (int pe = 0; pe < kMaxPes; ++pe)
          if (load_u32(dram_, 64 + 4 * static_cast<std::size_t>(pe)) & kWorkerEnabled) enabled_.push_back(pe);
        const auto w = static_cast<std::uint64_t>(enabled_.size());
        post(now_ + w * to_ns(m_.setup_per_worker_ns) + to_ns(m_.setup_base_ns), 0, EventKind::ComputeDone,
             Tag::SetupDone);
        return;
      }
      case Tag::SetupDone:
        setup_.end_ns = now_;
        fetch(first_layer_);
        return;
      case Tag::HeaderLoaded:
        header(e.a);
        return;
      case Tag::StoreDone:
        store();
        return;
      case Tag::CleanupDone: {
        cleanup_.end_ns = now_;
        const std::uint32_t tail = timing_addr_ + num_layers_ * timing_pes_ * kTimingRecordBytes;
        store_record(dram_, tail, setup_);
        store_record(dram_, tail + kTimingRecordBytes, cleanup_);
        halted_ = true;
        return;
      }
      default:
        throw Error("scheduler: unexpected event " + std::string(to_string(e.kind)));
    }
  }

  void fetch(std::uint32_t addr) {
    if (++fetched_ > num_layers_ + 1) throw Error("scheduler: layer chain does not terminate");
    fetch_start_ = now_;
    post(now_ + to_ns(m_.scheduler_header_fetch_ns), 0, EventKind::DmaComplete, Tag::HeaderLoaded, addr);
  }

  void header(std::uint32_t addr) {
    if (addr + kHeaderBytes > dram_.size()) throw Error(fmt::format("scheduler: header at {} outside DRAM", addr));
    const std::uint32_t type = load_u32(dram_, addr);
    if (type == static_cast<std::uint32_t>(LayerType::Finish)) {
      cleanup_.start_ns = fetch_start_;
      const std::uint64_t per = to_ns(m_.cleanup_per_worker_ns);
      for (std::size_t k = 0; k < enabled_.size(); ++k)
        post(now_ + (k + 1) * per, enabled_[k], EventKind::Irq, Tag::Finish);
      post(now_ + enabled_.size() * per + to_ns(m_.cleanup_base_ns), 0, EventKind::ComputeDone, Tag::CleanupDone);
      return;
    }
    const std::uint32_t workers = load_u32(dram_, addr + 4);
    next_ = load_u32(dram_, addr + 8);
    const std::uint32_t sched = load_u32(dram_, addr + 12);
    const std::uint32_t table = load_u32(dram_, addr + 16);
    layer_index_ = load_u32(dram_, sched);
    row_addr_ = load_u32(dram_, sched + 4);
    if (workers == 0 || workers > enabled_.size())
      throw Error(fmt::format("scheduler: layer {} asks for {} workers, {} enabled", layer_index_, workers,
                              enabled_.size()));
    expected_ = workers;
    received_.clear();
    collecting_ = true;
    const std::uint64_t trig = to_ns(m_.scheduler_per_worker_trigger_ns);
    const std::uint64_t noc = to_ns(m_.noc_msg_ns);
    for (std::uint32_t k = 0; k < workers; ++k)
      post(now_ + (k + 1) * trig + noc, enabled_[k], EventKind::Irq, Tag::Trigger, load_u32(dram_, table + 4 * k), type,
           layer_index_);
  }

  void completion(const PeRecord& r) {
    if (!collecting_) throw Error(fmt::format("scheduler: unexpected completion from PE {}", r.pe));
    if (std::find(enabled_.begin(), enabled_.begin() + expected_, r.pe) == enabled_.begin() + expected_)
      throw Error(fmt::format("scheduler: completion from PE {} which was not triggered in layer {}", r.pe,
                              layer_index_));
    if (!received_.emplace(r.pe, r).second)
      throw Error(fmt::format("scheduler: duplicate completion from PE {} in layer {}", r.pe, layer_index_));
    if (received_.size() == expected_) {
      collecting_ = false;
      post(now_ + to_ns(m_.timing_store_ns), 0, EventKind::ComputeDone, Tag::StoreDone);
    }
  }

  void store() {
    store_record(dram_, row_addr_, PeRecord{0, fetch_start_, now_, 0, 0});
    for (const auto& [pe, r] : received_)
      store_record(dram_, row_addr_ + static_cast<std::uint32_t>(pe) * kTimingRecordBytes, r);
    fetch(next_);
  }

  // ---- worker PEs ----

  void worker(const Event& e) {
    Worker& w = workers_[static_cast<std::size_t>(e.pe)];
    if (e.kind == EventKind::Irq) {
      if (w.state != PeState::Sleep)
        throw Error(fmt::format("protocol violation: PE {} interrupted while {}", e.pe,
                                w.state == PeState::Busy ? "busy" : "halted"));
      if (e.tag == Tag::Finish) {
        w.state = PeState::Halted;
        return;
      }
      w.state = PeState::Busy;
      w.layer = e.c;
      build_program(e.pe, w, e.a, static_cast<LayerType>(e.b));
      w.next = 0;
      post(w.program[0].at, e.pe, w.program[0].kind, Tag::Step);
      return;
    }
    Step& s = w.program.at(w.next);
    if (s.effect) s.effect();
    if (++w.next < w.program.size()) post(w.program[w.next].at, e.pe, w.program[w.next].kind, Tag::Step);
  }

  void build_program(int pe, Worker& w, std::uint32_t cfg_addr, LayerType type) {
    const DecodedConfig d = decode_worker_config(dram_, cfg_addr, type);
    const WorkerConfig cfg = d.wc;
    w.program.clear();
    w.record = PeRecord{pe, now_, 0, 0, 0};
    std::uint64_t t = now_ + to_ns(m_.irq_dispatch_ns) + to_ns(m_.worker_layer_setup_ns);
    std::uint64_t dma_total = 0, compute_total = 0;
    auto add = [&](std::uint64_t at, EventKind k, const char* label, std::function<void()> fx) {
      w.program.push_back({at, k, label, std::move(fx)});
    };
    auto dma = [&](std::uint64_t bytes, const char* label, std::function<void()> fx) {
      const auto d = m_.dma_ns(bytes);
      dma_total += d;
      t += d;
      add(t, EventKind::DmaComplete, label, std::move(fx));
    };
    auto read = [this](std::uint32_t addr, std::uint32_t len, std::vector<std::int8_t>& dst) {
      if (std::uint64_t{addr} + len > dram_.size()) throw Error(fmt::format("DMA read at {} outside DRAM", addr));
      dst.assign(reinterpret_cast<const std::int8_t*>(dram_.data() + addr),
                 reinterpret_cast<const std::int8_t*>(dram_.data() + addr + len));
    };
    auto write_out = [this, &w, addr = cfg.output_addr]() {
      if (std::uint64_t{addr} + w.out.size() > dram_.size()) throw Error(fmt::format("DMA write at {} outside DRAM", addr));
      std::copy(w.out.begin(), w.out.end(), reinterpret_cast<std::int8_t*>(dram_.data() + addr));
    };

    dma(d.bytes, "config", nullptr);
    const std::uint32_t tile = cfg.tile_out;
    switch (type) {
      case LayerType::Linear:
      case LayerType::LinearReLU: {
        if (cfg.chunks.empty()) throw Error(fmt::format("PE {}: linear layer without weight chunks", pe));
        const std::uint32_t in_len = cfg.in_len;
        dma(in_len, "input", [&w, read, cfg] { read(cfg.input_addr, cfg.in_len, w.in); });
        dma(std::uint64_t{tile} * 4, "bias", [this, &w, cfg, tile] {
          w.bias.resize(tile);
          for (std::uint32_t r = 0; r < tile; ++r) w.bias[r] = load_i32(dram_, cfg.bias_addr + 4 * r);
          w.acc.assign(tile, 0);
        });
        t += m_.scalar_ns(in_len);
        add(t, EventKind::ComputeDone, "prepare", nullptr);

        const std::uint32_t base = cfg.chunks.front().addr;
        std::vector<std::uint64_t> dma_end(cfg.chunks.size()), mla_end(cfg.chunks.size());
        std::vector<Step> chunk_steps;
        for (std::size_t k = 0; k < cfg.chunks.size(); ++k) {
          const DmaChunk c = cfg.chunks[k];
          if (c.len % in_len != 0 || (c.addr - base) % in_len != 0)
            throw Error(fmt::format("PE {}: weight chunk at {} is not whole rows", pe, c.addr));
          std::uint64_t dstart;
          if (opt_.overlap) {
            dstart = k == 0 ? t : dma_end[k - 1];
            if (k >= 2) dstart = std::max(dstart, mla_end[k - 2]);  // buffer k % 2 is free again
          } else {
            dstart = k == 0 ? t : mla_end[k - 1];
          }
          const auto dd = m_.dma_ns(c.len);
          dma_total += dd;
          dma_end[k] = dstart + dd;
          const auto md = m_.mla_ns(c.len);
          compute_total += md;
          mla_end[k] = std::max(dma_end[k], k == 0 ? t : mla_end[k - 1]) + md;
          const std::size_t buf = k % 2;
          chunk_steps.push_back({dma_end[k], EventKind::DmaComplete, "weight chunk",
                                 [&w, read, c, buf] { read(c.addr, c.len, w.wbuf[buf]); }});
          const std::uint32_t row0 = (c.addr - base) / in_len;
          chunk_steps.push_back({mla_end[k], EventKind::ComputeDone, "mla", [&w, c, buf, row0, in_len] {
                                   const auto& wb = w.wbuf[buf];
                                   const std::uint32_t rows = c.len / in_len;
                                   for (std::uint32_t r = 0; r < rows; ++r) {
                                     std::int64_t s = 0;
                                     const std::int8_t* wr = wb.data() + std::size_t{r} * in_len;
                                     for (std::uint32_t i = 0; i < in_len; ++i)
                                       s += std::int32_t{wr[i]} * std::int32_t{w.in[i]};
                                     w.acc[row0 + r] += s;
                                   }
                                 }});
        }
        std::stable_sort(chunk_steps.begin(), chunk_steps.end(),
                         [](const Step& a, const Step& b) { return a.at < b.at; });
        for (auto& s : chunk_steps) w.program.push_back(std::move(s));
        t = mla_end.back();

        t += m_.scalar_ns(tile);
        const bool relu = cfg.relu != 0;
        add(t, EventKind::ComputeDone, "requantize", [&w, tile, relu, shift = cfg.shift] {
          w.out.resize(tile);
          for (std::uint32_t r = 0; r < tile; ++r) {
            std::int64_t acc = w.acc[r] + w.bias[r];
            if (relu) acc = std::max<std::int64_t>(acc, 0);
            w.out[r] = requantize(acc, shift);
          }
        });
        dma(tile, "output", write_out);
        break;
      }
      case LayerType::Add: {
        const std::uint32_t in2 = cfg.aux.at(0);
        dma(tile, "input", [&w, read, cfg, tile] { read(cfg.input_addr, tile, w.in); });
        dma(tile, "input2", [&w, read, in2, tile] { read(in2, tile, w.in2); });
        t += m_.scalar_ns(tile);
        add(t, EventKind::ComputeDone, "add", [&w, tile, la = cfg.aux.at(1), lb = cfg.aux.at(2), shift = cfg.shift] {
          w.out.resize(tile);
          for (std::uint32_t i = 0; i < tile; ++i) {
            const std::int64_t s = (std::int64_t{w.in[i]} << la) + (std::int64_t{w.in2[i]} << lb);
            w.out[i] = requantize(s, shift);
          }
        });
        dma(tile, "output", write_out);
        break;
      }
      case LayerType::Softmax: {
        const auto in_exp = static_cast<std::int32_t>(cfg.aux.at(0));
        const auto out_exp = static_cast<std::int32_t>(cfg.aux.at(1));
        const std::uint32_t valid = cfg.aux.at(2);
        if (valid > cfg.in_len || valid > tile) throw Error(fmt::format("PE {}: softmax valid length {} too large", pe, valid));
        dma(cfg.in_len, "input", [&w, read, cfg] { read(cfg.input_addr, cfg.in_len, w.in); });
        const auto ed = m_.exp_ns(valid);
        compute_total += ed;
        t += ed;
        add(t, EventKind::ComputeDone, "exp", nullptr);
        t += m_.scalar_ns(2ull * valid);
        add(t, EventKind::ComputeDone, "normalize", [&w, tile, valid, in_exp, out_exp] {
          const auto y = softmax_int8(std::span(w.in.data(), valid), in_exp, out_exp);
          w.out.assign(tile, 0);  // padded lanes stay zero
          std::copy(y.begin(), y.end(), w.out.begin());
        });
        dma(tile, "output", write_out);
        break;
      }
      default:
        throw Error(fmt::format("PE {}: unknown layer type {}", pe, static_cast<std::uint32_t>(type)));
    }

    w.record.end_ns = t;
    w.record.dma_ns = dma_total;
    w.record.compute_ns = compute_total;
    add(t, EventKind::WorkerDone, "done", [this, &w, pe] {
      w.state = PeState::Sleep;
      if (opt_.drop_completion_from && *opt_.drop_completion_from == pe) return;
      post(now_ + to_ns(m_.noc_msg_ns), 0, EventKind::NocMsg, Tag::None, 0, 0, 0, w.record);
    });
  }

  const TimingModel& m_;
  const SimOptions& opt_;
  Bytes dram_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t now_ = 0, seq_ = 0, events_ = 0;
  std::vector<Worker> workers_;
  std::vector<TraceEvent> trace_;

  // Scheduler state.
  std::vector<int> enabled_;
  std::uint32_t num_layers_ = 0, first_layer_ = 0, timing_addr_ = 0, timing_pes_ = 0;
  std::uint32_t fetched_ = 0, next_ = 0, layer_index_ = 0, row_addr_ = 0, expected_ = 0;
  std::uint64_t fetch_start_ = 0;
  bool collecting_ = false, halted_ = false;
  std::map<int, PeRecord> received_;
  PeRecord setup_{0}, cleanup_{0};
};

}  // namespace

RunResult ChipSimulator::run(std::span<const std::int8_t> input) const {
  Run r(model_, options_, bytes_);
  return r.execute(input);
}

}  // namespace neuroflow
