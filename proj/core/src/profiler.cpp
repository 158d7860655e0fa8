// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <fmt/format.h>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "neuroflow/error.hpp"

namespace neuroflow {

std::uint64_t LayerTiming::max_worker_busy_ns() const {
  std::uint64_t m = 0;
  for (const auto& w : workers) m = std::max(m, w.busy_ns());
  return m;
}

std::uint64_t LayerTiming::overhead_ns() const {
  const auto busy = max_worker_busy_ns();
  return runtime_ns() > busy ? runtime_ns() - busy : 0;
}

namespace {

const PeRecord* slowest(const std::vector<PeRecord>& ws) {
  const PeRecord* best = nullptr;
  for (const auto& w : ws)
    if (!best || w.busy_ns() > best->busy_ns()) best = &w;
  return best;
}

}  // namespace

double LayerTiming::dma_share() const {
  const PeRecord* w = slowest(workers);
  if (!w || runtime_ns() == 0) return 0.0;
  return static_cast<double>(w->dma_ns) / static_cast<double>(runtime_ns());
}

double LayerTiming::compute_utilization() const {
  const PeRecord* w = slowest(workers);
  if (!w || runtime_ns() == 0) return 0.0;
  return static_cast<double>(w->compute_ns) / static_cast<double>(runtime_ns());
}

std::uint64_t TimeLog::total_ns() const {
  std::uint64_t t = setup.busy_ns() + cleanup.busy_ns();
  for (const auto& l : layers) t += l.runtime_ns();
  return t;
}

double TimeLog::mean_overhead_ns() const {
  if (layers.empty()) return 0.0;
  double s = 0;
  for (const auto& l : layers) s += static_cast<double>(l.overhead_ns());
  return s / static_cast<double>(layers.size());
}

void store_record(std::span<std::uint8_t> dram, std::uint32_t addr, const PeRecord& r) {
  const std::uint64_t words[] = {r.start_ns, r.end_ns, r.dma_ns, r.compute_ns};
  for (std::size_t i = 0; i < kRecordWords; ++i) {
    if (words[i] > std::numeric_limits<std::uint32_t>::max())
      throw Error(fmt::format("timing value {} ns overflows a 32-bit record", words[i]));
    store_u32(dram, addr + 4 * i, static_cast<std::uint32_t>(words[i]));
  }
}

PeRecord load_record(std::span<const std::uint8_t> dram, std::uint32_t addr, int pe) {
  if (addr + kTimingRecordBytes > dram.size())
    throw ParseError(fmt::format("timing record at {} lies outside the image", addr), addr);
  return {pe, load_u32(dram, addr), load_u32(dram, addr + 4), load_u32(dram, addr + 8), load_u32(dram, addr + 12)};
}

TimeLog collect(std::span<const std::uint8_t> dram, const SymbolTable* symbols) {
  const DramImage img = parse(dram);
  const GlobalConfig& g = img.global;
  const std::uint32_t P = g.timing_pes;
  auto written = [&](const PeRecord& r, const std::string& what) {
    if (r.end_ns == 0 || r.end_ns < r.start_ns) throw Error("run incomplete: no timing record for " + what);
  };

  TimeLog log;
  const std::uint32_t tail = g.timing_area_addr + g.num_layers * P * kTimingRecordBytes;
  log.setup = load_record(dram, tail, 0);
  log.cleanup = load_record(dram, tail + kTimingRecordBytes, 0);
  written(log.setup, "setup");
  written(log.cleanup, "cleanup");

  for (std::size_t i = 0; i < img.layers.size(); ++i) {
    const LayerBlock& b = img.layers[i];
    LayerTiming lt;
    lt.index = static_cast<int>(i);
    const auto type = static_cast<LayerType>(b.header.layer_type);
    switch (type) {
      case LayerType::Linear: lt.kind = NodeKind::Linear; break;
      case LayerType::LinearReLU: lt.kind = NodeKind::LinearReLU; break;
      case LayerType::Add: lt.kind = NodeKind::Add; break;
      default: lt.kind = NodeKind::Softmax; break;
    }
    if (symbols && i < symbols->layers.size()) {
      const LayerInfo& info = symbols->layers[i];
      lt.name = info.name;
      lt.input = info.input_len;
      lt.output = info.output_len;
    } else {
      lt.name = fmt::format("layer{}", i);
      lt.input = b.workers.empty() ? 0 : static_cast<int>(type == LayerType::Add ? b.header.num_workers * b.workers[0].tile_out
                                                                                 : b.workers[0].in_len);
      lt.output = static_cast<int>(b.header.num_workers * (b.workers.empty() ? 0 : b.workers[0].tile_out));
    }
    const std::uint32_t row = b.sched.timing_row_addr;
    lt.scheduler = load_record(dram, row, 0);
    written(lt.scheduler, lt.name + " scheduler");
    for (std::uint32_t k = 0; k < b.header.num_workers; ++k) {
      const int pe = static_cast<int>(k) + 1;
      PeRecord r = load_record(dram, row + static_cast<std::uint32_t>(pe) * kTimingRecordBytes, pe);
      written(r, fmt::format("{} worker {}", lt.name, pe));
      lt.workers.push_back(r);
    }
    log.layers.push_back(std::move(lt));
  }
  return log;
}

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw Error("unknown report format '" + std::string(s) + "' (table, csv, json)");
}

namespace {

constexpr std::string_view kCsvHeader = "layer,pe,start_ns,end_ns,dma_ns,compute_ns,name,kind,input,output";

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void csv_row(std::string& out, std::string_view layer, const PeRecord& r, std::string_view name, std::string_view kind,
             int input, int output) {
  out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", layer, r.pe, r.start_ns, r.end_ns, r.dma_ns, r.compute_ns,
                     csv_field(name), kind, input, output);
}

double us(std::uint64_t ns) { return static_cast<double>(ns) / 1000.0; }

std::string table(const TimeLog& log) {
  std::string out = fmt::format("{:<5} {:<20} {:<11} {:>7} {:>12} {:>12} {:>10} {:>10} {:>6}\n", "layer", "name",
                                "kind", "workers", "runtime_us", "overhead_us", "dma_us", "mla_us", "util");
  for (const auto& l : log.layers) {
    const PeRecord* w = slowest(l.workers);
    const bool linear = l.kind == NodeKind::Linear || l.kind == NodeKind::LinearReLU;
    out += fmt::format("{:<5} {:<20} {:<11} {:>7} {:>12.3f} {:>12.3f} {:>10.3f} {:>10.3f} {:>6}\n", l.index, l.name,
                       to_string(l.kind), l.workers.size(), us(l.runtime_ns()), us(l.overhead_ns()),
                       w ? us(w->dma_ns) : 0.0, w ? us(w->compute_ns) : 0.0,
                       linear ? fmt::format("{:.1f}%", 100.0 * l.compute_utilization()) : std::string("-"));
  }
  out += fmt::format("setup   {:.3f} us\n", us(log.setup.busy_ns()));
  out += fmt::format("cleanup {:.3f} us\n", us(log.cleanup.busy_ns()));
  out += fmt::format("mean scheduling overhead {:.3f} us\n", log.mean_overhead_ns() / 1000.0);
  out += fmt::format("total   {:.3f} us\n", us(log.total_ns()));
  return out;
}

std::string csv(const TimeLog& log) {
  std::string out(kCsvHeader);
  out += '\n';
  if (log.layers.empty() && log.setup == PeRecord{} && log.cleanup == PeRecord{}) return out;
  csv_row(out, "setup", log.setup, "setup", "setup", 0, 0);
  for (const auto& l : log.layers) {
    const std::string idx = std::to_string(l.index);
    const auto kind = to_string(l.kind);
    csv_row(out, idx, l.scheduler, l.name, kind, l.input, l.output);
    for (const auto& w : l.workers) csv_row(out, idx, w, l.name, kind, l.input, l.output);
  }
  csv_row(out, "cleanup", log.cleanup, "cleanup", "cleanup", 0, 0);
  return out;
}

nlohmann::json record_json(const PeRecord& r) {
  return {{"pe", r.pe}, {"start_ns", r.start_ns}, {"end_ns", r.end_ns}, {"dma_ns", r.dma_ns},
          {"compute_ns", r.compute_ns}};
}

std::string json_report(const TimeLog& log) {
  nlohmann::json j;
  j["setup_ns"] = log.setup.busy_ns();
  j["cleanup_ns"] = log.cleanup.busy_ns();
  j["total_ns"] = log.total_ns();
  j["mean_overhead_ns"] = log.mean_overhead_ns();
  j["setup"] = record_json(log.setup);
  j["cleanup"] = record_json(log.cleanup);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : log.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (const auto& r : l.workers) w.push_back(record_json(r));
    layers.push_back({{"index", l.index},
                      {"name", l.name},
                      {"kind", to_string(l.kind)},
                      {"input", l.input},
                      {"output", l.output},
                      {"workers", l.workers.size()},
                      {"runtime_ns", l.runtime_ns()},
                      {"scheduler_overhead_ns", l.overhead_ns()},
                      {"dma_share", l.dma_share()},
                      {"compute_utilization", l.compute_utilization()},
                      {"scheduler", record_json(l.scheduler)},
                      {"records", std::move(w)}});
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError(fmt::format("timing csv line {}: unterminated quote", line_no), line_no);
  fields.push_back(std::move(cur));
  return fields;
}

std::uint64_t to_u64(const std::string& s, std::size_t line_no) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty())
    throw ParseError(fmt::format("timing csv line {}: '{}' is not a non-negative integer", line_no, s), line_no);
  return v;
}

}  // namespace

std::string report(const TimeLog& log, ReportFormat format) {
  switch (format) {
    case ReportFormat::Table: return table(log);
    case ReportFormat::Csv: return csv(log);
    case ReportFormat::Json: return json_report(log);
  }
  return {};
}

TimeLog parse_timing_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError("timing csv: missing or unexpected header", 0);
  TimeLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line, line_no);
    if (f.size() != 10) throw ParseError(fmt::format("timing csv line {}: expected 10 fields, got {}", line_no, f.size()), line_no);
    PeRecord r{static_cast<int>(to_u64(f[1], line_no)), to_u64(f[2], line_no), to_u64(f[3], line_no),
               to_u64(f[4], line_no), to_u64(f[5], line_no)};
    if (f[0] == "setup") {
      log.setup = r;
    } else if (f[0] == "cleanup") {
      log.cleanup = r;
    } else {
      const int idx = static_cast<int>(to_u64(f[0], line_no));
      if (log.layers.empty() || log.layers.back().index != idx) {
        LayerTiming lt;
        lt.index = idx;
        lt.name = f[6];
        try {
          lt.kind = node_kind_from_string(f[7]);
        } catch (const Error&) {
          throw ParseError(fmt::format("timing csv line {}: unknown kind '{}'", line_no, f[7]), line_no);
        }
        lt.input = static_cast<int>(to_u64(f[8], line_no));
        lt.output = static_cast<int>(to_u64(f[9], line_no));
        lt.scheduler = r;
        log.layers.push_back(std::move(lt));
      } else {
        log.layers.back().workers.push_back(r);
      }
    }
  }
  return log;
}

}  // namespace neuroflow
