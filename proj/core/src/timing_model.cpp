// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/timing_model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <numeric>

#include "neuroflow/dram_image.hpp"
#include "neuroflow/error.hpp"
#include "neuroflow/manifest.hpp"

namespace neuroflow {

using nlohmann::json;

namespace {

struct Field {
  const char* key;
  double TimingModel::*member;
};

constexpr Field kFields[] = {
    {"dram_dma_setup_ns", &TimingModel::dram_dma_setup_ns},
    {"dram_bytes_per_ns", &TimingModel::dram_bytes_per_ns},
    {"noc_msg_ns", &TimingModel::noc_msg_ns},
    {"irq_dispatch_ns", &TimingModel::irq_dispatch_ns},
    {"mla_macs_per_ns", &TimingModel::mla_macs_per_ns},
    {"scalar_op_ns", &TimingModel::scalar_op_ns},
    {"exp_eval_ns", &TimingModel::exp_eval_ns},
    {"scheduler_header_fetch_ns", &TimingModel::scheduler_header_fetch_ns},
    {"scheduler_per_worker_trigger_ns", &TimingModel::scheduler_per_worker_trigger_ns},
    {"timing_store_ns", &TimingModel::timing_store_ns},
    {"worker_layer_setup_ns", &TimingModel::worker_layer_setup_ns},
    {"setup_base_ns", &TimingModel::setup_base_ns},
    {"setup_per_worker_ns", &TimingModel::setup_per_worker_ns},
    {"cleanup_base_ns", &TimingModel::cleanup_base_ns},
    {"cleanup_per_worker_ns", &TimingModel::cleanup_per_worker_ns},
};

constexpr const char* kModelFormat = "neuroflow-timing-model";

json model_json(const TimingModel& m) {
  json j;
  j["format"] = kModelFormat;
  for (const auto& f : kFields) j[f.key] = m.*f.member;
  return j;
}

}  // namespace

void TimingModel::validate() const {
  for (const auto& f : kFields) {
    const double v = this->*f.member;
    if (!std::isfinite(v) || v <= 0.0)
      throw Error(fmt::format("timing model: {} must be positive and finite, got {}", f.key, v));
  }
}

std::uint64_t to_ns(double v) {
  if (!std::isfinite(v) || v <= 0.0) return 0;
  return static_cast<std::uint64_t>(std::llround(v));
}

std::uint64_t TimingModel::dma_ns(std::uint64_t bytes) const {
  return to_ns(dram_dma_setup_ns + static_cast<double>(bytes) / dram_bytes_per_ns);
}
std::uint64_t TimingModel::mla_ns(std::uint64_t macs) const {
  return to_ns(static_cast<double>(macs) / mla_macs_per_ns);
}
std::uint64_t TimingModel::scalar_ns(std::uint64_t ops) const {
  return to_ns(static_cast<double>(ops) * scalar_op_ns);
}
std::uint64_t TimingModel::exp_ns(std::uint64_t evals) const {
  return to_ns(static_cast<double>(evals) * exp_eval_ns);
}

void save_timing_model(const TimingModel& model, const std::filesystem::path& path) {
  model.validate();
  write_text(path, model_json(model).dump(2) + "\n");
}

TimingModel load_timing_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.byte);
  }
  if (!j.is_object()) throw ParseError(path.string() + ": timing model must be a JSON object");
  TimingModel m;
  for (const auto& [key, value] : j.items()) {
    if (key == "format" || key == "residuals") continue;
    auto it = std::find_if(std::begin(kFields), std::end(kFields), [&](const Field& f) { return key == f.key; });
    if (it == std::end(kFields)) throw ParseError(fmt::format("{}: unknown timing parameter '{}'", path.string(), key));
    if (!value.is_number()) throw ParseError(fmt::format("{}: '{}' is not a number", path.string(), key));
    m.*(it->member) = value.get<double>();
  }
  m.validate();
  return m;
}

LayerWork layer_work(const TilePlan& p) {
  LayerWork w;
  w.kind = p.kind;
  w.workers = p.num_workers;
  w.tile_out = p.tile_out;
  switch (p.kind) {
    case NodeKind::Linear:
    case NodeKind::LinearReLU:
      w.in_len = p.in_len;
      for (const auto& c : p.weight_chunks) w.chunk_bytes.push_back(c.length);
      w.config_bytes = static_cast<std::uint32_t>(4 * (8 + 2 * p.weight_chunks.size()));
      break;
    case NodeKind::Add:
      w.in_len = p.tile_out;
      w.config_bytes = 4 * (8 + 3);
      break;
    case NodeKind::Softmax:
      w.in_len = p.in_len;
      w.valid_len = p.valid_out;
      w.config_bytes = 4 * (8 + 3);
      break;
    default:
      throw Error("no worker program for node kind " + std::string(to_string(p.kind)));
  }
  return w;
}

WorkerCost predict_worker(const TimingModel& m, const LayerWork& w) {
  WorkerCost c;
  auto dma = [&](std::uint64_t bytes) {
    const auto t = m.dma_ns(bytes);
    c.dma_ns += t;
    c.busy_ns += t;
  };
  c.busy_ns += to_ns(m.irq_dispatch_ns) + to_ns(m.worker_layer_setup_ns);
  dma(w.config_bytes);
  const auto tile = static_cast<std::uint64_t>(w.tile_out);
  const auto in = static_cast<std::uint64_t>(w.in_len);
  switch (w.kind) {
    case NodeKind::Linear:
    case NodeKind::LinearReLU: {
      dma(in);
      dma(tile * 4);
      c.busy_ns += m.scalar_ns(in);
      for (auto bytes : w.chunk_bytes) {
        dma(bytes);
        const auto t = m.mla_ns(bytes);  // one MAC per weight byte
        c.compute_ns += t;
        c.busy_ns += t;
      }
      c.busy_ns += m.scalar_ns(tile);
      dma(tile);
      break;
    }
    case NodeKind::Add:
      dma(tile);
      dma(tile);
      c.busy_ns += m.scalar_ns(tile);
      dma(tile);
      break;
    case NodeKind::Softmax: {
      const auto n = static_cast<std::uint64_t>(w.valid_len);
      dma(in);
      const auto t = m.exp_ns(n);
      c.compute_ns += t;
      c.busy_ns += t + m.scalar_ns(2 * n);
      dma(tile);
      break;
    }
    default:
      throw Error("no worker program for node kind " + std::string(to_string(w.kind)));
  }
  return c;
}

std::uint64_t predict_layer_ns(const TimingModel& m, const LayerWork& w) {
  const auto workers = static_cast<std::uint64_t>(w.workers);
  return to_ns(m.scheduler_header_fetch_ns) + workers * to_ns(m.scheduler_per_worker_trigger_ns) +
         2 * to_ns(m.noc_msg_ns) + predict_worker(m, w).busy_ns + to_ns(m.timing_store_ns);
}

std::uint64_t predict_setup_ns(const TimingModel& m, int workers) {
  return m.dma_ns(kGlobalBytes) + static_cast<std::uint64_t>(workers) * to_ns(m.setup_per_worker_ns) +
         to_ns(m.setup_base_ns);
}

std::uint64_t predict_cleanup_ns(const TimingModel& m, int workers) {
  return to_ns(m.scheduler_header_fetch_ns) + static_cast<std::uint64_t>(workers) * to_ns(m.cleanup_per_worker_ns) +
         to_ns(m.cleanup_base_ns);
}

CalibrationTargets load_calibration_targets(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.byte);
  }
  CalibrationTargets t;
  try {
    for (const auto& l : j.at("layers")) {
      CalibrationTargets::Layer layer;
      layer.name = l.at("name").get<std::string>();
      layer.kind = node_kind_from_string(l.at("kind").get<std::string>());
      layer.runtime_us = l.at("runtime_us").get<double>();
      layer.input = l.at("input").get<int>();
      layer.output = l.at("output").get<int>();
      layer.workers = l.at("workers").get<int>();
      t.layers.push_back(std::move(layer));
    }
    t.setup_us = j.at("setup_us").get<double>();
    t.cleanup_us = j.at("cleanup_us").get<double>();
    t.setup_workers = j.at("setup_workers").get<int>();
    t.all_workers = j.value("all_workers", 0);
    t.all_setup_us = j.value("all_setup_us", 0.0);
    t.all_cleanup_us = j.value("all_cleanup_us", 0.0);
    t.weight_fetch_us = j.at("weight_fetch_us").get<double>();
    t.mla_us = j.at("mla_us").get<double>();
    t.overhead_us = j.at("overhead_us").get<double>();
    t.total_us = j.value("total_us", 0.0);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return t;
}

namespace {

void require_positive(double v, const std::string& what) {
  if (!std::isfinite(v) || v <= 0.0) throw Error(fmt::format("calibration is infeasible: {} = {}", what, v));
}

/// Scalar ops a worker spends per layer, the variable part of the layer residual.
double scalar_ops(const LayerWork& w) {
  switch (w.kind) {
    case NodeKind::Softmax: return 2.0 * w.valid_len;
    case NodeKind::Add: return w.tile_out;
    default: return static_cast<double>(w.in_len) + w.tile_out;
  }
}

}  // namespace

CalibrationResult calibrate_timing(const CalibrationTargets& t) {
  if (t.layers.empty()) throw Error("calibration targets list no layers");
  require_positive(t.weight_fetch_us, "weight_fetch_us");
  require_positive(t.mla_us, "mla_us");
  require_positive(t.overhead_us, "overhead_us");
  require_positive(t.setup_us, "setup_us");
  require_positive(t.cleanup_us, "cleanup_us");
  if (t.setup_workers < 1) throw Error("calibration targets need setup_workers >= 1");

  const ChipDescriptor chip = ChipDescriptor::spinnaker2();
  std::vector<LayerWork> works;
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    const auto& l = t.layers[i];
    require_positive(l.runtime_us, l.name + " runtime_us");
    if (l.workers < 1) throw Error("calibration layer " + l.name + " needs at least one worker");
    const int padded = (l.output + kMinTile - 1) / kMinTile * kMinTile;
    if (padded % l.workers != 0 || (padded / l.workers) % kMinTile != 0)
      throw Error(fmt::format("calibration layer {}: {} outputs cannot be split over {} workers", l.name, l.output,
                              l.workers));
    const TilePlan p = plan_layer(static_cast<int>(i), {l.kind, l.input, l.output}, chip, {padded / l.workers});
    if (p.num_workers != l.workers)
      throw Error(fmt::format("calibration layer {}: plan uses {} workers, table lists {}", l.name, p.num_workers,
                              l.workers));
    works.push_back(layer_work(p));
  }

  // The first linear layer anchors the bandwidth and accelerator throughput.
  auto first = std::find_if(works.begin(), works.end(),
                            [](const LayerWork& w) { return w.kind == NodeKind::Linear || w.kind == NodeKind::LinearReLU; });
  if (first == works.end()) throw Error("calibration targets contain no linear layer");
  const double slice = std::accumulate(first->chunk_bytes.begin(), first->chunk_bytes.end(), 0.0);

  TimingModel m;
  m.dram_bytes_per_ns = slice / (t.weight_fetch_us * 1000.0);
  m.mla_macs_per_ns = slice / (t.mla_us * 1000.0);

  double mean_workers = 0;
  for (const auto& w : works) mean_workers += w.workers;
  mean_workers /= static_cast<double>(works.size());
  m.timing_store_ns = t.overhead_us * 1000.0 - m.scheduler_header_fetch_ns -
                      mean_workers * m.scheduler_per_worker_trigger_ns - 2.0 * m.noc_msg_ns;
  require_positive(m.timing_store_ns, "timing_store_ns");

  // Remaining layer time is F + s * n_l; fit F (worker layer setup) and s
  // (scalar op) by relative least squares.
  std::vector<double> residual, ops, weight;
  for (std::size_t i = 0; i < works.size(); ++i) {
    LayerWork w = works[i];
    TimingModel probe = m;
    probe.worker_layer_setup_ns = 1e-9;
    probe.scalar_op_ns = 1e-9;
    const double fixed = static_cast<double>(predict_layer_ns(probe, w));
    residual.push_back(t.layers[i].runtime_us * 1000.0 - fixed);
    ops.push_back(scalar_ops(w));
    weight.push_back(1.0 / (t.layers[i].runtime_us * 1000.0));
  }
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    const double w2 = weight[i] * weight[i];
    sw += w2;
    sx += w2 * ops[i];
    sy += w2 * residual[i];
    sxx += w2 * ops[i] * ops[i];
    sxy += w2 * ops[i] * residual[i];
  }
  const double det = sw * sxx - sx * sx;
  double fixed_cost = 0, per_op = 0;
  if (residual.size() >= 2 && std::abs(det) > 1e-12 * sw * sxx) {
    per_op = (sw * sxy - sx * sy) / det;
    fixed_cost = (sy - per_op * sx) / sw;
  }
  if (!(per_op > 0.0) || !(fixed_cost > 0.0)) {
    // Degenerate or negative slope: keep the default scalar cost, fit the intercept.
    per_op = TimingModel{}.scalar_op_ns;
    fixed_cost = (sy - per_op * sx) / sw;
  }
  m.scalar_op_ns = per_op;
  m.worker_layer_setup_ns = fixed_cost;
  require_positive(m.worker_layer_setup_ns, "worker_layer_setup_ns");

  const int w0 = t.setup_workers;
  if (t.all_workers > w0 && t.all_setup_us > 0 && t.all_cleanup_us > 0) {
    const double dw = t.all_workers - w0;
    m.setup_per_worker_ns = (t.all_setup_us - t.setup_us) * 1000.0 / dw;
    m.cleanup_per_worker_ns = (t.all_cleanup_us - t.cleanup_us) * 1000.0 / dw;
    require_positive(m.setup_per_worker_ns, "setup_per_worker_ns");
    require_positive(m.cleanup_per_worker_ns, "cleanup_per_worker_ns");
  }
  m.setup_base_ns = t.setup_us * 1000.0 - w0 * m.setup_per_worker_ns - static_cast<double>(m.dma_ns(kGlobalBytes));
  m.cleanup_base_ns = t.cleanup_us * 1000.0 - w0 * m.cleanup_per_worker_ns - m.scheduler_header_fetch_ns;
  require_positive(m.setup_base_ns, "setup_base_ns");
  require_positive(m.cleanup_base_ns, "cleanup_base_ns");
  m.validate();

  CalibrationResult r;
  r.model = m;
  for (std::size_t i = 0; i < works.size(); ++i)
    r.residuals.push_back({t.layers[i].name, t.layers[i].runtime_us,
                           static_cast<double>(predict_layer_ns(m, works[i])) / 1000.0});
  if (t.total_us > 0) {
    std::uint64_t total = predict_setup_ns(m, w0) + predict_cleanup_ns(m, w0);
    for (const auto& w : works) total += predict_layer_ns(m, w);
    r.residuals.push_back({"total", t.total_us, static_cast<double>(total) / 1000.0});
  }
  r.residuals.push_back({"setup", t.setup_us, static_cast<double>(predict_setup_ns(m, w0)) / 1000.0});
  r.residuals.push_back({"cleanup", t.cleanup_us, static_cast<double>(predict_cleanup_ns(m, w0)) / 1000.0});
  if (t.all_workers > w0) {
    r.residuals.push_back({fmt::format("setup@{}", t.all_workers), t.all_setup_us,
                           static_cast<double>(predict_setup_ns(m, t.all_workers)) / 1000.0});
    r.residuals.push_back({fmt::format("cleanup@{}", t.all_workers), t.all_cleanup_us,
                           static_cast<double>(predict_cleanup_ns(m, t.all_workers)) / 1000.0});
  }
  return r;
}

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path) {
  result.model.validate();
  json j = model_json(result.model);
  json res = json::array();
  for (const auto& r : result.residuals)
    res.push_back({{"row", r.row}, {"target_us", r.target_us}, {"predicted_us", r.predicted_us}});
  j["residuals"] = std::move(res);
  write_text(path, j.dump(2) + "\n");
}

}  // namespace neuroflow
