// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/pipeline.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neuroflow/error.hpp"
#include "neuroflow/manifest.hpp"

namespace neuroflow {

namespace {

template <typename F>
auto pass(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", name, e.what()));
  }
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const char* suffix) {
  return std::filesystem::path(p.string() + suffix);
}

}  // namespace

CompileResult compile_model(const ApplicationGraph& model, const CalibrationSet& calib, const CompileOptions& options) {
  const ChipDescriptor chip = pass("chip", [&] {
    ChipDescriptor c = ChipDescriptor::spinnaker2(options.num_pes, options.sram_budget);
    c.validate();
    return c;
  });
  pass("validate", [&] {
    const auto diags = validate(model);
    if (diags.empty()) return 0;
    std::string msg;
    for (const auto& d : diags) msg += fmt::format("{}[{}] {}", msg.empty() ? "" : "; ", d.code, d.message);
    throw Error(msg);
  });

  CompileResult r;
  const bool has_qdq = std::any_of(model.nodes.begin(), model.nodes.end(), [](const Node& n) {
    return n.kind == NodeKind::Quantize || n.kind == NodeKind::Dequantize;
  });
  ApplicationGraph g = model;
  if (!has_qdq && !model.is_quantized())
    g = pass("quantize_model", [&] { return quantize_model(model, calib, {options.use_cle}); });
  g = pass("strip_qdq", [&] { return strip_qdq(g); });
  g = pass("fuse_linear_relu", [&] { return fuse_linear_relu(g); });
  if (!g.is_quantized()) throw Error("quantize_model: graph still carries float activations after lowering");
  r.order = pass("topo_sort", [&] { return topo_sort(g); });
  r.plans = pass("plan", [&] { return plan_model(g, r.order, chip, options.plan); });
  r.mapping = pass("map", [&] { return map_model(r.plans, chip); });
  r.compiled = pass("build_image", [&] { return build_image(g, r.order, r.plans, r.mapping, chip); });
  r.image = serialize(r.compiled.image);
  r.qgraph = std::move(g);
  return r;
}

std::filesystem::path symbols_path(const std::filesystem::path& image) { return with_suffix(image, ".manifest.json"); }
std::filesystem::path plan_path(const std::filesystem::path& image) { return with_suffix(image, ".plan.json"); }
std::filesystem::path qmodel_path(const std::filesystem::path& image) { return with_suffix(image, ".qmodel.json"); }

void write_artifacts(const CompileResult& r, const std::filesystem::path& image) {
  write_file(image, r.image);
  save_symbols(r.compiled.symbols, r.compiled.image, symbols_path(image));
  write_text(plan_path(image), plan_report_json(r));
  save_model(r.qgraph, qmodel_path(image));
}

std::string plan_report_json(const CompileResult& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < r.plans.size(); ++i) {
    const TilePlan& p = r.plans[i];
    const Node& n = r.order[i];
    nlohmann::json chunks = nlohmann::json::array();
    for (const auto& c : p.weight_chunks) chunks.push_back({{"offset", c.offset}, {"length", c.length}});
    layers.push_back({{"index", i},
                      {"id", n.id},
                      {"name", n.name},
                      {"kind", to_string(n.kind)},
                      {"workers", p.num_workers},
                      {"tile_out", p.tile_out},
                      {"padded_out", p.padded_out},
                      {"valid_out", p.valid_out},
                      {"in_len", p.in_len},
                      {"rows_per_chunk", p.rows_per_chunk},
                      {"sram_bytes", sram_footprint(p)},
                      {"weight_chunks", std::move(chunks)},
                      {"pes", r.mapping.worker_pes[i]}});
  }
  nlohmann::json j{{"scheduler_pe", r.mapping.scheduler_pe},
                   {"workers_used", r.mapping.workers_used},
                   {"image_bytes", r.image.size()},
                   {"layers", std::move(layers)}};
  return j.dump(2) + "\n";
}

std::string plan_summary(const CompileResult& r) {
  std::string out = fmt::format("{:<5} {:<20} {:<11} {:>7} {:>5} {:>7} {:>7}\n", "layer", "name", "kind", "workers",
                                "tile", "padded", "chunks");
  for (std::size_t i = 0; i < r.plans.size(); ++i) {
    const TilePlan& p = r.plans[i];
    out += fmt::format("{:<5} {:<20} {:<11} {:>7} {:>5} {:>7} {:>7}\n", i, r.order[i].name, to_string(p.kind),
                       p.num_workers, p.tile_out, p.padded_out, p.weight_chunks.size());
  }
  out += fmt::format("image {} bytes, {} worker PEs\n", r.image.size(), r.mapping.workers_used);
  return out;
}

std::vector<std::int8_t> decode_input(std::span<const std::uint8_t> raw, std::size_t len, int exponent) {
  if (raw.size() == len) return {reinterpret_cast<const std::int8_t*>(raw.data()),
                                 reinterpret_cast<const std::int8_t*>(raw.data()) + len};
  if (raw.size() == 4 * len) {
    std::vector<float> f(len);
    for (std::size_t i = 0; i < len; ++i) f[i] = load_f32(raw, 4 * i);
    return quantize_tensor(f, exponent);
  }
  throw Error(fmt::format("input has {} bytes; expected {} bytes of int8 or {} bytes of float32", raw.size(), len,
                          4 * len));
}

}  // namespace neuroflow
