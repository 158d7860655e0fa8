// SPDX-License-Identifier: Apache-2.0
// neuroflow: compile models to DRAM images and run them on the chip simulator.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>

#include "neuroflow/chipsim.hpp"
#include "neuroflow/error.hpp"
#include "neuroflow/manifest.hpp"
#include "neuroflow/oracle.hpp"
#include "neuroflow/pipeline.hpp"
#include "neuroflow/profiler.hpp"
#include "neuroflow/timing_model.hpp"

namespace fs = std::filesystem;
using namespace neuroflow;

namespace {

void init_logging() {
  auto logger = spdlog::stderr_color_st("neuroflow");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("NEUROFLOW_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string_view(env) != "off")
      spdlog::warn("NEUROFLOW_LOG='{}' is not a level (trace, debug, info, warn, error, critical, off)", env);
    else
      spdlog::set_level(level);
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(std::string(what) + " '" + p.string() + "' does not exist");
}

std::optional<SymbolTable> try_symbols(const fs::path& image) {
  const fs::path p = symbols_path(image);
  if (!fs::exists(p)) {
    spdlog::info("no symbol sidecar at {}", p.string());
    return std::nullopt;
  }
  return load_symbols(p);
}

std::vector<std::int8_t> read_input(const fs::path& path, const DramImage& img, const std::optional<SymbolTable>& syms) {
  require_file(path, "input");
  const Bytes raw = read_file(path);
  const std::size_t len = img.global.input_len;
  if (!syms && raw.size() != len)
    throw Error(fmt::format("input has {} bytes, expected {} bytes of int8", raw.size(), len));
  return decode_input(raw, len, syms ? syms->input_exp : 0);
}

TimingModel timing_model_from(const std::string& path) {
  if (path.empty()) return TimingModel{};
  require_file(path, "timing model");
  return load_timing_model(path);
}

struct CompileArgs {
  std::string model, calib, out;
  bool no_cle = false;
  int tile_target = 64;
  std::uint32_t sram_budget = 98304;
  int num_pes = kMaxPes;
};

int cmd_compile(const CompileArgs& a) {
  require_file(a.model, "model");
  require_file(a.calib, "calibration file");
  const ApplicationGraph model = load_model(a.model);
  const SampleSet samples = load_samples(a.calib);
  CalibrationSet calib;
  calib.samples = samples.samples;
  spdlog::info("loaded {} nodes and {} calibration samples", model.nodes.size(), calib.size());

  CompileOptions opt;
  opt.use_cle = !a.no_cle;
  opt.plan.tile_target = a.tile_target;
  opt.sram_budget = a.sram_budget;
  opt.num_pes = a.num_pes;
  const CompileResult r = compile_model(model, calib, opt);
  write_artifacts(r, a.out);
  std::cout << plan_summary(r);
  spdlog::info("wrote {}, {}, {}", a.out, symbols_path(a.out).string(), plan_path(a.out).string());
  return 0;
}

struct RunArgs {
  std::string image, input, output, timing, timing_model, trace;
  bool overlap = false;
};

int cmd_run(const RunArgs& a) {
  require_file(a.image, "image");
  SimOptions so;
  so.overlap = a.overlap;
  so.record_trace = !a.trace.empty();
  const ChipSimulator sim(read_file(a.image), timing_model_from(a.timing_model), so);
  const auto syms = try_symbols(a.image);
  const auto input = read_input(a.input, sim.image(), syms);
  const RunResult r = sim.run(input);
  write_file(a.output, std::span(reinterpret_cast<const std::uint8_t*>(r.output.data()), r.output.size()));
  const TimeLog log = collect(r.dram, syms ? &*syms : nullptr);
  write_text(a.timing, report(log, ReportFormat::Csv));
  if (!a.trace.empty()) {
    std::string t = "time_ns,pe,event,detail\n";
    for (const auto& e : r.trace) t += fmt::format("{},{},{},{}\n", e.time_ns, e.pe, to_string(e.kind), e.detail);
    write_text(a.trace, t);
  }
  spdlog::info("{} events, {} ns simulated", r.events, r.end_ns);
  return 0;
}

struct VerifyArgs {
  std::string image, model;
  int n = 1000;
  std::uint32_t seed = 0;
};

int cmd_verify(const VerifyArgs& a) {
  require_file(a.image, "image");
  require_file(a.model, "model");
  const ApplicationGraph q = load_model(a.model);
  const ChipSimulator sim(read_file(a.image), TimingModel{});
  const std::size_t len = sim.image().global.input_len;
  std::mt19937 rng(a.seed);
  std::uniform_int_distribution<int> dist(-128, 127);
  int mismatches = 0;
  std::optional<std::pair<int, std::size_t>> first;
  for (int i = 0; i < a.n; ++i) {
    std::vector<std::int8_t> x(len);
    for (auto& v : x) v = static_cast<std::int8_t>(dist(rng));
    const auto got = sim.run(x).output;
    const auto want = quant_forward(q, x);
    if (got == want) continue;
    ++mismatches;
    if (!first) {
      std::size_t k = 0;
      while (k < got.size() && k < want.size() && got[k] == want[k]) ++k;
      first = {i, k};
    }
  }
  std::cout << fmt::format("{}/{} mismatches\n", mismatches, a.n);
  if (first) {
    std::cout << fmt::format("first divergence: input {} element {}\n", first->first, first->second);
    return 1;
  }
  return 0;
}

struct ProfileArgs {
  std::string image, input, timing_model, format = "table";
  bool overlap = false;
};

int cmd_profile(const ProfileArgs& a) {
  require_file(a.image, "image");
  SimOptions so;
  so.overlap = a.overlap;
  const ChipSimulator sim(read_file(a.image), timing_model_from(a.timing_model), so);
  const auto syms = try_symbols(a.image);
  const RunResult r = sim.run(read_input(a.input, sim.image(), syms));
  std::cout << report(collect(r.dram, syms ? &*syms : nullptr), report_format_from_string(a.format));
  return 0;
}

int cmd_calibrate(const std::string& targets, const std::string& out) {
  require_file(targets, "targets");
  const CalibrationResult r = calibrate_timing(load_calibration_targets(targets));
  save_calibration(r, out);
  std::cout << fmt::format("{:<14} {:>10} {:>12} {:>8}\n", "row", "target_us", "predicted_us", "error");
  for (const auto& res : r.residuals)
    std::cout << fmt::format("{:<14} {:>10.1f} {:>12.1f} {:>7.1f}%\n", res.row, res.target_us, res.predicted_us,
                             100.0 * (res.predicted_us - res.target_us) / res.target_us);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Compile and simulate DNN inference on a SpiNNaker2-class chip"};
  app.require_subcommand(1);

  CompileArgs ca;
  auto* compile = app.add_subcommand("compile", "Quantize, partition and lay out a model as a DRAM image");
  compile->add_option("--model", ca.model, "Model manifest (JSON)")->required();
  compile->add_option("--calib", ca.calib, "Calibration samples manifest")->required();
  compile->add_option("--out", ca.out, "Output image path (.s2img)")->required();
  compile->add_flag("--no-cle", ca.no_cle, "Skip cross-layer equalization");
  compile->add_option("--tile-target", ca.tile_target, "Preferred outputs per worker")->capture_default_str();
  compile->add_option("--sram-budget", ca.sram_budget, "Usable SRAM bytes per PE")->capture_default_str();
  compile->add_option("--num-pes", ca.num_pes, "PEs available on the chip")->capture_default_str();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Execute one input on the simulator");
  run->add_option("--image", ra.image, "DRAM image from compile")->required();
  run->add_option("--input", ra.input, "Raw int8 or float32 input")->required();
  run->add_option("--output", ra.output, "Raw int8 output file")->required();
  run->add_option("--timing", ra.timing, "Timing CSV output")->required();
  run->add_option("--timing-model", ra.timing_model, "Timing model JSON (defaults when omitted)");
  run->add_option("--trace", ra.trace, "Event trace CSV output");
  run->add_flag("--overlap", ra.overlap, "Overlap weight DMA with MLA compute");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Compare simulator and integer oracle on random inputs");
  verify->add_option("--image", va.image, "DRAM image from compile")->required();
  verify->add_option("--model", va.model, "Quantized model manifest written by compile")->required();
  verify->add_option("--n", va.n, "Number of random inputs")->capture_default_str()->check(CLI::PositiveNumber);
  verify->add_option("--seed", va.seed, "Input generator seed")->capture_default_str();

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "Run one input and print the per-layer runtime breakdown");
  profile->add_option("--image", pa.image, "DRAM image from compile")->required();
  profile->add_option("--input", pa.input, "Raw int8 or float32 input")->required();
  profile->add_option("--timing-model", pa.timing_model, "Timing model JSON from calibrate")->required();
  profile->add_option("--format", pa.format, "Report format")->check(CLI::IsMember({"table", "csv", "json"}))->capture_default_str();
  profile->add_flag("--overlap", pa.overlap, "Overlap weight DMA with MLA compute");

  std::string targets, tm_out;
  auto* calibrate = app.add_subcommand("calibrate", "Fit the timing model to measured runtimes");
  calibrate->add_option("--targets", targets, "Measured runtime table (JSON)")->required();
  calibrate->add_option("--out", tm_out, "Timing model output (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*compile) return cmd_compile(ca);
    if (*run) return cmd_run(ra);
    if (*verify) return cmd_verify(va);
    if (*profile) return cmd_profile(pa);
    if (*calibrate) return cmd_calibrate(targets, tm_out);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
