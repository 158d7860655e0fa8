// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "neuroflow/bytes.hpp"
#include "neuroflow/chipsim.hpp"
#include "neuroflow/error.hpp"
#include "neuroflow/manifest.hpp"
#include "neuroflow/oracle.hpp"
#include "neuroflow/pipeline.hpp"

namespace nf = neuroflow;
using namespace neuroflow::testing;

namespace {

std::string error_of(const nf::ApplicationGraph& g, const nf::CalibrationSet& c, const nf::CompileOptions& o = {}) {
  try {
    nf::compile_model(g, c, o);
  } catch (const nf::Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Pipeline, EvalMlpPlan) {
  const auto r = nf::compile_model(make_eval_mlp(61), random_calibration(16, 784, 61));
  std::vector<int> workers;
  for (const auto& p : r.plans) workers.push_back(p.num_workers);
  EXPECT_EQ(workers, (std::vector<int>{8, 4, 1, 1}));
  EXPECT_EQ(r.plans[2].padded_out, 16);
  EXPECT_EQ(r.order[0].kind, nf::NodeKind::LinearReLU);
  EXPECT_TRUE(r.qgraph.is_quantized());
  const auto summary = nf::plan_summary(r);
  EXPECT_NE(summary.find("FC1+ReLU"), std::string::npos);
  EXPECT_NE(summary.find("8 worker PEs"), std::string::npos);
}

TEST(Pipeline, RecompilingQuantizedGraphIsIdempotent) {
  const auto a = nf::compile_model(make_eval_mlp(62), random_calibration(16, 784, 62));
  const auto b = nf::compile_model(a.qgraph, {});
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.qgraph, b.qgraph);
}

TEST(Pipeline, CleToggleKeepsChipExact) {
  const auto g = make_mlp({100, 64, 32, 10}, 63);
  const auto calib = random_calibration(16, 100, 63);
  nf::CompileOptions no_cle;
  no_cle.use_cle = false;
  const auto with = nf::compile_model(g, calib), without = nf::compile_model(g, calib, no_cle);
  std::mt19937 rng(63);
  for (const auto* r : {&with, &without}) {
    const nf::ChipSimulator sim(r->image, nf::TimingModel{});
    for (int i = 0; i < 10; ++i) {
      const auto x = random_int8(100, rng);
      ASSERT_EQ(sim.run(x).output, nf::quant_forward(r->qgraph, x));
    }
  }
}

TEST(Pipeline, SmallChipStillRuns) {
  nf::CompileOptions o;
  o.num_pes = 5;
  const auto r = nf::compile_model(make_eval_mlp(64), random_calibration(8, 784, 64), o);
  for (const auto& p : r.plans) EXPECT_LE(p.num_workers, 4);
  const nf::ChipSimulator sim(r.image, nf::TimingModel{});
  std::mt19937 rng(64);
  const auto x = random_int8(784, rng);
  EXPECT_EQ(sim.run(x).output, nf::quant_forward(r.qgraph, x));
}

TEST(Pipeline, ErrorsNameThePass) {
  const auto calib = random_calibration(4, 16, 65);

  // A ReLU with no Linear in front of it has no chip kernel.
  auto g = make_mlp({16, 8}, 65, false);
  g.tensors["pre"] = {"pre", {16}, nf::DType::Float32, std::nullopt};
  nf::Node relu;
  relu.id = 1;
  relu.kind = nf::NodeKind::ReLU;
  relu.name = "PreReLU";
  relu.inputs = {"input"};
  relu.outputs = {"pre"};
  g.nodes.push_back(relu);
  g.nodes[0].inputs = {"pre"};
  auto msg = error_of(g, calib);
  EXPECT_NE(msg.find("plan: unsupported layer"), std::string::npos) << msg;

  auto broken = make_mlp({16, 8}, 65, false);
  broken.nodes[0].inputs = {"nowhere"};
  msg = error_of(broken, calib);
  EXPECT_EQ(msg.rfind("validate:", 0), 0u) << msg;

  msg = error_of(make_mlp({16, 8}, 65, false), {});
  EXPECT_EQ(msg.rfind("quantize_model:", 0), 0u) << msg;

  nf::CompileOptions tight;
  tight.sram_budget = 1024;
  msg = error_of(make_mlp({600, 8}, 65, false), random_calibration(4, 600, 65), tight);
  EXPECT_EQ(msg.rfind("plan:", 0), 0u) << msg;

  nf::CompileOptions huge_chip;
  huge_chip.num_pes = 200;
  msg = error_of(make_mlp({16, 8}, 65, false), calib, huge_chip);
  EXPECT_EQ(msg.rfind("chip:", 0), 0u) << msg;
}

TEST(Pipeline, ArtifactsRoundTrip) {
  TempDir dir("artifacts");
  const auto r = nf::compile_model(make_eval_mlp(66), random_calibration(8, 784, 66));
  const auto img = dir / "m.s2img";
  nf::write_artifacts(r, img);
  EXPECT_EQ(nf::read_file(img), r.image);
  EXPECT_EQ(nf::symbols_path(img).filename(), "m.s2img.manifest.json");
  EXPECT_EQ(nf::load_symbols(nf::symbols_path(img)), r.compiled.symbols);
  const auto q = nf::load_model(nf::qmodel_path(img));
  std::mt19937 rng(66);
  const auto x = random_int8(784, rng);
  EXPECT_EQ(nf::quant_forward(q, x), nf::quant_forward(r.qgraph, x));

  const auto plan = nlohmann::json::parse(nf::read_file(nf::plan_path(img)));
  EXPECT_EQ(plan["workers_used"], 8);
  EXPECT_EQ(plan["layers"].size(), 4u);
  EXPECT_EQ(plan["layers"][0]["weight_chunks"].size(), 2u);
  EXPECT_EQ(plan["layers"][0]["pes"].size(), 8u);
  EXPECT_LE(plan["layers"][0]["sram_bytes"].get<int>(), 98304);
}

TEST(Pipeline, DecodeInput) {
  const nf::Bytes raw{1, 0xFF, 0x80};
  EXPECT_EQ(nf::decode_input(raw, 3, -7), (std::vector<std::int8_t>{1, -1, -128}));
  nf::Bytes f(12);
  nf::store_f32(f, 0, 0.5f);
  nf::store_f32(f, 4, -0.25f);
  nf::store_f32(f, 8, 3.0f);
  EXPECT_EQ(nf::decode_input(f, 3, -7), (std::vector<std::int8_t>{64, -32, 127}));
  try {
    nf::decode_input(nf::Bytes(5), 3, 0);
    FAIL();
  } catch (const nf::Error& e) {
    EXPECT_NE(std::string(e.what()).find("expected 3 bytes"), std::string::npos);
  }
}
