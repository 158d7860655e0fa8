// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "neuroflow/error.hpp"
#include "neuroflow/manifest.hpp"
#include "neuroflow/partitioner.hpp"
#include "neuroflow/timing_model.hpp"

namespace nf = neuroflow;
using namespace neuroflow::testing;

namespace {

nf::CalibrationTargets targets() { return nf::load_calibration_targets(data_dir() / "measured_runtimes.json"); }

const nf::ChipDescriptor& chip() {
  static const auto c = nf::ChipDescriptor::spinnaker2();
  return c;
}

double rel(double got, double want) { return std::abs(got - want) / want; }

}  // namespace

TEST(TimingModel, DefaultsAreValid) {
  EXPECT_NO_THROW(nf::TimingModel{}.validate());
  nf::TimingModel m;
  m.mla_macs_per_ns = 0;
  EXPECT_THROW(m.validate(), nf::Error);
  m = {};
  m.scalar_op_ns = std::nan("");
  EXPECT_THROW(m.validate(), nf::Error);
}

TEST(TimingModel, PrimitiveCosts) {
  nf::TimingModel m;
  m.dram_dma_setup_ns = 100;
  m.dram_bytes_per_ns = 0.5;
  m.mla_macs_per_ns = 2;
  m.scalar_op_ns = 1.5;
  m.exp_eval_ns = 10;
  EXPECT_EQ(m.dma_ns(0), 100u);
  EXPECT_EQ(m.dma_ns(1000), 2100u);
  EXPECT_EQ(m.mla_ns(1001), 501u);  // 500.5 rounds away from zero
  EXPECT_EQ(m.scalar_ns(3), 5u);    // 4.5 -> 5
  EXPECT_EQ(m.exp_ns(16), 160u);
  EXPECT_EQ(nf::to_ns(-3.0), 0u);
}

TEST(TimingModel, LinearWorkerCostByHand) {
  const nf::TimingModel m;
  const auto plan = nf::plan_layer(0, {nf::NodeKind::LinearReLU, 784, 512}, chip());
  const auto w = nf::layer_work(plan);
  EXPECT_EQ(w.chunk_bytes, (std::vector<std::uint32_t>{25088, 25088}));
  EXPECT_EQ(w.config_bytes, 4u * (8 + 4));

  auto dma = [&](double bytes) { return std::llround(m.dram_dma_setup_ns + bytes / m.dram_bytes_per_ns); };
  const long long dma_total = dma(48) + dma(784) + dma(256) + 2 * dma(25088) + dma(64);
  const long long mla = 2 * std::llround(25088 / m.mla_macs_per_ns);
  const long long busy = std::llround(m.irq_dispatch_ns) + std::llround(m.worker_layer_setup_ns) + dma_total + mla +
                         std::llround(784 * m.scalar_op_ns) + std::llround(64 * m.scalar_op_ns);
  const auto c = nf::predict_worker(m, w);
  EXPECT_EQ(c.dma_ns, static_cast<std::uint64_t>(dma_total));
  EXPECT_EQ(c.compute_ns, static_cast<std::uint64_t>(mla));
  EXPECT_EQ(c.busy_ns, static_cast<std::uint64_t>(busy));
  const long long layer = std::llround(m.scheduler_header_fetch_ns) + 8 * std::llround(m.scheduler_per_worker_trigger_ns) +
                          2 * std::llround(m.noc_msg_ns) + busy + std::llround(m.timing_store_ns);
  EXPECT_EQ(nf::predict_layer_ns(m, w), static_cast<std::uint64_t>(layer));
}

TEST(TimingModel, SoftmaxAndAddCosts) {
  const nf::TimingModel m;
  const auto sm = nf::layer_work(nf::plan_layer(0, {nf::NodeKind::Softmax, 10, 10}, chip()));
  EXPECT_EQ(sm.valid_len, 10);
  const auto cs = nf::predict_worker(m, sm);
  EXPECT_EQ(cs.compute_ns, m.exp_ns(10));
  EXPECT_EQ(cs.busy_ns - cs.dma_ns - cs.compute_ns,
            nf::to_ns(m.irq_dispatch_ns) + nf::to_ns(m.worker_layer_setup_ns) + m.scalar_ns(20));

  const auto add = nf::layer_work(nf::plan_layer(0, {nf::NodeKind::Add, 64, 64}, chip()));
  const auto ca = nf::predict_worker(m, add);
  EXPECT_EQ(ca.compute_ns, 0u);
  EXPECT_EQ(ca.dma_ns, m.dma_ns(44) + 3 * m.dma_ns(64));
}

TEST(TimingModel, MoreBandwidthIsNeverSlower) {
  nf::TimingModel slow, fast;
  fast.dram_bytes_per_ns = 2 * slow.dram_bytes_per_ns;
  for (const auto& s : {nf::LayerShape{nf::NodeKind::LinearReLU, 784, 512}, nf::LayerShape{nf::NodeKind::Linear, 256, 10},
                        nf::LayerShape{nf::NodeKind::Softmax, 16, 16}}) {
    const auto w = nf::layer_work(nf::plan_layer(0, s, chip()));
    EXPECT_LT(nf::predict_layer_ns(fast, w), nf::predict_layer_ns(slow, w));
  }
}

TEST(TimingModel, SetupAndCleanupScaleWithWorkers) {
  const nf::TimingModel m;
  EXPECT_EQ(nf::predict_setup_ns(m, 9) - nf::predict_setup_ns(m, 8), nf::to_ns(m.setup_per_worker_ns));
  EXPECT_EQ(nf::predict_cleanup_ns(m, 9) - nf::predict_cleanup_ns(m, 8), nf::to_ns(m.cleanup_per_worker_ns));
  EXPECT_EQ(nf::predict_setup_ns(m, 0), m.dma_ns(672) + nf::to_ns(m.setup_base_ns));
}

TEST(TimingModel, JsonRoundTrip) {
  TempDir dir("tm");
  nf::TimingModel m;
  m.dram_bytes_per_ns = 0.123456789;
  m.timing_store_ns = 7777.25;
  nf::save_timing_model(m, dir / "tm.json");
  EXPECT_EQ(nf::load_timing_model(dir / "tm.json"), m);

  nf::write_text(dir / "partial.json", R"({"noc_msg_ns": 150})");
  nf::TimingModel expect;
  expect.noc_msg_ns = 150;
  EXPECT_EQ(nf::load_timing_model(dir / "partial.json"), expect);

  nf::write_text(dir / "unknown.json", R"({"noc_latency": 150})");
  EXPECT_THROW(nf::load_timing_model(dir / "unknown.json"), nf::ParseError);
  nf::write_text(dir / "neg.json", R"({"noc_msg_ns": -1})");
  EXPECT_THROW(nf::load_timing_model(dir / "neg.json"), nf::Error);
  nf::write_text(dir / "str.json", R"({"noc_msg_ns": "fast"})");
  EXPECT_THROW(nf::load_timing_model(dir / "str.json"), nf::ParseError);
  nf::write_text(dir / "arr.json", "[1, 2]");
  EXPECT_THROW(nf::load_timing_model(dir / "arr.json"), nf::ParseError);
}

TEST(Calibrate, ThroughputAnchorsFollowFirstLinearLayer) {
  const auto r = nf::calibrate_timing(targets());
  // FC1 worker slice: 64 rows of 784 weights, fetched in 192 us and multiplied in 29 us.
  EXPECT_NEAR(r.model.dram_bytes_per_ns, 64.0 * 784.0 / 192000.0, 1e-9);
  EXPECT_NEAR(r.model.mla_macs_per_ns, 64.0 * 784.0 / 29000.0, 1e-9);
  EXPECT_NEAR(r.model.dram_bytes_per_ns, 0.261, 0.001);
  EXPECT_NEAR(r.model.mla_macs_per_ns, 1.73, 0.01);
}

TEST(Calibrate, ReproducesTargets) {
  const auto t = targets();
  const auto r = nf::calibrate_timing(t);
  ASSERT_GE(r.residuals.size(), 9u);
  for (const auto& res : r.residuals) {
    const double tol = res.row == "total" ? 0.20 : res.row.rfind("setup", 0) == 0 || res.row.rfind("cleanup", 0) == 0 ? 0.01 : 0.25;
    EXPECT_LE(rel(res.predicted_us, res.target_us), tol) << res.row << " " << res.predicted_us;
  }
  // Residuals report exactly what the model predicts.
  const auto w = nf::layer_work(nf::plan_layer(0, {nf::NodeKind::LinearReLU, 784, 512}, chip()));
  EXPECT_DOUBLE_EQ(r.residuals[0].predicted_us, static_cast<double>(nf::predict_layer_ns(r.model, w)) / 1000.0);
  // Per-worker costs round to whole ns: up to 0.5 ns drift for each of the 143 extra workers.
  EXPECT_NEAR(nf::predict_setup_ns(r.model, 151) / 1000.0, 39.0, 0.0725);
  EXPECT_NEAR(nf::predict_cleanup_ns(r.model, 151) / 1000.0, 93.0, 0.0725);
}

TEST(Calibrate, SaveLoadKeepsModel) {
  TempDir dir("cal");
  const auto r = nf::calibrate_timing(targets());
  nf::save_calibration(r, dir / "tm.json");
  EXPECT_EQ(nf::load_timing_model(dir / "tm.json"), r.model);
}

TEST(Calibrate, InfeasibleTargets) {
  nf::CalibrationTargets zero;
  EXPECT_THROW(nf::calibrate_timing(zero), nf::Error);

  auto t = targets();
  t.weight_fetch_us = 0;
  EXPECT_THROW(nf::calibrate_timing(t), nf::Error);

  t = targets();
  t.overhead_us = 1;  // below header fetch plus triggers
  try {
    nf::calibrate_timing(t);
    FAIL() << "overhead below the fixed scheduler costs accepted";
  } catch (const nf::Error& e) {
    EXPECT_NE(std::string(e.what()).find("infeasible"), std::string::npos);
  }

  t = targets();
  t.all_cleanup_us = 5;  // cleanup shrinking with more workers
  EXPECT_THROW(nf::calibrate_timing(t), nf::Error);

  t = targets();
  t.layers[0].workers = 3;
  EXPECT_THROW(nf::calibrate_timing(t), nf::Error);
}

TEST(Calibrate, SingleOperatingPointKeepsDefaultSlopes) {
  auto t = targets();
  t.all_workers = 0;
  const auto r = nf::calibrate_timing(t);
  EXPECT_EQ(r.model.setup_per_worker_ns, nf::TimingModel{}.setup_per_worker_ns);
  EXPECT_NEAR(nf::predict_setup_ns(r.model, 8) / 1000.0, 12.0, 0.01);
  EXPECT_NEAR(nf::predict_cleanup_ns(r.model, 8) / 1000.0, 9.0, 0.01);
}

TEST(Calibrate, TargetsFileErrors) {
  TempDir dir("cal");
  nf::write_text(dir / "t.json", R"({"layers": []})");
  EXPECT_THROW(nf::load_calibration_targets(dir / "t.json"), nf::ParseError);
  nf::write_text(dir / "t.json", "{");
  EXPECT_THROW(nf::load_calibration_targets(dir / "t.json"), nf::ParseError);
}
