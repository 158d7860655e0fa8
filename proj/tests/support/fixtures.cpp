// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <unistd.h>

#include "neuroflow/pipeline.hpp"

namespace neuroflow::testing {

namespace {

void add_tensor(ApplicationGraph& g, const std::string& name, std::vector<std::int64_t> shape) {
  g.tensors[name] = TensorSpec{name, std::move(shape), DType::Float32, std::nullopt};
}

}  // namespace

ApplicationGraph make_mlp(const std::vector<int>& dims, std::uint32_t seed, bool softmax, int valid_out) {
  std::mt19937 rng(seed);
  ApplicationGraph g;
  std::string act = "input";
  add_tensor(g, act, {dims.front()});
  g.graph_inputs = {act};
  int id = 0;
  const std::size_t layers = dims.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = dims[l], out = dims[l + 1];
    const std::string fc = "fc" + std::to_string(l + 1);
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in)));
    std::uniform_real_distribution<float> bdist(-0.05f, 0.05f);
    std::vector<float> w(static_cast<std::size_t>(in) * static_cast<std::size_t>(out)), b(static_cast<std::size_t>(out));
    const bool last = l + 1 == layers;
    for (int r = 0; r < out; ++r) {
      const bool pad = last && valid_out >= 0 && r >= valid_out;
      for (int c = 0; c < in; ++c) w[static_cast<std::size_t>(r) * in + c] = pad ? 0.0f : dist(rng);
      b[static_cast<std::size_t>(r)] = pad ? 0.0f : bdist(rng);
    }
    add_tensor(g, fc + ".weight", {out, in});
    add_tensor(g, fc + ".bias", {out});
    g.set_constant(fc + ".weight", std::span<const float>(w));
    g.set_constant(fc + ".bias", std::span<const float>(b));
    add_tensor(g, fc + ".out", {out});
    Node n;
    n.id = id++;
    n.kind = NodeKind::Linear;
    n.name = "FC" + std::to_string(l + 1);
    n.inputs = {act};
    n.outputs = {fc + ".out"};
    n.weight = fc + ".weight";
    n.bias = fc + ".bias";
    g.nodes.push_back(n);
    act = fc + ".out";
    if (!last) {
      const std::string r = "relu" + std::to_string(l + 1) + ".out";
      add_tensor(g, r, {out});
      Node relu;
      relu.id = id++;
      relu.kind = NodeKind::ReLU;
      relu.name = "ReLU" + std::to_string(l + 1);
      relu.inputs = {act};
      relu.outputs = {r};
      g.nodes.push_back(relu);
      act = r;
    }
  }
  if (softmax) {
    add_tensor(g, "probs", {dims.back()});
    Node s;
    s.id = id++;
    s.kind = NodeKind::Softmax;
    s.name = "Softmax";
    s.inputs = {act};
    s.outputs = {"probs"};
    g.nodes.push_back(s);
    act = "probs";
  }
  g.graph_outputs = {act};
  return g;
}

ApplicationGraph qdq_softmax_graph(std::uint32_t seed) {
  auto g = make_mlp({8, 8}, seed, false);
  g.tensors["input"].dtype = DType::Int8;
  g.tensors["input"].scale_exp = -4;
  g.tensors["fc1.out"].dtype = DType::Int8;
  g.tensors["fc1.out"].scale_exp = -5;
  const auto w = g.constant_f32("fc1.weight");
  const int we = best_pow2_exponent(w);
  const auto wq = quantize_tensor(w, we);
  g.set_constant("fc1.weight", std::span<const std::int8_t>(wq));
  g.tensors["fc1.weight"].dtype = DType::Int8;
  g.tensors["fc1.weight"].scale_exp = we;
  g.constants.erase("fc1.bias");
  g.tensors.erase("fc1.bias");
  g.nodes[0].bias.reset();
  g.nodes[0].in_exps = {-4};
  g.nodes[0].out_exp = -5;

  for (auto t : {"deq", "soft"}) g.tensors[t] = TensorSpec{t, {8}, DType::Float32, std::nullopt};
  g.tensors["probs"] = TensorSpec{"probs", {8}, DType::Int8, -7};
  auto add = [&](int id, NodeKind k, std::string in, std::string out, std::optional<double> scale) {
    Node n;
    n.id = id;
    n.kind = k;
    n.name = std::string(to_string(k));
    n.inputs = {std::move(in)};
    n.outputs = {std::move(out)};
    n.scale = scale;
    g.nodes.push_back(n);
  };
  add(1, NodeKind::Dequantize, "fc1.out", "deq", 1.0 / 32);
  add(2, NodeKind::Softmax, "deq", "soft", std::nullopt);
  add(3, NodeKind::Quantize, "soft", "probs", 1.0 / 128);
  g.graph_outputs = {"probs"};
  return g;
}

ApplicationGraph make_eval_mlp(std::uint32_t seed) { return make_mlp({784, 512, 256, 16}, seed, true, 10); }

std::vector<float> random_floats(std::size_t n, std::mt19937& rng, float lo, float hi) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<std::int8_t> random_int8(std::size_t n, std::mt19937& rng) {
  std::uniform_int_distribution<int> d(-128, 127);
  std::vector<std::int8_t> v(n);
  for (auto& x : v) x = static_cast<std::int8_t>(d(rng));
  return v;
}

CalibrationSet random_calibration(std::size_t count, std::size_t dim, std::uint32_t seed) {
  std::mt19937 rng(seed);
  CalibrationSet c;
  for (std::size_t i = 0; i < count; ++i) c.samples.push_back(random_floats(dim, rng));
  return c;
}

ApplicationGraph quantized_eval_mlp(std::uint32_t seed, bool use_cle) {
  CompileOptions opt;
  opt.use_cle = use_cle;
  return compile_model(make_eval_mlp(seed), random_calibration(32, 784, seed + 1), opt).qgraph;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("neuroflow-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path data_dir() { return NEUROFLOW_DATA_DIR; }

}  // namespace neuroflow::testing
