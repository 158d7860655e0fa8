// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "neuroflow/error.hpp"
#include "neuroflow/oracle.hpp"

namespace neuroflow {

Pow2Scale::Pow2Scale(int exponent) : exponent_(exponent) {
  if (exponent < kMinExponent || exponent > kMaxExponent)
    throw Error("power-of-two exponent " + std::to_string(exponent) + " outside [-31, 31]");
}

double Pow2Scale::real() const { return std::ldexp(1.0, exponent_); }

namespace {

inline std::int64_t quantize_one(double v, int exponent, std::int64_t qmin, std::int64_t qmax) {
  double scaled = std::round(std::ldexp(v, -exponent));
  return static_cast<std::int64_t>(std::clamp(scaled, static_cast<double>(qmin), static_cast<double>(qmax)));
}

}  // namespace

int best_pow2_exponent(std::span<const float> values, int bits) {
  if (values.empty()) throw Error("best_pow2_exponent of an empty tensor");
  if (bits < 2 || bits > 16) throw Error("unsupported bit width " + std::to_string(bits));
  bool all_zero = true;
  for (float v : values) {
    if (!std::isfinite(v)) throw Error("best_pow2_exponent: non-finite value");
    all_zero = all_zero && v == 0.0f;
  }
  if (all_zero) return 0;

  // A canonical summation order keeps the result independent of element order.
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  const std::int64_t qmax = (std::int64_t{1} << (bits - 1)) - 1;
  const std::int64_t qmin = -qmax - 1;
  int best = kMinExponent;
  double best_err = std::numeric_limits<double>::infinity();
  for (int e = kMinExponent; e <= kMaxExponent; ++e) {
    const double step = std::ldexp(1.0, e);
    double err = 0.0;
    for (float v : sorted) {
      double d = static_cast<double>(v) - static_cast<double>(quantize_one(v, e, qmin, qmax)) * step;
      err += d * d;
    }
    err /= static_cast<double>(values.size());
    if (err < best_err) {
      best_err = err;
      best = e;
    }
  }
  return best;
}

std::vector<std::int8_t> quantize_tensor(std::span<const float> values, int exponent) {
  Pow2Scale check(exponent);
  std::vector<std::int8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<std::int8_t>(quantize_one(values[i], exponent, -128, 127));
  return out;
}

std::vector<float> dequantize_tensor(std::span<const std::int8_t> values, int exponent) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<float>(std::ldexp(static_cast<double>(values[i]), exponent));
  return out;
}

EqualizedPair cross_layer_equalize(const FloatMatrix& w1, const std::optional<std::vector<float>>& b1,
                                   const FloatMatrix& w2) {
  if (w2.cols != w1.rows)
    throw Error("cross_layer_equalize: w2 has " + std::to_string(w2.cols) + " columns but w1 has " +
                std::to_string(w1.rows) + " rows");
  if (b1 && b1->size() != w1.rows) throw Error("cross_layer_equalize: bias length does not match w1 rows");

  EqualizedPair out{w1, b1, w2, std::vector<double>(w1.rows, 1.0)};
  for (std::size_t i = 0; i < w1.rows; ++i) {
    double r1 = 0.0, r2 = 0.0;
    for (std::size_t c = 0; c < w1.cols; ++c) r1 = std::max(r1, std::fabs(static_cast<double>(w1.at(i, c))));
    for (std::size_t r = 0; r < w2.rows; ++r) r2 = std::max(r2, std::fabs(static_cast<double>(w2.at(r, i))));
    if (r1 == 0.0 || r2 == 0.0) continue;
    const double s = std::sqrt(r1 / r2);
    out.scales[i] = s;
    for (std::size_t c = 0; c < w1.cols; ++c) out.w1.at(i, c) = static_cast<float>(w1.at(i, c) / s);
    if (out.b1) (*out.b1)[i] = static_cast<float>((*b1)[i] / s);
    for (std::size_t r = 0; r < w2.rows; ++r) out.w2.at(r, i) = static_cast<float>(w2.at(r, i) * s);
  }
  return out;
}

namespace {

bool is_graph_output(const ApplicationGraph& g, const std::string& t) {
  return std::find(g.graph_outputs.begin(), g.graph_outputs.end(), t) != g.graph_outputs.end();
}

const Node* sole_consumer(const ApplicationGraph& g, const std::map<std::string, std::vector<int>>& cons,
                          const std::string& t) {
  if (is_graph_output(g, t)) return nullptr;
  auto it = cons.find(t);
  if (it == cons.end() || it->second.size() != 1) return nullptr;
  return g.find_node(it->second.front());
}

FloatMatrix weight_matrix(const ApplicationGraph& g, const std::string& name) {
  const auto& spec = g.tensor(name);
  if (spec.shape.size() != 2) throw Error("weight '" + name + "' is not a matrix");
  return {static_cast<std::size_t>(spec.shape[0]), static_cast<std::size_t>(spec.shape[1]), g.constant_f32(name)};
}

std::size_t weight_users(const ApplicationGraph& g, const std::string& name) {
  return static_cast<std::size_t>(std::count_if(g.nodes.begin(), g.nodes.end(), [&](const Node& n) {
    return (n.weight && *n.weight == name) || (n.bias && *n.bias == name);
  }));
}

}  // namespace

ApplicationGraph equalize_model(const ApplicationGraph& graph) {
  ApplicationGraph g = graph;
  for (const auto& first : topo_sort(graph)) {
    if (!first.is_linear_family()) continue;
    auto cons = g.consumers();
    std::string act = first.outputs[0];
    if (first.kind == NodeKind::Linear) {
      const Node* relu = sole_consumer(g, cons, act);
      if (!relu || relu->kind != NodeKind::ReLU) continue;
      act = relu->outputs[0];
    }
    const Node* second = sole_consumer(g, cons, act);
    if (!second || !second->is_linear_family()) continue;
    if (weight_users(g, *first.weight) != 1 || weight_users(g, *second->weight) != 1) continue;
    if (first.bias && weight_users(g, *first.bias) != 1) continue;

    std::optional<std::vector<float>> b1;
    if (first.bias) b1 = g.constant_f32(*first.bias);
    auto eq = cross_layer_equalize(weight_matrix(g, *first.weight), b1, weight_matrix(g, *second->weight));
    g.set_constant(*first.weight, std::span<const float>(eq.w1.data));
    g.set_constant(*second->weight, std::span<const float>(eq.w2.data));
    if (first.bias) g.set_constant(*first.bias, std::span<const float>(*eq.b1));
  }
  return g;
}

ApplicationGraph quantize_model(const ApplicationGraph& graph, const CalibrationSet& calib,
                                const QuantizeOptions& options) {
  if (calib.samples.empty()) throw Error("quantize_model: empty calibration set");
  for (const auto& n : graph.nodes)
    if (n.kind == NodeKind::Quantize || n.kind == NodeKind::Dequantize)
      throw Error("quantize_model expects a float32 graph without Quantize/Dequantize nodes");
  for (const auto& [name, spec] : graph.tensors)
    if (spec.dtype != DType::Float32) throw Error("quantize_model expects a float32 graph; '" + name + "' is not");

  ApplicationGraph g = options.use_cle ? equalize_model(graph) : graph;

  // Activation statistics, reduced in sample order.
  std::map<std::string, std::vector<float>> observed;
  for (const auto& sample : calib.samples) {
    for (auto& [name, values] : float_forward_trace(g, sample)) {
      auto& dst = observed[name];
      dst.insert(dst.end(), values.begin(), values.end());
    }
  }

  std::map<std::string, int> act_exp;
  for (const auto& [name, values] : observed) act_exp[name] = best_pow2_exponent(values);
  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::Softmax) act_exp[n.outputs[0]] = options.softmax_out_exp;

  ApplicationGraph q = g;
  for (auto& [name, spec] : q.tensors) {
    if (g.is_constant(name)) continue;
    spec.dtype = DType::Int8;
    spec.scale_exp = act_exp.at(name);
  }

  for (auto& n : q.nodes) {
    n.in_exps.clear();
    for (const auto& in : n.inputs) n.in_exps.push_back(act_exp.at(in));
    n.out_exp = act_exp.at(n.outputs[0]);
    if (!n.is_linear_family()) continue;

    const auto w = g.constant_f32(*n.weight);
    const int w_exp = best_pow2_exponent(w);
    auto wq = quantize_tensor(w, w_exp);
    q.set_constant(*n.weight, std::span<const std::int8_t>(wq));
    q.tensors[*n.weight].dtype = DType::Int8;
    q.tensors[*n.weight].scale_exp = w_exp;

    QuantKernelSpec k{n.in_exps[0], w_exp, n.out_exp, n.kind == NodeKind::LinearReLU};
    (void)k.shift();
    if (n.bias) {
      const int b_exp = k.in_exp + k.w_exp;
      Pow2Scale check(b_exp);
      const auto b = g.constant_f32(*n.bias);
      std::vector<std::int32_t> bq(b.size());
      constexpr double lo = std::numeric_limits<std::int32_t>::min();
      constexpr double hi = std::numeric_limits<std::int32_t>::max();
      for (std::size_t i = 0; i < b.size(); ++i)
        bq[i] = static_cast<std::int32_t>(std::clamp(std::round(std::ldexp(static_cast<double>(b[i]), -b_exp)), lo, hi));
      q.set_constant(*n.bias, std::span<const std::int32_t>(bq));
      q.tensors[*n.bias].dtype = DType::Int32;
      q.tensors[*n.bias].scale_exp = b_exp;
    }
  }
  return q;
}

}  // namespace neuroflow
