// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neuroflow/error.hpp"
#include "neuroflow/quantizer.hpp"

namespace neuroflow {

int QuantKernelSpec::shift() const {
  int s = out_exp - (in_exp + w_exp);
  if (s < -31 || s > 31)
    throw Error("requantization shift " + std::to_string(s) + " outside [-31, 31]");
  return s;
}

double round_half_away_from_zero(double v) { return std::round(v); }

std::int8_t requantize(std::int64_t acc, int shift) {
  if (shift < -31 || shift > 31) throw Error("requantization shift " + std::to_string(shift) + " outside [-31, 31]");
  std::int64_t q;
  if (shift > 0) {
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    q = acc >= 0 ? (acc + half) >> shift : -((-acc + half) >> shift);
  } else {
    // Any nonzero value shifted left by 8 or more saturates.
    const int ls = -shift;
    if (acc == 0) {
      q = 0;
    } else if (ls >= 8) {
      q = acc > 0 ? 127 : -128;
    } else {
      const std::int64_t bound = std::int64_t{1} << 40;
      q = std::clamp(acc, -bound, bound) * (std::int64_t{1} << ls);
    }
  }
  return static_cast<std::int8_t>(std::clamp<std::int64_t>(q, -128, 127));
}

std::vector<float> softmax_f32(std::span<const float> x) {
  if (x.empty()) throw Error("softmax of an empty vector");
  float m = *std::max_element(x.begin(), x.end());
  std::vector<float> e(x.size());
  float sum = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - m);
    sum += e[i];
  }
  for (auto& v : e) v /= sum;
  return e;
}

std::vector<std::int8_t> softmax_int8(std::span<const std::int8_t> x, int in_exp, int out_exp) {
  if (x.empty()) throw Error("softmax of an empty vector");
  std::vector<float> v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = static_cast<float>(std::ldexp(static_cast<double>(x[i]), in_exp));
  return quantize_tensor(softmax_f32(v), out_exp);
}

namespace {

const std::vector<float>& lookup(const std::map<std::string, std::vector<float>>& env, const std::string& t) {
  auto it = env.find(t);
  if (it == env.end()) throw Error("tensor '" + t + "' has no value");
  return it->second;
}

std::vector<float> linear_f32(const ApplicationGraph& g, const Node& n, const std::vector<float>& x) {
  const auto w = g.constant_f32(*n.weight);
  const auto& ws = g.tensor(*n.weight);
  if (ws.shape.size() != 2 || ws.shape[1] != static_cast<std::int64_t>(x.size()))
    throw Error("node " + std::to_string(n.id) + ": weight shape does not match input length " +
                std::to_string(x.size()));
  const auto rows = static_cast<std::size_t>(ws.shape[0]);
  const auto cols = x.size();
  std::vector<float> b;
  if (n.bias) {
    b = g.constant_f32(*n.bias);
    if (b.size() != rows) throw Error("node " + std::to_string(n.id) + ": bias length mismatch");
  }
  std::vector<float> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const float* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(wr[c]) * x[c];
    float v = static_cast<float>(acc);
    if (!b.empty()) v += b[r];
    y[r] = v;
  }
  return y;
}

void relu_inplace(std::vector<float>& v) {
  for (auto& x : v) x = std::max(x, 0.0f);
}

}  // namespace

std::map<std::string, std::vector<float>> float_forward_trace(const ApplicationGraph& g, std::span<const float> input) {
  if (g.graph_inputs.size() != 1 || g.graph_outputs.size() != 1)
    throw Error("float_forward expects exactly one graph input and one graph output");
  const auto& in_spec = g.tensor(g.graph_inputs.front());
  if (in_spec.numel() != static_cast<std::int64_t>(input.size()))
    throw Error("input has " + std::to_string(input.size()) + " elements, graph expects " +
                std::to_string(in_spec.numel()));

  std::map<std::string, std::vector<float>> env;
  env[g.graph_inputs.front()] = std::vector<float>(input.begin(), input.end());
  for (const auto& n : topo_sort(g)) {
    std::vector<float> y;
    switch (n.kind) {
      case NodeKind::Linear:
      case NodeKind::LinearReLU:
        y = linear_f32(g, n, lookup(env, n.inputs[0]));
        if (n.kind == NodeKind::LinearReLU) relu_inplace(y);
        break;
      case NodeKind::ReLU:
        y = lookup(env, n.inputs[0]);
        relu_inplace(y);
        break;
      case NodeKind::Add: {
        const auto& a = lookup(env, n.inputs[0]);
        const auto& b = lookup(env, n.inputs[1]);
        if (a.size() != b.size()) throw Error("node " + std::to_string(n.id) + ": Add operand lengths differ");
        y.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
        break;
      }
      case NodeKind::Softmax:
        y = softmax_f32(lookup(env, n.inputs[0]));
        break;
      case NodeKind::Quantize:
      case NodeKind::Dequantize:
        throw Error("float_forward requires a float32 graph; node " + std::to_string(n.id) + " is " +
                    std::string(to_string(n.kind)));
    }
    env[n.outputs[0]] = std::move(y);
  }
  return env;
}

std::vector<float> float_forward(const ApplicationGraph& g, std::span<const float> input) {
  auto env = float_forward_trace(g, input);
  return lookup(env, g.graph_outputs.front());
}

namespace {

struct QValue {
  bool is_float = false;
  std::vector<float> f;
  std::vector<std::int32_t> q;
  int exp = 0;
};

const QValue& qlookup(const std::map<std::string, QValue>& env, const std::string& t) {
  auto it = env.find(t);
  if (it == env.end()) throw Error("tensor '" + t + "' has no value");
  return it->second;
}

void expect_int(const Node& n, const QValue& v, std::size_t slot) {
  if (v.is_float)
    throw Error("node " + std::to_string(n.id) + " (" + std::string(to_string(n.kind)) + ") received a float operand");
  if (slot >= n.in_exps.size())
    throw Error("node " + std::to_string(n.id) + " has no input exponent for operand " + std::to_string(slot));
  if (n.in_exps[slot] != v.exp)
    throw Error("exponent mismatch on edge into node " + std::to_string(n.id) + ": value has " +
                std::to_string(v.exp) + ", node expects " + std::to_string(n.in_exps[slot]));
}

QValue linear_q(const ApplicationGraph& g, const Node& n, const QValue& x) {
  expect_int(n, x, 0);
  const auto& ws = g.tensor(*n.weight);
  if (ws.dtype != DType::Int8 || !ws.scale_exp) throw Error("node " + std::to_string(n.id) + ": weight is not int8");
  if (ws.shape.size() != 2 || ws.shape[1] != static_cast<std::int64_t>(x.q.size()))
    throw Error("node " + std::to_string(n.id) + ": weight shape does not match input length");
  const auto w = g.constant_i8(*n.weight);
  QuantKernelSpec k{n.in_exps[0], *ws.scale_exp, n.out_exp, n.kind == NodeKind::LinearReLU};
  const int shift = k.shift();

  const auto rows = static_cast<std::size_t>(ws.shape[0]);
  const auto cols = x.q.size();
  std::vector<std::int32_t> bias(rows, 0);
  if (n.bias) {
    const auto& bs = g.tensor(*n.bias);
    if (bs.dtype != DType::Int32 || bs.scale_exp != k.in_exp + k.w_exp)
      throw Error("node " + std::to_string(n.id) + ": bias must be int32 with exponent in_exp + w_exp");
    bias = g.constant_i32(*n.bias);
    if (bias.size() != rows) throw Error("node " + std::to_string(n.id) + ": bias length mismatch");
  }

  QValue y;
  y.exp = n.out_exp;
  y.q.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::int64_t acc = bias[r];
    const std::int8_t* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<std::int64_t>(wr[c]) * x.q[c];
    if (k.relu) acc = std::max<std::int64_t>(acc, 0);
    y.q[r] = requantize(acc, shift);
  }
  return y;
}

}  // namespace

std::vector<std::int8_t> quant_forward(const ApplicationGraph& g, std::span<const std::int8_t> input) {
  if (g.graph_inputs.size() != 1 || g.graph_outputs.size() != 1)
    throw Error("quant_forward expects exactly one graph input and one graph output");
  const auto& in_spec = g.tensor(g.graph_inputs.front());
  if (in_spec.dtype != DType::Int8 || !in_spec.scale_exp) throw Error("graph input must be an int8 tensor");
  if (in_spec.numel() != static_cast<std::int64_t>(input.size()))
    throw Error("input has " + std::to_string(input.size()) + " elements, graph expects " +
                std::to_string(in_spec.numel()));

  std::map<std::string, QValue> env;
  QValue x0;
  x0.exp = *in_spec.scale_exp;
  x0.q.assign(input.begin(), input.end());
  env[g.graph_inputs.front()] = std::move(x0);

  for (const auto& n : topo_sort(g)) {
    QValue y;
    const QValue& a = qlookup(env, n.inputs[0]);
    switch (n.kind) {
      case NodeKind::Linear:
      case NodeKind::LinearReLU:
        y = linear_q(g, n, a);
        break;
      case NodeKind::ReLU:
        if (a.is_float) {
          y = a;
          relu_inplace(y.f);
        } else {
          expect_int(n, a, 0);
          QuantKernelSpec k{n.in_exps[0], 0, n.out_exp, true};
          const int shift = k.shift();
          y.exp = n.out_exp;
          y.q.resize(a.q.size());
          for (std::size_t i = 0; i < a.q.size(); ++i) y.q[i] = requantize(std::max(a.q[i], 0), shift);
        }
        break;
      case NodeKind::Add: {
        const QValue& b = qlookup(env, n.inputs[1]);
        if (a.is_float != b.is_float) throw Error("node " + std::to_string(n.id) + ": Add mixes float and int operands");
        if (a.is_float) {
          y.is_float = true;
          y.f.resize(a.f.size());
          for (std::size_t i = 0; i < a.f.size(); ++i) y.f[i] = a.f[i] + b.f[i];
          break;
        }
        expect_int(n, a, 0);
        expect_int(n, b, 1);
        if (a.q.size() != b.q.size()) throw Error("node " + std::to_string(n.id) + ": Add operand lengths differ");
        const int e_min = std::min(a.exp, b.exp);
        const int sa = a.exp - e_min;
        const int sb = b.exp - e_min;
        QuantKernelSpec k{e_min, 0, n.out_exp, false};
        const int shift = k.shift();
        y.exp = n.out_exp;
        y.q.resize(a.q.size());
        for (std::size_t i = 0; i < a.q.size(); ++i) {
          std::int64_t s = (static_cast<std::int64_t>(a.q[i]) << sa) + (static_cast<std::int64_t>(b.q[i]) << sb);
          y.q[i] = requantize(s, shift);
        }
        break;
      }
      case NodeKind::Softmax:
        if (a.is_float) {
          y.is_float = true;
          y.f = softmax_f32(a.f);
        } else {
          expect_int(n, a, 0);
          std::vector<std::int8_t> v(a.q.begin(), a.q.end());
          auto s = softmax_int8(v, a.exp, n.out_exp);
          y.exp = n.out_exp;
          y.q.assign(s.begin(), s.end());
        }
        break;
      case NodeKind::Quantize: {
        if (!a.is_float) throw Error("Quantize node " + std::to_string(n.id) + " received an int operand");
        auto e = n.scale ? exact_pow2_exponent(*n.scale) : std::nullopt;
        if (!e) throw Error("Quantize node " + std::to_string(n.id) + " has a non power-of-two scale");
        auto q = quantize_tensor(a.f, *e);
        y.exp = *e;
        y.q.assign(q.begin(), q.end());
        break;
      }
      case NodeKind::Dequantize: {
        if (a.is_float) throw Error("Dequantize node " + std::to_string(n.id) + " received a float operand");
        auto e = n.scale ? exact_pow2_exponent(*n.scale) : std::nullopt;
        if (!e) throw Error("Dequantize node " + std::to_string(n.id) + " has a non power-of-two scale");
        if (*e != a.exp)
          throw Error("exponent mismatch on edge into node " + std::to_string(n.id) + ": value has " +
                      std::to_string(a.exp) + ", node expects " + std::to_string(*e));
        y.is_float = true;
        y.f.resize(a.q.size());
        for (std::size_t i = 0; i < a.q.size(); ++i)
          y.f[i] = static_cast<float>(std::ldexp(static_cast<double>(a.q[i]), *e));
        break;
      }
    }
    env[n.outputs[0]] = std::move(y);
  }

  const QValue& out = qlookup(env, g.graph_outputs.front());
  if (out.is_float) throw Error("graph output is a float tensor");
  return std::vector<std::int8_t>(out.q.begin(), out.q.end());
}

}  // namespace neuroflow
