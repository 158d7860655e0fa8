// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/graph_ir.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <set>
#include <sstream>

#include "neuroflow/error.hpp"

namespace neuroflow {

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::Float32: return 4;
    case DType::Int8: return 1;
    case DType::Int32: return 4;
  }
  return 0;
}

std::string_view to_string(DType t) {
  switch (t) {
    case DType::Float32: return "float32";
    case DType::Int8: return "int8";
    case DType::Int32: return "int32";
  }
  return "?";
}

DType dtype_from_string(std::string_view s) {
  if (s == "float32") return DType::Float32;
  if (s == "int8") return DType::Int8;
  if (s == "int32") return DType::Int32;
  throw ParseError("unknown dtype '" + std::string(s) + "'");
}

std::int64_t TensorSpec::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Linear: return "Linear";
    case NodeKind::ReLU: return "ReLU";
    case NodeKind::Add: return "Add";
    case NodeKind::Softmax: return "Softmax";
    case NodeKind::Quantize: return "Quantize";
    case NodeKind::Dequantize: return "Dequantize";
    case NodeKind::LinearReLU: return "LinearReLU";
  }
  return "?";
}

NodeKind node_kind_from_string(std::string_view s) {
  static const std::pair<std::string_view, NodeKind> table[] = {
      {"Linear", NodeKind::Linear},       {"ReLU", NodeKind::ReLU},
      {"Add", NodeKind::Add},             {"Softmax", NodeKind::Softmax},
      {"Quantize", NodeKind::Quantize},   {"Dequantize", NodeKind::Dequantize},
      {"LinearReLU", NodeKind::LinearReLU}};
  for (const auto& [name, kind] : table)
    if (name == s) return kind;
  throw Error("unsupported layer kind '" + std::string(s) + "'");
}

const TensorSpec& ApplicationGraph::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("unknown tensor '" + name + "'");
  return it->second;
}

const Node* ApplicationGraph::find_node(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

namespace {

template <typename T>
std::vector<T> decode_constant(const ApplicationGraph& g, const std::string& name, DType want) {
  const auto& spec = g.tensor(name);
  if (spec.dtype != want)
    throw Error("constant '" + name + "' is " + std::string(to_string(spec.dtype)) +
                ", expected " + std::string(to_string(want)));
  auto it = g.constants.find(name);
  if (it == g.constants.end()) throw Error("tensor '" + name + "' has no payload");
  const Bytes& raw = it->second;
  std::vector<T> out(raw.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if constexpr (std::is_same_v<T, float>) {
      out[i] = load_f32(raw, i * 4);
    } else if constexpr (std::is_same_v<T, std::int32_t>) {
      out[i] = load_i32(raw, i * 4);
    } else {
      out[i] = static_cast<std::int8_t>(raw[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<float> ApplicationGraph::constant_f32(const std::string& name) const {
  return decode_constant<float>(*this, name, DType::Float32);
}
std::vector<std::int8_t> ApplicationGraph::constant_i8(const std::string& name) const {
  return decode_constant<std::int8_t>(*this, name, DType::Int8);
}
std::vector<std::int32_t> ApplicationGraph::constant_i32(const std::string& name) const {
  return decode_constant<std::int32_t>(*this, name, DType::Int32);
}

void ApplicationGraph::set_constant(const std::string& name, std::span<const float> values) {
  Bytes raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) store_f32(raw, i * 4, values[i]);
  constants[name] = std::move(raw);
}
void ApplicationGraph::set_constant(const std::string& name, std::span<const std::int8_t> values) {
  Bytes raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) raw[i] = static_cast<std::uint8_t>(values[i]);
  constants[name] = std::move(raw);
}
void ApplicationGraph::set_constant(const std::string& name, std::span<const std::int32_t> values) {
  Bytes raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) store_i32(raw, i * 4, values[i]);
  constants[name] = std::move(raw);
}

std::map<std::string, std::vector<int>> ApplicationGraph::consumers() const {
  std::map<std::string, std::vector<int>> out;
  for (const auto& n : nodes)
    for (const auto& in : n.inputs) out[in].push_back(n.id);
  return out;
}

std::map<std::string, int> ApplicationGraph::producers() const {
  std::map<std::string, int> out;
  for (const auto& n : nodes)
    for (const auto& o : n.outputs) out.emplace(o, n.id);
  return out;
}

bool ApplicationGraph::is_quantized() const {
  for (const auto& n : nodes)
    if (n.kind == NodeKind::Quantize || n.kind == NodeKind::Dequantize) return false;
  for (const auto& [name, spec] : tensors)
    if (spec.dtype == DType::Float32) return false;
  return !nodes.empty() || !tensors.empty();
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? ", " : "") << ids[i];
  return os.str();
}

// Tarjan SCC over node ids; returns components that contain a cycle.
std::vector<std::vector<int>> cyclic_components(const ApplicationGraph& g,
                                                const std::set<int>& restrict_to = {}) {
  auto prod = g.producers();
  std::map<int, std::vector<int>> succ;
  std::map<int, bool> self_loop;
  for (const auto& n : g.nodes) {
    if (!restrict_to.empty() && !restrict_to.count(n.id)) continue;
    succ[n.id];
    for (const auto& in : n.inputs) {
      auto it = prod.find(in);
      if (it == prod.end()) continue;
      if (!restrict_to.empty() && !restrict_to.count(it->second)) continue;
      succ[it->second].push_back(n.id);
      if (it->second == n.id) self_loop[n.id] = true;
    }
  }

  std::map<int, int> index, low;
  std::map<int, bool> on_stack;
  std::vector<int> stack;
  std::vector<std::vector<int>> result;
  int counter = 0;

  std::function<void(int)> strong = [&](int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (int w : succ[v]) {
      if (!index.count(w)) {
        strong(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<int> comp;
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp.push_back(w);
      } while (w != v);
      if (comp.size() > 1 || self_loop[v]) {
        std::sort(comp.begin(), comp.end());
        result.push_back(std::move(comp));
      }
    }
  };
  for (const auto& [v, _] : succ)
    if (!index.count(v)) strong(v);
  std::sort(result.begin(), result.end());
  return result;
}

bool arity_ok(const Node& n, std::string& why) {
  auto need = [&](std::size_t ins, std::size_t outs) {
    if (n.inputs.size() != ins || n.outputs.size() != outs) {
      why = std::string(to_string(n.kind)) + " needs " + std::to_string(ins) + " input(s) and " +
            std::to_string(outs) + " output(s)";
      return false;
    }
    return true;
  };
  switch (n.kind) {
    case NodeKind::Linear:
    case NodeKind::LinearReLU:
      if (!need(1, 1)) return false;
      if (!n.weight) {
        why = "linear node without weight";
        return false;
      }
      break;
    case NodeKind::Add:
      if (!need(2, 1)) return false;
      break;
    case NodeKind::ReLU:
    case NodeKind::Softmax:
      if (!need(1, 1)) return false;
      break;
    case NodeKind::Quantize:
    case NodeKind::Dequantize:
      if (!need(1, 1)) return false;
      if (!n.scale) {
        why = "quantize/dequantize node without scale";
        return false;
      }
      break;
  }
  if (n.relu_fused != (n.kind == NodeKind::LinearReLU)) {
    why = "relu_fused must be set exactly for LinearReLU";
    return false;
  }
  if (!n.is_linear_family() && (n.weight || n.bias)) {
    why = "only linear nodes carry weight/bias";
    return false;
  }
  return true;
}

}  // namespace

std::vector<Diagnostic> validate(const ApplicationGraph& g) {
  std::vector<Diagnostic> out;

  for (const auto& [name, t] : g.tensors) {
    bool bad_shape = t.shape.empty() ||
                     std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d < 1; });
    if (bad_shape) out.push_back({"bad-shape", "tensor '" + name + "' has an empty or non-positive shape", {}});
    bool quant = t.dtype != DType::Float32;
    if (quant != t.scale_exp.has_value())
      out.push_back({"scale-exp", "tensor '" + name + "': scale_exp must be present iff dtype is int8/int32", {}});
  }
  for (const auto& [name, payload] : g.constants) {
    auto it = g.tensors.find(name);
    if (it == g.tensors.end()) {
      out.push_back({"missing-tensor", "constant payload '" + name + "' has no tensor entry", {}});
    } else if (!it->second.shape.empty() &&
               static_cast<std::int64_t>(payload.size()) != it->second.byte_size()) {
      out.push_back({"constant-size", "constant '" + name + "' payload is " + std::to_string(payload.size()) +
                                          " bytes, expected " + std::to_string(it->second.byte_size()),
                     {}});
    }
  }

  std::set<int> seen_ids;
  std::map<std::string, std::vector<int>> missing;
  std::map<std::string, std::vector<int>> writers;
  for (const auto& n : g.nodes) {
    if (!seen_ids.insert(n.id).second)
      out.push_back({"duplicate-id", "node id " + std::to_string(n.id) + " used twice", {n.id}});
    std::string why;
    if (!arity_ok(n, why)) out.push_back({"arity", "node " + std::to_string(n.id) + ": " + why, {n.id}});

    auto check = [&](const std::string& t) {
      if (!g.tensors.count(t)) missing[t].push_back(n.id);
    };
    for (const auto& t : n.inputs) check(t);
    for (const auto& t : n.outputs) {
      check(t);
      writers[t].push_back(n.id);
    }
    if (n.weight) check(*n.weight);
    if (n.bias) check(*n.bias);
  }
  for (const auto& [t, ids] : missing)
    out.push_back({"missing-tensor", "reference to missing tensor '" + t + "' (nodes " + join_ids(ids) + ")", ids});

  for (const auto& [t, ids] : writers) {
    if (ids.size() > 1)
      out.push_back({"multi-producer", "tensor '" + t + "' written by nodes " + join_ids(ids), ids});
    if (g.is_constant(t))
      out.push_back({"dataflow", "node writes constant tensor '" + t + "'", ids});
    if (std::find(g.graph_inputs.begin(), g.graph_inputs.end(), t) != g.graph_inputs.end())
      out.push_back({"dataflow", "node writes graph input '" + t + "'", ids});
  }

  std::set<std::string> available(g.graph_inputs.begin(), g.graph_inputs.end());
  for (const auto& [t, _] : writers) available.insert(t);
  for (const auto& n : g.nodes) {
    for (const auto& t : n.inputs)
      if (g.tensors.count(t) && !available.count(t) && !g.is_constant(t))
        out.push_back({"dataflow", "node " + std::to_string(n.id) + " reads '" + t + "' which nothing produces", {n.id}});
    for (const auto& opt : {n.weight, n.bias})
      if (opt && g.tensors.count(*opt) && !g.is_constant(*opt))
        out.push_back({"dataflow", "node " + std::to_string(n.id) + " parameter '" + *opt + "' has no payload", {n.id}});
  }
  for (const auto& t : g.graph_inputs)
    if (!g.tensors.count(t)) out.push_back({"missing-tensor", "graph input '" + t + "' is not declared", {}});
  for (const auto& t : g.graph_outputs) {
    if (!g.tensors.count(t)) {
      out.push_back({"missing-tensor", "graph output '" + t + "' is not declared", {}});
    } else if (!available.count(t)) {
      out.push_back({"dataflow", "graph output '" + t + "' is never produced", {}});
    }
  }

  for (auto& comp : cyclic_components(g))
    out.push_back({"cycle", "cycle through nodes " + join_ids(comp), comp});
  return out;
}

std::vector<Node> topo_sort(const ApplicationGraph& g) {
  auto prod = g.producers();
  std::map<int, int> indegree;
  std::map<int, std::vector<int>> succ;
  std::map<int, const Node*> by_id;
  for (const auto& n : g.nodes) {
    by_id[n.id] = &n;
    indegree[n.id];
  }
  for (const auto& n : g.nodes) {
    std::set<int> deps;
    for (const auto& in : n.inputs) {
      auto it = prod.find(in);
      if (it != prod.end()) deps.insert(it->second);
    }
    for (int d : deps) {
      succ[d].push_back(n.id);
      ++indegree[n.id];
    }
  }

  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree)
    if (deg == 0) ready.push(id);

  std::vector<Node> order;
  order.reserve(g.nodes.size());
  while (!ready.empty()) {
    int id = ready.top();
    ready.pop();
    order.push_back(*by_id[id]);
    for (int s : succ[id])
      if (--indegree[s] == 0) ready.push(s);
  }

  if (order.size() != g.nodes.size()) {
    std::set<int> remaining;
    for (const auto& [id, deg] : indegree)
      if (deg > 0) remaining.insert(id);
    std::string msg = "cycle detected among nodes";
    auto comps = cyclic_components(g, remaining);
    for (const auto& c : comps) msg += " {" + join_ids(c) + "}";
    throw Error(msg);
  }
  return order;
}

ApplicationGraph fuse_linear_relu(const ApplicationGraph& g) {
  ApplicationGraph out = g;
  out.nodes.clear();
  auto cons = g.consumers();
  std::set<int> absorbed;
  std::map<int, Node> fused;

  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::Linear || n.outputs.size() != 1) continue;
    const std::string& t = n.outputs.front();
    bool is_output = std::find(g.graph_outputs.begin(), g.graph_outputs.end(), t) != g.graph_outputs.end();
    auto it = cons.find(t);
    if (is_output || it == cons.end() || it->second.size() != 1) continue;
    const Node* relu = g.find_node(it->second.front());
    if (!relu || relu->kind != NodeKind::ReLU || absorbed.count(relu->id)) continue;

    Node f = n;
    f.kind = NodeKind::LinearReLU;
    f.relu_fused = true;
    f.outputs = relu->outputs;
    f.out_exp = relu->out_exp;
    f.name = n.name.empty() ? std::string() : n.name + "+ReLU";
    fused[n.id] = std::move(f);
    absorbed.insert(relu->id);
    out.tensors.erase(t);
  }

  for (const auto& n : g.nodes) {
    if (absorbed.count(n.id)) continue;
    auto it = fused.find(n.id);
    out.nodes.push_back(it != fused.end() ? it->second : n);
  }
  return out;
}

std::optional<int> exact_pow2_exponent(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
  int e = 0;
  double m = std::frexp(scale, &e);
  if (m != 0.5) return std::nullopt;
  int exp = e - 1;
  if (exp < -31 || exp > 31) return std::nullopt;
  return exp;
}

namespace {

void replace_uses(ApplicationGraph& g, const std::string& from, const std::string& to) {
  for (auto& n : g.nodes)
    for (auto& in : n.inputs)
      if (in == from) in = to;
  for (auto& o : g.graph_outputs)
    if (o == from) o = to;
}

int qdq_exponent(const Node& n) {
  auto e = n.scale ? exact_pow2_exponent(*n.scale) : std::nullopt;
  if (!e)
    throw Error(std::string(to_string(n.kind)) + " node " + std::to_string(n.id) +
                " has a scale that is not a power of two");
  return *e;
}

void erase_node(ApplicationGraph& g, int id) {
  g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(), [id](const Node& n) { return n.id == id; }),
                g.nodes.end());
}

Node* mutable_node(ApplicationGraph& g, int id) {
  for (auto& n : g.nodes)
    if (n.id == id) return &n;
  return nullptr;
}

void check_tensor_exp(const ApplicationGraph& g, const std::string& t, int e, int node_id) {
  auto it = g.tensors.find(t);
  if (it != g.tensors.end() && it->second.scale_exp && *it->second.scale_exp != e)
    throw Error("node " + std::to_string(node_id) + ": exponent " + std::to_string(e) +
                " disagrees with tensor '" + t + "' exponent " + std::to_string(*it->second.scale_exp));
}

}  // namespace

ApplicationGraph strip_qdq(const ApplicationGraph& g) {
  ApplicationGraph out = g;

  // Quantize nodes first: each either cancels a Dequantize feeding it or is
  // absorbed as the output exponent of its producer.
  for (;;) {
    auto it = std::find_if(out.nodes.begin(), out.nodes.end(),
                           [](const Node& n) { return n.kind == NodeKind::Quantize; });
    if (it == out.nodes.end()) break;
    Node q = *it;
    int eq = qdq_exponent(q);
    const std::string f = q.inputs.front();
    const std::string qt = q.outputs.front();
    check_tensor_exp(out, qt, eq, q.id);

    auto cons = out.consumers();
    bool f_is_output = std::find(out.graph_outputs.begin(), out.graph_outputs.end(), f) != out.graph_outputs.end();
    if (cons[f].size() != 1 || f_is_output)
      throw Error("Quantize node " + std::to_string(q.id) + " input '" + f + "' has other consumers");

    auto prod = out.producers();
    auto pit = prod.find(f);
    if (pit == prod.end()) {
      for (auto& in : out.graph_inputs)
        if (in == f) in = qt;
    } else {
      Node* p = mutable_node(out, pit->second);
      if (p->kind == NodeKind::Dequantize) {
        int ed = qdq_exponent(*p);
        if (ed != eq)
          throw Error("Dequantize " + std::to_string(p->id) + " -> Quantize " + std::to_string(q.id) +
                      " exponents differ (" + std::to_string(ed) + " vs " + std::to_string(eq) + ")");
        const std::string src = p->inputs.front();
        int pid = p->id;
        erase_node(out, pid);
        out.tensors.erase(qt);
        replace_uses(out, qt, src);
      } else {
        for (auto& o : p->outputs)
          if (o == f) o = qt;
        p->out_exp = eq;
      }
    }
    erase_node(out, q.id);
    out.tensors.erase(f);
  }

  for (;;) {
    auto it = std::find_if(out.nodes.begin(), out.nodes.end(),
                           [](const Node& n) { return n.kind == NodeKind::Dequantize; });
    if (it == out.nodes.end()) break;
    Node d = *it;
    int ed = qdq_exponent(d);
    const std::string src = d.inputs.front();
    const std::string f = d.outputs.front();
    check_tensor_exp(out, src, ed, d.id);
    for (auto& n : out.nodes) {
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        if (n.inputs[i] != f) continue;
        n.inputs[i] = src;
        if (n.in_exps.size() < n.inputs.size()) n.in_exps.resize(n.inputs.size(), 0);
        n.in_exps[i] = ed;
      }
    }
    for (auto& o : out.graph_outputs)
      if (o == f) o = src;
    erase_node(out, d.id);
    out.tensors.erase(f);
  }
  return out;
}

}  // namespace neuroflow
