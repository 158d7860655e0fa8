// SPDX-License-Identifier: Apache-2.0
#pragma once

// Application-graph IR: a DAG of layer nodes over named tensors, plus the
// lowering passes that turn an imported model into a linear execution chain.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuroflow/bytes.hpp"

namespace neuroflow {

enum class DType { Float32, Int8, Int32 };

std::size_t dtype_size(DType t);
std::string_view to_string(DType t);
DType dtype_from_string(std::string_view s);

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  DType dtype = DType::Float32;
  /// Power-of-two exponent of the quantization scale (int8/int32 only).
  std::optional<int> scale_exp;

  std::int64_t numel() const;
  std::int64_t byte_size() const { return numel() * static_cast<std::int64_t>(dtype_size(dtype)); }

  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

enum class NodeKind { Linear, ReLU, Add, Softmax, Quantize, Dequantize, LinearReLU };

std::string_view to_string(NodeKind k);
NodeKind node_kind_from_string(std::string_view s);

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::Linear;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::optional<std::string> weight;
  std::optional<std::string> bias;
  std::vector<int> in_exps;
  int out_exp = 0;
  bool relu_fused = false;
  /// Scale of a Quantize/Dequantize node; must be an exact power of two.
  std::optional<double> scale;

  bool is_linear_family() const {
    return kind == NodeKind::Linear || kind == NodeKind::LinearReLU;
  }

  friend bool operator==(const Node&, const Node&) = default;
};

struct ApplicationGraph {
  std::vector<Node> nodes;
  std::map<std::string, TensorSpec> tensors;
  std::map<std::string, Bytes> constants;
  std::vector<std::string> graph_inputs;
  std::vector<std::string> graph_outputs;

  const TensorSpec& tensor(const std::string& name) const;
  const Node* find_node(int id) const;
  bool is_constant(const std::string& name) const { return constants.count(name) != 0; }

  /// Decoded views of constant payloads; throw when the dtype does not match.
  std::vector<float> constant_f32(const std::string& name) const;
  std::vector<std::int8_t> constant_i8(const std::string& name) const;
  std::vector<std::int32_t> constant_i32(const std::string& name) const;

  void set_constant(const std::string& name, std::span<const float> values);
  void set_constant(const std::string& name, std::span<const std::int8_t> values);
  void set_constant(const std::string& name, std::span<const std::int32_t> values);

  /// Node ids that read each tensor (activation edges and graph outputs excluded).
  std::map<std::string, std::vector<int>> consumers() const;
  /// Node id that writes each tensor.
  std::map<std::string, int> producers() const;

  /// True when no float32 activation remains and every node carries exponents.
  bool is_quantized() const;

  friend bool operator==(const ApplicationGraph&, const ApplicationGraph&) = default;
};

struct Diagnostic {
  std::string code;     // "missing-tensor", "cycle", "arity", ...
  std::string message;
  std::vector<int> nodes;
};

/// Checks every structural invariant; never throws.
std::vector<Diagnostic> validate(const ApplicationGraph& graph);

/// Kahn's algorithm with ascending-id tie-breaking.
std::vector<Node> topo_sort(const ApplicationGraph& graph);

/// Replaces each Linear whose sole consumer is a ReLU by one LinearReLU node.
ApplicationGraph fuse_linear_relu(const ApplicationGraph& graph);

/// Removes Quantize/Dequantize nodes, moving their exponents into the
/// neighbouring compute nodes.
ApplicationGraph strip_qdq(const ApplicationGraph& graph);

/// Exponent e with scale == 2^e exactly; nullopt for anything else.
std::optional<int> exact_pow2_exponent(double scale);

}  // namespace neuroflow
