// SPDX-License-Identifier: Apache-2.0
#include "neuroflow/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "neuroflow/error.hpp"

namespace neuroflow {

namespace fs = std::filesystem;
using nlohmann::json;

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

void write_text(const fs::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void check_format(const json& doc, const char* expected, const fs::path& path) {
  if (doc.value("format", std::string()) != expected)
    throw ParseError(path.string() + ": expected format '" + expected + "'");
  if (doc.value("version", 0) != kManifestVersion)
    throw ParseError(path.string() + ": unsupported version");
}

struct BlobTensor {
  TensorSpec spec;
  std::optional<Bytes> payload;
};

std::vector<BlobTensor> read_tensors(const json& doc, const fs::path& manifest) {
  Bytes blob;
  if (doc.contains("blob")) {
    fs::path blob_path = manifest.parent_path() / doc.at("blob").get<std::string>();
    blob = read_file(blob_path);
  }
  std::vector<BlobTensor> out;
  for (const auto& t : doc.at("tensors")) {
    BlobTensor bt;
    bt.spec.name = t.at("name").get<std::string>();
    bt.spec.shape = t.at("shape").get<std::vector<std::int64_t>>();
    bt.spec.dtype = dtype_from_string(t.at("dtype").get<std::string>());
    if (t.contains("scale_exp") && !t["scale_exp"].is_null()) bt.spec.scale_exp = t["scale_exp"].get<int>();
    if (t.contains("offset")) {
      auto off = t.at("offset").get<std::uint64_t>();
      auto len = t.at("length").get<std::uint64_t>();
      if (off + len > blob.size())
        throw ParseError("tensor '" + bt.spec.name + "' extends past the end of the blob", off);
      bt.payload = Bytes(blob.begin() + static_cast<std::ptrdiff_t>(off),
                         blob.begin() + static_cast<std::ptrdiff_t>(off + len));
    }
    out.push_back(std::move(bt));
  }
  return out;
}

json tensor_entry(const TensorSpec& spec) {
  json t{{"name", spec.name}, {"shape", spec.shape}, {"dtype", std::string(to_string(spec.dtype))}};
  if (spec.scale_exp) t["scale_exp"] = *spec.scale_exp;
  return t;
}

fs::path blob_path_for(const fs::path& manifest) {
  fs::path p = manifest;
  std::string name = p.filename().string();
  auto dot = name.rfind(".json");
  std::string stem = dot == std::string::npos ? name : name.substr(0, dot);
  return manifest.parent_path() / (stem + ".bin");
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

}  // namespace

ApplicationGraph load_model(const fs::path& manifest) {
  json doc = read_json(manifest);
  check_format(doc, "neuroflow-model", manifest);
  ApplicationGraph g;
  try {
    for (auto& bt : read_tensors(doc, manifest)) {
      if (bt.payload) g.constants[bt.spec.name] = std::move(*bt.payload);
      g.tensors[bt.spec.name] = std::move(bt.spec);
    }
    int next_id = 0;
    for (const auto& jn : doc.at("nodes")) {
      Node n;
      n.id = next_id++;
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.name = jn.value("name", std::string(to_string(n.kind)) + std::to_string(n.id));
      n.inputs = jn.at("inputs").get<std::vector<std::string>>();
      n.outputs = jn.at("outputs").get<std::vector<std::string>>();
      const json attrs = jn.value("attributes", json::object());
      if (attrs.contains("weight")) n.weight = attrs["weight"].get<std::string>();
      if (attrs.contains("bias")) n.bias = attrs["bias"].get<std::string>();
      if (attrs.contains("in_exps")) n.in_exps = attrs["in_exps"].get<std::vector<int>>();
      if (attrs.contains("out_exp")) n.out_exp = attrs["out_exp"].get<int>();
      if (attrs.contains("scale")) n.scale = attrs["scale"].get<double>();
      n.relu_fused = n.kind == NodeKind::LinearReLU;
      g.nodes.push_back(std::move(n));
    }
    g.graph_inputs = doc.at("inputs").get<std::vector<std::string>>();
    g.graph_outputs = doc.at("outputs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  return g;
}

void save_model(const ApplicationGraph& g, const fs::path& manifest) {
  fs::path blob_path = blob_path_for(manifest);
  Bytes blob;
  json tensors = json::array();
  for (const auto& [name, spec] : g.tensors) {
    json t = tensor_entry(spec);
    auto it = g.constants.find(name);
    if (it != g.constants.end()) {
      t["offset"] = blob.size();
      t["length"] = it->second.size();
      blob.insert(blob.end(), it->second.begin(), it->second.end());
      blob.resize(align_up(blob.size(), 16), 0);
    }
    tensors.push_back(std::move(t));
  }
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    json attrs = json::object();
    if (n.weight) attrs["weight"] = *n.weight;
    if (n.bias) attrs["bias"] = *n.bias;
    if (!n.in_exps.empty()) attrs["in_exps"] = n.in_exps;
    if (!n.in_exps.empty() || n.out_exp != 0) attrs["out_exp"] = n.out_exp;
    if (n.scale) attrs["scale"] = *n.scale;
    nodes.push_back({{"kind", std::string(to_string(n.kind))},
                     {"name", n.name},
                     {"inputs", n.inputs},
                     {"outputs", n.outputs},
                     {"attributes", attrs}});
  }
  json doc{{"format", "neuroflow-model"},
           {"version", kManifestVersion},
           {"blob", blob_path.filename().string()},
           {"inputs", g.graph_inputs},
           {"outputs", g.graph_outputs},
           {"tensors", tensors},
           {"nodes", nodes}};
  write_file(blob_path, blob);
  write_json(manifest, doc);
}

SampleSet load_samples(const fs::path& manifest) {
  json doc = read_json(manifest);
  check_format(doc, "neuroflow-samples", manifest);
  SampleSet set;
  try {
    for (auto& bt : read_tensors(doc, manifest)) {
      if (!bt.payload) continue;
      if (static_cast<std::int64_t>(bt.payload->size()) != bt.spec.byte_size())
        throw ParseError("tensor '" + bt.spec.name + "' payload length mismatch");
      if (bt.spec.name == "samples") {
        if (bt.spec.dtype != DType::Float32 || bt.spec.shape.size() < 2)
          throw ParseError("'samples' must be float32 with shape [K, ...]");
        set.sample_shape.assign(bt.spec.shape.begin() + 1, bt.spec.shape.end());
        std::int64_t per = 1;
        for (auto d : set.sample_shape) per *= d;
        for (std::int64_t k = 0; k < bt.spec.shape[0]; ++k) {
          std::vector<float> s(static_cast<std::size_t>(per));
          for (std::int64_t i = 0; i < per; ++i)
            s[static_cast<std::size_t>(i)] = load_f32(*bt.payload, static_cast<std::size_t>((k * per + i) * 4));
          set.samples.push_back(std::move(s));
        }
      } else if (bt.spec.name == "labels") {
        if (bt.spec.dtype != DType::Int32) throw ParseError("'labels' must be int32");
        for (std::size_t i = 0; i < bt.payload->size() / 4; ++i) set.labels.push_back(load_i32(*bt.payload, i * 4));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  if (set.samples.empty()) throw ParseError(manifest.string() + ": no 'samples' tensor");
  if (!set.labels.empty() && set.labels.size() != set.samples.size())
    throw ParseError(manifest.string() + ": label count does not match sample count");
  return set;
}

void save_samples(const SampleSet& set, const fs::path& manifest) {
  if (set.samples.empty()) throw Error("refusing to write an empty sample set");
  fs::path blob_path = blob_path_for(manifest);
  Bytes blob;
  std::vector<std::int64_t> shape{static_cast<std::int64_t>(set.samples.size())};
  shape.insert(shape.end(), set.sample_shape.begin(), set.sample_shape.end());
  for (const auto& s : set.samples) {
    std::size_t at = blob.size();
    blob.resize(at + s.size() * 4);
    for (std::size_t i = 0; i < s.size(); ++i) store_f32(blob, at + i * 4, s[i]);
  }
  json tensors = json::array();
  tensors.push_back({{"name", "samples"}, {"shape", shape}, {"dtype", "float32"}, {"offset", 0}, {"length", blob.size()}});
  if (!set.labels.empty()) {
    std::size_t at = blob.size();
    blob.resize(at + set.labels.size() * 4);
    for (std::size_t i = 0; i < set.labels.size(); ++i) store_i32(blob, at + i * 4, set.labels[i]);
    tensors.push_back({{"name", "labels"},
                       {"shape", {static_cast<std::int64_t>(set.labels.size())}},
                       {"dtype", "int32"},
                       {"offset", at},
                       {"length", set.labels.size() * 4}});
  }
  json doc{{"format", "neuroflow-samples"},
           {"version", kManifestVersion},
           {"blob", blob_path.filename().string()},
           {"tensors", tensors}};
  write_file(blob_path, blob);
  write_json(manifest, doc);
}

}  // namespace neuroflow
