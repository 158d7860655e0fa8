// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model manifest: a JSON document describing tensors and nodes, plus a
// sibling blob of little-endian tensor payloads. The same container carries
// calibration and validation samples.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neuroflow/graph_ir.hpp"

namespace neuroflow {

inline constexpr int kManifestVersion = 1;

ApplicationGraph load_model(const std::filesystem::path& manifest);

/// Writes `manifest` and a blob named after it (`<stem>.bin`) in the same directory.
void save_model(const ApplicationGraph& graph, const std::filesystem::path& manifest);

struct SampleSet {
  std::vector<std::int64_t> sample_shape;
  std::vector<std::vector<float>> samples;
  std::vector<std::int32_t> labels;  // empty when the file carries none

  std::size_t size() const { return samples.size(); }
};

/// Samples live in a tensor named "samples" of shape [K, ...]; an optional
/// int32 tensor "labels" of shape [K] may accompany them.
SampleSet load_samples(const std::filesystem::path& manifest);
void save_samples(const SampleSet& set, const std::filesystem::path& manifest);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace neuroflow
