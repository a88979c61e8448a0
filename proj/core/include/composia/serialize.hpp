// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "composia/tensor.hpp"

namespace composia::io {

using json = nlohmann::ordered_json;

/// One tensor staged for a checkpoint. dtype is "f64" (exact training state)
/// or "f32" (interchange payloads).
struct NamedTensor {
    std::string name;
    std::string dtype = "f64";
    const nn::Tensor* tensor = nullptr;
};

/// Write manifest.json (tensor names, dtypes, shapes, byte offsets, plus a
/// caller metadata object) and weights.bin (little-endian, concatenated in
/// manifest order) into dir.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors,
                     const json& metadata);

struct LoadedCheckpoint {
    std::map<std::string, nn::Tensor> tensors;
    json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// ---- small file helpers --------------------------------------------------------

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);
json read_json_file(const std::filesystem::path& path);

/// Raw little-endian f32 blob (clip payload format).
void write_f32_blob(const std::filesystem::path& path, const nn::Tensor& t);
nn::Tensor read_f32_blob(const std::filesystem::path& path, const nn::Shape& shape);

/// FNV-1a over a file's bytes; used by tests asserting byte-identical outputs.
uint64_t file_hash(const std::filesystem::path& path);
uint64_t bytes_hash(const void* data, size_t n, uint64_t seed = 1469598103934665603ULL);

}  // namespace composia::io
