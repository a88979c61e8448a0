// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/serialize.hpp"

#include <cstring>
#include <fstream>

namespace composia::io {

namespace fs = std::filesystem;

namespace {

void write_bytes(std::ofstream& os, const void* data, size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

size_t dtype_size(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    COMPOSIA_THROW("unsupported dtype " << dtype);
}

}  // namespace

void save_checkpoint(const fs::path& dir, const std::vector<NamedTensor>& tensors, const json& metadata) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["metadata"] = metadata;
    json list = json::array();
    uint64_t offset = 0;
    for (const NamedTensor& nt : tensors) {
        COMPOSIA_CHECK(nt.tensor != nullptr);
        json e;
        e["name"] = nt.name;
        e["dtype"] = nt.dtype;
        e["shape"] = nt.tensor->shape();
        e["offset"] = offset;
        offset += static_cast<uint64_t>(nt.tensor->numel()) * dtype_size(nt.dtype);
        list.push_back(e);
    }
    manifest["tensors"] = list;
    write_json_file(dir / "manifest.json", manifest);

    std::ofstream os(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    COMPOSIA_CHECK(os.good(), << "cannot open " << (dir / "weights.bin"));
    for (const NamedTensor& nt : tensors) {
        if (nt.dtype == "f64") {
            write_bytes(os, nt.tensor->data(), sizeof(double) * static_cast<size_t>(nt.tensor->numel()));
        } else {
            std::vector<float> buf(static_cast<size_t>(nt.tensor->numel()));
            for (int64_t i = 0; i < nt.tensor->numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>((*nt.tensor)[i]);
            write_bytes(os, buf.data(), sizeof(float) * buf.size());
        }
    }
    COMPOSIA_CHECK(os.good(), << "write failed for " << (dir / "weights.bin"));
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
    LoadedCheckpoint out;
    const json manifest = read_json_file(dir / "manifest.json");
    out.metadata = manifest.value("metadata", json::object());
    std::ifstream is(dir / "weights.bin", std::ios::binary);
    COMPOSIA_CHECK(is.good(), << "cannot open " << (dir / "weights.bin"));
    for (const auto& e : manifest.at("tensors")) {
        const std::string name = e.at("name");
        const std::string dtype = e.at("dtype");
        nn::Shape shape = e.at("shape").get<nn::Shape>();
        const uint64_t offset = e.at("offset");
        nn::Tensor t(shape);
        is.seekg(static_cast<std::streamoff>(offset));
        if (dtype == "f64") {
            is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        } else if (dtype == "f32") {
            std::vector<float> buf(static_cast<size_t>(t.numel()));
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(float) * buf.size()));
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
        } else {
            COMPOSIA_THROW("unsupported dtype " << dtype << " in " << (dir / "manifest.json"));
        }
        COMPOSIA_CHECK(is.good(), << "short read for tensor " << name);
        out.tensors.emplace(name, std::move(t));
    }
    return out;
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    COMPOSIA_CHECK(os.good(), << "cannot open " << path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    COMPOSIA_CHECK(os.good(), << "write failed for " << path);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    COMPOSIA_CHECK(is.good(), << "cannot open " << path);
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) { return json::parse(read_text_file(path)); }

void write_f32_blob(const fs::path& path, const nn::Tensor& t) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    COMPOSIA_CHECK(os.good(), << "cannot open " << path);
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
    write_bytes(os, buf.data(), sizeof(float) * buf.size());
    COMPOSIA_CHECK(os.good(), << "write failed for " << path);
}

nn::Tensor read_f32_blob(const fs::path& path, const nn::Shape& shape) {
    nn::Tensor t(shape);
    std::ifstream is(path, std::ios::binary);
    COMPOSIA_CHECK(is.good(), << "cannot open " << path);
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(float) * buf.size()));
    COMPOSIA_CHECK(is.good(), << "short read from " << path);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
    return t;
}

uint64_t bytes_hash(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t file_hash(const fs::path& path) {
    const std::string s = read_text_file(path);
    return bytes_hash(s.data(), s.size());
}

}  // namespace composia::io
