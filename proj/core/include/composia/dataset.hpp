// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "composia/microworld.hpp"

namespace composia::dataset {

/// Scene directory payload: clip.bin (little-endian f32, C-order) with
/// clip.meta.json shape header, annotations.json, scene.json.
void save_scene(const std::filesystem::path& scene_dir, const microworld::SceneSpec& spec,
                const microworld::RenderedClip& clip);

struct LoadedScene {
    microworld::SceneSpec spec;
    microworld::RenderedClip clip;
};

LoadedScene load_scene(const std::filesystem::path& scene_dir);

/// Load only the pixel clip (clip.bin + clip.meta.json).
nn::Tensor load_clip_tensor(const std::filesystem::path& scene_dir);

/// Write a generated clip (clip.bin + clip.meta.json) without annotations.
void save_clip_tensor(const std::filesystem::path& dir, const nn::Tensor& frames, double hz);

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<std::string> train;  // scene ids, e.g. "scene_00012"
    std::vector<std::string> val;

    std::filesystem::path scene_dir(const std::string& split, const std::string& id) const {
        return root / split / id;
    }
};

void save_index(const DatasetIndex& index);
DatasetIndex load_index(const std::filesystem::path& root);

std::string scene_id(int i);

}  // namespace composia::dataset
