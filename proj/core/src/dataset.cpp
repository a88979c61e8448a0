// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/dataset.hpp"

#include <cstdio>

#include "composia/serialize.hpp"

namespace composia::dataset {

namespace fs = std::filesystem;
using io::json;

namespace {

json annotations_json(const microworld::RenderedClip& clip) {
    // reuse the scene-spec serializers via a spec-shaped shell
    microworld::SceneSpec shell;
    shell.camera = clip.camera;
    shell.agents = clip.tracks;
    shell.fiducials = clip.fiducials;
    const json full = json::parse(shell.to_json_string());
    json j;
    j["camera"] = full.at("camera");
    j["tracks"] = full.at("agents");
    j["fiducials"] = full.at("fiducials");
    return j;
}

}  // namespace

void save_scene(const fs::path& scene_dir, const microworld::SceneSpec& spec,
                const microworld::RenderedClip& clip) {
    fs::create_directories(scene_dir);
    io::write_text_file(scene_dir / "scene.json", spec.to_json_string());
    save_clip_tensor(scene_dir, clip.frames, spec.hz);
    io::write_json_file(scene_dir / "annotations.json", annotations_json(clip));
}

void save_clip_tensor(const fs::path& dir, const nn::Tensor& frames, double hz) {
    COMPOSIA_CHECK(frames.rank() == 4 && frames.dim(3) == 3, << "clip tensor must be FxHxWx3");
    fs::create_directories(dir);
    io::write_f32_blob(dir / "clip.bin", frames);
    json meta;
    meta["dtype"] = "f32";
    meta["order"] = "C";
    meta["shape"] = frames.shape();
    meta["layout"] = "FHWC";
    meta["hz"] = hz;
    io::write_json_file(dir / "clip.meta.json", meta);
}

nn::Tensor load_clip_tensor(const fs::path& scene_dir) {
    const json meta = io::read_json_file(scene_dir / "clip.meta.json");
    const nn::Shape shape = meta.at("shape").get<nn::Shape>();
    return io::read_f32_blob(scene_dir / "clip.bin", shape);
}

LoadedScene load_scene(const fs::path& scene_dir) {
    LoadedScene out;
    out.spec = microworld::SceneSpec::from_json_string(io::read_text_file(scene_dir / "scene.json"));
    out.clip.frames = load_clip_tensor(scene_dir);
    const json ann = io::read_json_file(scene_dir / "annotations.json");
    json shell;
    const json spec_json = json::parse(out.spec.to_json_string());
    shell = spec_json;
    shell["camera"] = ann.at("camera");
    shell["agents"] = ann.at("tracks");
    shell["fiducials"] = ann.at("fiducials");
    const auto parsed = microworld::SceneSpec::from_json_string(shell.dump());
    out.clip.camera = parsed.camera;
    out.clip.tracks = parsed.agents;
    out.clip.fiducials = parsed.fiducials;
    return out;
}

void save_index(const DatasetIndex& index) {
    json j;
    j["train"] = index.train;
    j["val"] = index.val;
    io::write_json_file(index.root / "index.json", j);
}

DatasetIndex load_index(const fs::path& root) {
    DatasetIndex idx;
    idx.root = root;
    const json j = io::read_json_file(root / "index.json");
    idx.train = j.at("train").get<std::vector<std::string>>();
    idx.val = j.at("val").get<std::vector<std::string>>();
    return idx;
}

std::string scene_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", i);
    return buf;
}

}  // namespace composia::dataset
