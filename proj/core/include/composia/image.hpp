// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "composia/tensor.hpp"

namespace composia::img {

struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    ImageU8() = default;
    ImageU8(int w, int h, std::array<uint8_t, 3> fill = {255, 255, 255});
    void set(int x, int y, std::array<uint8_t, 3> c);
    std::array<uint8_t, 3> get(int x, int y) const;
};

/// Convert one H x W x 3 tensor frame (values in [0,1]) to 8-bit RGB.
ImageU8 frame_to_u8(const nn::Tensor& frame);

/// Self-contained PNG writer (RGB8, stored-deflate blocks; no zlib dependency).
void write_png(const std::filesystem::path& path, const ImageU8& img);

/// Reader for the subset this project writes (RGB8, filter 0, stored-deflate).
ImageU8 read_png(const std::filesystem::path& path);

/// H x W x 3 double tensor in [0,1] from an 8-bit image.
nn::Tensor u8_to_frame(const ImageU8& img);

/// 5x7 bitmap text, top-left anchored.
void draw_text(ImageU8& img, int x, int y, const std::string& text, std::array<uint8_t, 3> color,
               int scale = 1);
void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, std::array<uint8_t, 3> color);
void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1, std::array<uint8_t, 3> color);

struct Series {
    std::string label;
    std::vector<double> values;
};

/// Simple line chart over implicit x = 0..n-1 (or provided x values).
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<Series>& series, const std::vector<double>& x = {});

/// Bar chart with one bar per (label, value).
void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace composia::img
