// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace composia::img {

ImageU8::ImageU8(int w, int h, std::array<uint8_t, 3> fill) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3) {
    for (int i = 0; i < w * h; ++i) {
        rgb[static_cast<size_t>(i) * 3 + 0] = fill[0];
        rgb[static_cast<size_t>(i) * 3 + 1] = fill[1];
        rgb[static_cast<size_t>(i) * 3 + 2] = fill[2];
    }
}

void ImageU8::set(int x, int y, std::array<uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const size_t o = (static_cast<size_t>(y) * width + x) * 3;
    rgb[o] = c[0];
    rgb[o + 1] = c[1];
    rgb[o + 2] = c[2];
}

std::array<uint8_t, 3> ImageU8::get(int x, int y) const {
    const size_t o = (static_cast<size_t>(y) * width + x) * 3;
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
}

ImageU8 frame_to_u8(const nn::Tensor& frame) {
    COMPOSIA_CHECK(frame.rank() == 3 && frame.dim(2) == 3, << "expected HxWx3 frame");
    const int h = static_cast<int>(frame.dim(0));
    const int w = static_cast<int>(frame.dim(1));
    ImageU8 img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(frame.at({y, x, c}), 0.0, 1.0);
                img.rgb[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)] =
                    static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

// ---- PNG ------------------------------------------------------------------------

namespace {

uint32_t crc32_table_entry(uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xedb88320u ^ (n >> 1) : n >> 1;
    return n;
}

uint32_t crc32_bytes(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
        init = true;
    }
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> payload;
    payload.insert(payload.end(), type, type + 4);
    payload.insert(payload.end(), data.begin(), data.end());
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32(out, crc32_bytes(payload.data(), payload.size()) ^ 0xffffffffu);
}

// zlib stream made of stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t pos = 0;
    while (pos < raw.size() || raw.empty()) {
        const size_t len = std::min<size_t>(65535, raw.size() - pos);
        const bool final = pos + len >= raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<uint8_t>(len & 0xff));
        z.push_back(static_cast<uint8_t>(len >> 8));
        z.push_back(static_cast<uint8_t>(~len & 0xff));
        z.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos), raw.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        if (raw.empty()) break;
    }
    uint32_t a = 1, b = 0;
    for (uint8_t byte : raw) {
        a = (a + byte) % 65521;
        b = (b + a) % 65521;
    }
    put_u32(z, (b << 16) | a);
    return z;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageU8& img) {
    COMPOSIA_CHECK(img.width > 0 && img.height > 0);
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    append_chunk(out, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + static_cast<size_t>(img.width) * 3));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter none
        const uint8_t* row = img.rgb.data() + static_cast<size_t>(y) * img.width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(img.width) * 3);
    }
    append_chunk(out, "IDAT", zlib_stored(raw));
    append_chunk(out, "IEND", {});

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    COMPOSIA_CHECK(os.good(), << "cannot open " << path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    COMPOSIA_CHECK(os.good(), << "write failed for " << path);
}

ImageU8 read_png(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    COMPOSIA_CHECK(is.good(), << "cannot open " << path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    COMPOSIA_CHECK(bytes.size() > 8 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G',
                   << path << " is not a PNG file");
    auto u32 = [&](size_t o) {
        return (static_cast<uint32_t>(bytes[o]) << 24) | (static_cast<uint32_t>(bytes[o + 1]) << 16) |
               (static_cast<uint32_t>(bytes[o + 2]) << 8) | bytes[o + 3];
    };
    size_t pos = 8;
    int width = 0, height = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = u32(pos);
        const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(pos) + 4,
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos) + 8);
        const size_t data = pos + 8;
        if (type == "IHDR") {
            width = static_cast<int>(u32(data));
            height = static_cast<int>(u32(data + 4));
            COMPOSIA_CHECK(bytes[data + 8] == 8 && bytes[data + 9] == 2,
                           << path << ": only 8-bit RGB PNGs are supported");
            COMPOSIA_CHECK(bytes[data + 12] == 0, << path << ": interlaced PNGs are not supported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), bytes.begin() + static_cast<std::ptrdiff_t>(data),
                        bytes.begin() + static_cast<std::ptrdiff_t>(data + len));
        } else if (type == "IEND") {
            break;
        }
        pos = data + len + 4;
    }
    COMPOSIA_CHECK(width > 0 && height > 0 && idat.size() > 6, << path << ": malformed PNG");
    // inflate stored blocks only
    std::vector<uint8_t> raw;
    size_t p = 2;  // skip zlib header
    while (p + 5 <= idat.size()) {
        const uint8_t bfinal = idat[p] & 1;
        COMPOSIA_CHECK((idat[p] >> 1) == 0, << path << ": compressed PNG data is not supported");
        const size_t len = idat[p + 1] | (static_cast<size_t>(idat[p + 2]) << 8);
        raw.insert(raw.end(), idat.begin() + static_cast<std::ptrdiff_t>(p + 5),
                   idat.begin() + static_cast<std::ptrdiff_t>(p + 5 + len));
        p += 5 + len;
        if (bfinal) break;
    }
    const size_t stride = 1 + static_cast<size_t>(width) * 3;
    COMPOSIA_CHECK(raw.size() >= stride * static_cast<size_t>(height), << path << ": truncated PNG data");
    ImageU8 img(width, height);
    for (int y = 0; y < height; ++y) {
        COMPOSIA_CHECK(raw[static_cast<size_t>(y) * stride] == 0, << path << ": unsupported PNG row filter");
        std::memcpy(img.rgb.data() + static_cast<size_t>(y) * width * 3,
                    raw.data() + static_cast<size_t>(y) * stride + 1, static_cast<size_t>(width) * 3);
    }
    return img;
}

nn::Tensor u8_to_frame(const ImageU8& img) {
    nn::Tensor out({img.height, img.width, 3});
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = img.rgb[static_cast<size_t>(i)] / 255.0;
    return out;
}

// ---- drawing ----------------------------------------------------------------------

namespace {

// 5x7 glyphs for the printable subset used in chart labels
const char* glyph(char c) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
        case '0': return "11111 10001 10011 10101 11001 10001 11111";
        case '1': return "00100 01100 00100 00100 00100 00100 01110";
        case '2': return "11111 00001 00001 11111 10000 10000 11111";
        case '3': return "11111 00001 00001 01111 00001 00001 11111";
        case '4': return "10001 10001 10001 11111 00001 00001 00001";
        case '5': return "11111 10000 10000 11111 00001 00001 11111";
        case '6': return "11111 10000 10000 11111 10001 10001 11111";
        case '7': return "11111 00001 00010 00100 01000 01000 01000";
        case '8': return "11111 10001 10001 11111 10001 10001 11111";
        case '9': return "11111 10001 10001 11111 00001 00001 11111";
        case '.': return "00000 00000 00000 00000 00000 01100 01100";
        case '-': return "00000 00000 00000 11111 00000 00000 00000";
        case '+': return "00000 00100 00100 11111 00100 00100 00000";
        case '_': return "00000 00000 00000 00000 00000 00000 11111";
        case '/': return "00001 00010 00010 00100 01000 01000 10000";
        case ':': return "00000 01100 01100 00000 01100 01100 00000";
        case '%': return "11001 11010 00010 00100 01000 01011 10011";
        case '(': return "00010 00100 01000 01000 01000 00100 00010";
        case ')': return "01000 00100 00010 00010 00010 00100 01000";
        case 'A': return "01110 10001 10001 11111 10001 10001 10001";
        case 'B': return "11110 10001 10001 11110 10001 10001 11110";
        case 'C': return "01111 10000 10000 10000 10000 10000 01111";
        case 'D': return "11110 10001 10001 10001 10001 10001 11110";
        case 'E': return "11111 10000 10000 11110 10000 10000 11111";
        case 'F': return "11111 10000 10000 11110 10000 10000 10000";
        case 'G': return "01111 10000 10000 10111 10001 10001 01111";
        case 'H': return "10001 10001 10001 11111 10001 10001 10001";
        case 'I': return "01110 00100 00100 00100 00100 00100 01110";
        case 'J': return "00111 00010 00010 00010 00010 10010 01100";
        case 'K': return "10001 10010 10100 11000 10100 10010 10001";
        case 'L': return "10000 10000 10000 10000 10000 10000 11111";
        case 'M': return "10001 11011 10101 10101 10001 10001 10001";
        case 'N': return "10001 11001 10101 10011 10001 10001 10001";
        case 'O': return "01110 10001 10001 10001 10001 10001 01110";
        case 'P': return "11110 10001 10001 11110 10000 10000 10000";
        case 'Q': return "01110 10001 10001 10001 10101 10010 01101";
        case 'R': return "11110 10001 10001 11110 10100 10010 10001";
        case 'S': return "01111 10000 10000 01110 00001 00001 11110";
        case 'T': return "11111 00100 00100 00100 00100 00100 00100";
        case 'U': return "10001 10001 10001 10001 10001 10001 01110";
        case 'V': return "10001 10001 10001 10001 10001 01010 00100";
        case 'W': return "10001 10001 10001 10101 10101 11011 10001";
        case 'X': return "10001 01010 00100 00100 00100 01010 10001";
        case 'Y': return "10001 01010 00100 00100 00100 00100 00100";
        case 'Z': return "11111 00001 00010 00100 01000 10000 11111";
        case ' ': return "00000 00000 00000 00000 00000 00000 00000";
        default: return "11111 11111 11111 11111 11111 11111 11111";
    }
}

}  // namespace

void draw_text(ImageU8& img, int x, int y, const std::string& text, std::array<uint8_t, 3> color, int scale) {
    int cx = x;
    for (char c : text) {
        const char* gl = glyph(c);
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (gl[row * 6 + col] == '1')
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx)
                            img.set(cx + col * scale + sx, y + row * scale + sy, color);
        cx += 6 * scale;
    }
}

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, std::array<uint8_t, 3> color) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = static_cast<int>(std::ceil(std::max(std::fabs(dx), std::fabs(dy)))) + 1;
    for (int i = 0; i <= steps; ++i) {
        const double t = steps == 0 ? 0.0 : static_cast<double>(i) / steps;
        img.set(static_cast<int>(std::lround(x0 + t * dx)), static_cast<int>(std::lround(y0 + t * dy)), color);
    }
}

void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1, std::array<uint8_t, 3> color) {
    for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x) img.set(x, y, color);
}

// ---- charts ---------------------------------------------------------------------------

namespace {

const std::array<std::array<uint8_t, 3>, 6> kPalette = {{{31, 119, 180},
                                                          {255, 127, 14},
                                                          {44, 160, 44},
                                                          {214, 39, 40},
                                                          {148, 103, 189},
                                                          {127, 127, 127}}};

std::string fmt_num(double v) {
    char buf[32];
    if (std::fabs(v) >= 1000 || (std::fabs(v) < 0.01 && v != 0.0))
        std::snprintf(buf, sizeof(buf), "%.2e", v);
    else
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<Series>& series, const std::vector<double>& x) {
    const int W = 640, H = 400, ml = 70, mr = 20, mt = 40, mb = 40;
    ImageU8 img(W, H);
    double ymin = 1e300, ymax = -1e300, xmin = 1e300, xmax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.values.size(); ++i) {
            ymin = std::min(ymin, s.values[i]);
            ymax = std::max(ymax, s.values[i]);
            const double xv = x.empty() ? static_cast<double>(i) : x[i];
            xmin = std::min(xmin, xv);
            xmax = std::max(xmax, xv);
        }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (ymax == ymin) ymax = ymin + 1;
    if (xmax == xmin) xmax = xmin + 1;
    auto px = [&](double xv) { return ml + (xv - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double yv) { return H - mb - (yv - ymin) / (ymax - ymin) * (H - mt - mb); };
    draw_line(img, ml, mt, ml, H - mb, {0, 0, 0});
    draw_line(img, ml, H - mb, W - mr, H - mb, {0, 0, 0});
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        draw_text(img, 4, static_cast<int>(py(yv)) - 3, fmt_num(yv), {60, 60, 60});
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        draw_text(img, static_cast<int>(px(xv)) - 10, H - mb + 6, fmt_num(xv), {60, 60, 60});
    }
    draw_text(img, ml, 10, title, {0, 0, 0});
    for (size_t si = 0; si < series.size(); ++si) {
        const auto col = kPalette[si % kPalette.size()];
        const auto& s = series[si];
        for (size_t i = 0; i + 1 < s.values.size(); ++i) {
            const double x0 = x.empty() ? static_cast<double>(i) : x[i];
            const double x1 = x.empty() ? static_cast<double>(i + 1) : x[i + 1];
            draw_line(img, px(x0), py(s.values[i]), px(x1), py(s.values[i + 1]), col);
        }
        draw_text(img, W - mr - 150, mt + static_cast<int>(si) * 12, s.label, col);
    }
    write_png(path, img);
}

void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values) {
    COMPOSIA_CHECK(labels.size() == values.size());
    const int W = 640, H = 400, ml = 70, mr = 20, mt = 40, mb = 60;
    ImageU8 img(W, H);
    double ymax = 0.0, ymin = 0.0;
    for (double v : values) {
        ymax = std::max(ymax, v);
        ymin = std::min(ymin, v);
    }
    if (ymax == ymin) ymax = ymin + 1;
    auto py = [&](double yv) { return H - mb - (yv - ymin) / (ymax - ymin) * (H - mt - mb); };
    draw_line(img, ml, mt, ml, H - mb, {0, 0, 0});
    draw_line(img, ml, H - mb, W - mr, H - mb, {0, 0, 0});
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        draw_text(img, 4, static_cast<int>(py(yv)) - 3, fmt_num(yv), {60, 60, 60});
    }
    draw_text(img, ml, 10, title, {0, 0, 0});
    const int n = static_cast<int>(values.size());
    const int span = (W - ml - mr) / std::max(1, n);
    for (int i = 0; i < n; ++i) {
        const auto col = kPalette[static_cast<size_t>(i) % kPalette.size()];
        const int x0 = ml + i * span + span / 6;
        const int x1 = ml + (i + 1) * span - span / 6;
        fill_rect(img, x0, static_cast<int>(py(std::max(0.0, values[static_cast<size_t>(i)]))),
                  x1, static_cast<int>(py(std::min(0.0, values[static_cast<size_t>(i)]))), col);
        draw_text(img, x0, H - mb + 8, labels[static_cast<size_t>(i)].substr(0, 12), {0, 0, 0});
        draw_text(img, x0, static_cast<int>(py(values[static_cast<size_t>(i)])) - 10,
                  fmt_num(values[static_cast<size_t>(i)]), {0, 0, 0});
    }
    write_png(path, img);
}

}  // namespace composia::img
