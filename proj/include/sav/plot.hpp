#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

namespace sav {

// Tiny RGB framebuffer with just enough drawing for loss curves and bar
// charts. Every plot also writes a sidecar JSON with the numeric values, so
// nothing downstream ever has to parse pixels.
struct Canvas {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;

    Canvas(int width, int height, uint8_t bg = 255) : w(width), h(height), rgb(static_cast<size_t>(width) * height * 3, bg) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        size_t i = (static_cast<size_t>(y) * w + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y)
            for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) set(x, y, r, g, b);
    }

    void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

namespace plot_detail {

// 3x5 glyphs for numeric axis labels.
inline const uint16_t* glyph(char c) {
    // Each glyph: 5 rows x 3 bits, MSB left.
    static const uint16_t digits[10][5] = {
        {0b111, 0b101, 0b101, 0b101, 0b111}, {0b010, 0b110, 0b010, 0b010, 0b111},
        {0b111, 0b001, 0b111, 0b100, 0b111}, {0b111, 0b001, 0b111, 0b001, 0b111},
        {0b101, 0b101, 0b111, 0b001, 0b001}, {0b111, 0b100, 0b111, 0b001, 0b111},
        {0b111, 0b100, 0b111, 0b101, 0b111}, {0b111, 0b001, 0b010, 0b010, 0b010},
        {0b111, 0b101, 0b111, 0b101, 0b111}, {0b111, 0b101, 0b111, 0b001, 0b111}};
    static const uint16_t dot[5] = {0b000, 0b000, 0b000, 0b000, 0b010};
    static const uint16_t minus[5] = {0b000, 0b000, 0b111, 0b000, 0b000};
    static const uint16_t e[5] = {0b000, 0b111, 0b110, 0b100, 0b111};
    static const uint16_t plus[5] = {0b000, 0b010, 0b111, 0b010, 0b000};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    if (c == '.') return dot;
    if (c == '-') return minus;
    if (c == '+') return plus;
    if (c == 'e' || c == 'E') return e;
    return nullptr;
}

inline void draw_text(Canvas& c, int x, int y, const std::string& s) {
    for (char ch : s) {
        const uint16_t* g = glyph(ch);
        if (g)
            for (int r = 0; r < 5; ++r)
                for (int b = 0; b < 3; ++b)
                    if (g[r] >> (2 - b) & 1) c.set(x + b, y + r, 40, 40, 40);
        x += 4;
    }
}

inline std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

inline void png_chunk(std::ofstream& f, const char* type, const std::vector<uint8_t>& data) {
    auto be32 = [&](uint32_t v) {
        uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v)};
        f.write(reinterpret_cast<char*>(b), 4);
    };
    be32(static_cast<uint32_t>(data.size()));
    f.write(type, 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    be32(static_cast<uint32_t>(crc));
}

}  // namespace plot_detail

inline void write_png(const std::string& path, const Canvas& canvas) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr(13);
    auto put32 = [](std::vector<uint8_t>& v, size_t at, uint32_t x) {
        v[at] = static_cast<uint8_t>(x >> 24);
        v[at + 1] = static_cast<uint8_t>(x >> 16);
        v[at + 2] = static_cast<uint8_t>(x >> 8);
        v[at + 3] = static_cast<uint8_t>(x);
    };
    put32(ihdr, 0, static_cast<uint32_t>(canvas.w));
    put32(ihdr, 4, static_cast<uint32_t>(canvas.h));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    plot_detail::png_chunk(f, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(canvas.h) * (canvas.w * 3 + 1));
    for (int y = 0; y < canvas.h; ++y) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = canvas.rgb.data() + static_cast<size_t>(y) * canvas.w * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(canvas.w) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    idat.resize(bound);
    plot_detail::png_chunk(f, "IDAT", idat);
    plot_detail::png_chunk(f, "IEND", {});
    if (!f) throw std::runtime_error("write failed: " + path);
}

// Loss curves: total/ce/dice vs step. Sidecar JSON lands at <path>.json.
struct TracePoint {
    int step;
    double total, ce, dice;
};

inline void plot_loss_curve(const std::vector<TracePoint>& rows, const std::string& path) {
    if (rows.empty()) throw std::invalid_argument("plot: trace has no rows");
    const int W = 640, H = 400, ML = 48, MR = 16, MT = 16, MB = 32;
    Canvas c(W, H);
    double lo = rows[0].total, hi = rows[0].total;
    for (const auto& r : rows) {
        lo = std::min({lo, r.total, r.ce, r.dice});
        hi = std::max({hi, r.total, r.ce, r.dice});
    }
    if (hi <= lo) hi = lo + 1.0;
    int s_lo = rows.front().step, s_hi = rows.back().step;
    if (s_hi <= s_lo) s_hi = s_lo + 1;

    auto px = [&](double step) { return ML + static_cast<int>((step - s_lo) / (s_hi - s_lo) * (W - ML - MR)); };
    auto py = [&](double v) { return H - MB - static_cast<int>((v - lo) / (hi - lo) * (H - MT - MB)); };

    c.line(ML, MT, ML, H - MB, 0, 0, 0);
    c.line(ML, H - MB, W - MR, H - MB, 0, 0, 0);
    plot_detail::draw_text(c, 4, py(hi) - 2, plot_detail::fmt_num(hi));
    plot_detail::draw_text(c, 4, py(lo) - 2, plot_detail::fmt_num(lo));
    plot_detail::draw_text(c, px(s_lo) - 4, H - MB + 6, plot_detail::fmt_num(s_lo));
    plot_detail::draw_text(c, px(s_hi) - 12, H - MB + 6, plot_detail::fmt_num(s_hi));

    struct Series {
        double TracePoint::*field;
        uint8_t r, g, b;
    };
    const Series series[3] = {{&TracePoint::total, 20, 20, 160}, {&TracePoint::ce, 200, 60, 30}, {&TracePoint::dice, 30, 140, 60}};
    for (const auto& s : series)
        for (size_t i = 1; i < rows.size(); ++i)
            c.line(px(rows[i - 1].step), py(rows[i - 1].*(s.field)), px(rows[i].step), py(rows[i].*(s.field)), s.r, s.g, s.b);
    write_png(path, c);

    nlohmann::json side{{"kind", "loss_curve"}, {"steps", nlohmann::json::array()}, {"total", nlohmann::json::array()},
                        {"ce", nlohmann::json::array()}, {"dice", nlohmann::json::array()}};
    for (const auto& r : rows) {
        side["steps"].push_back(r.step);
        side["total"].push_back(r.total);
        side["ce"].push_back(r.ce);
        side["dice"].push_back(r.dice);
    }
    std::ofstream sf(path + ".json");
    sf << side.dump(2) << "\n";
    if (!sf) throw std::runtime_error("write failed: " + path + ".json");
}

// Grouped bars (dice/avd/f1 per scanner). Sidecar JSON lands at <path>.json.
struct ScannerBar {
    std::string scanner;
    double dice, avd, f1;
};

inline void plot_scanner_bars(const std::vector<ScannerBar>& groups, const std::string& path) {
    if (groups.empty()) throw std::invalid_argument("plot: report has no scanner groups");
    const int W = 640, H = 400, ML = 48, MR = 16, MT = 16, MB = 32;
    Canvas c(W, H);
    double hi = 1.0;
    for (const auto& g : groups) hi = std::max({hi, g.dice, g.avd, g.f1});
    auto py = [&](double v) { return H - MB - static_cast<int>(v / hi * (H - MT - MB)); };

    c.line(ML, MT, ML, H - MB, 0, 0, 0);
    c.line(ML, H - MB, W - MR, H - MB, 0, 0, 0);
    plot_detail::draw_text(c, 4, py(hi) - 2, plot_detail::fmt_num(hi));
    plot_detail::draw_text(c, 4, py(0) - 2, "0");

    const int span = (W - ML - MR) / static_cast<int>(groups.size());
    const int bar = std::max(4, span / 5);
    const uint8_t colors[3][3] = {{20, 20, 160}, {200, 60, 30}, {30, 140, 60}};
    for (size_t i = 0; i < groups.size(); ++i) {
        const double vals[3] = {groups[i].dice, groups[i].avd, groups[i].f1};
        int gx = ML + static_cast<int>(i) * span + span / 8;
        for (int k = 0; k < 3; ++k)
            c.fill_rect(gx + k * (bar + 2), py(vals[k]), gx + k * (bar + 2) + bar - 1, H - MB - 1, colors[k][0],
                        colors[k][1], colors[k][2]);
        plot_detail::draw_text(c, gx, H - MB + 6, plot_detail::fmt_num(static_cast<double>(i)));
    }
    write_png(path, c);

    nlohmann::json side{{"kind", "scanner_bars"}, {"groups", nlohmann::json::array()}};
    for (const auto& g : groups)
        side["groups"].push_back({{"scanner", g.scanner}, {"dice", g.dice}, {"avd", g.avd}, {"f1", g.f1}});
    std::ofstream sf(path + ".json");
    sf << side.dump(2) << "\n";
    if (!sf) throw std::runtime_error("write failed: " + path + ".json");
}

}  // namespace sav
