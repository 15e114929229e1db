#include "recall/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "recall/errors.hpp"
#include "recall/image.hpp"

namespace recall {

namespace {

// 5x7 glyphs, one string per row, '#' = lit.
const std::map<char, std::array<const char*, 7>>& font() {
    static const std::map<char, std::array<const char*, 7>> f = {
        {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
        {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
        {'C', {".####", "#....", "#....", "#....", "#....", "#....", ".####"}},
        {'D', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
        {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
        {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
        {'G', {".####", "#....", "#....", "#.###", "#...#", "#...#", ".###."}},
        {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
        {'I', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"}},
        {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
        {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
        {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
        {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
        {'N', {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"}},
        {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
        {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
        {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
        {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
        {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
        {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
        {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
        {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
        {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"}},
        {'X', {"#...#", ".#.#.", "..#..", "..#..", "..#..", ".#.#.", "#...#"}},
        {'Y', {"#...#", ".#.#.", "..#..", "..#..", "..#..", "..#..", "..#.."}},
        {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
        {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
        {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
        {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
        {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
        {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
        {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
        {'6', {"..###", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
        {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
        {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
        {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", "###.."}},
        {'.', {".....", ".....", ".....", ".....", ".....", "..##.", "..##."}},
        {',', {".....", ".....", ".....", ".....", "..##.", "...#.", "..#.."}},
        {':', {".....", "..##.", "..##.", ".....", "..##.", "..##.", "....."}},
        {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
        {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
        {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
        {'%', {"##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"}},
        {'/', {"....#", "....#", "...#.", "..#..", ".#...", "#....", "#...."}},
        {'(', {"...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."}},
        {')', {".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."}},
        {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
        {' ', {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
    };
    return f;
}

}  // namespace

Canvas::Canvas(int w_, int h_, std::array<std::uint8_t, 3> bg)
    : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3) {
    for (int i = 0; i < w * h; ++i)
        for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(i) * 3 + c] = bg[c];
}

void Canvas::set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        set(x0, y0, c);
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

void Canvas::text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c, int scale) {
    int cx = x;
    const auto& f = font();
    for (char raw : s) {
        char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        auto it = f.find(ch);
        if (it == f.end()) it = f.find(' ');
        for (int ry = 0; ry < 7; ++ry)
            for (int rx = 0; rx < 5; ++rx)
                if (it->second[ry][rx] == '#')
                    for (int oy = 0; oy < scale; ++oy)
                        for (int ox = 0; ox < scale; ++ox)
                            set(cx + rx * scale + ox, y + ry * scale + oy, c);
        cx += 6 * scale;
    }
}

int Canvas::text_width(const std::string& s, int scale) const {
    return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::save(const std::string& path) const { write_png_rgb8(path, rgb, w, h); }

void plot_bars(const std::string& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<Series>& series,
               double y_max) {
    if (series.empty() || labels.empty()) throw ConfigError("plot_bars: nothing to plot");
    for (const auto& s : series)
        if (s.values.size() != labels.size())
            throw ConfigError("plot_bars: series length does not match labels");

    double vmax = y_max;
    if (vmax <= 0.0)
        for (const auto& s : series)
            for (double v : s.values) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;

    const int W = 720, H = 420;
    const int left = 56, right = 16, top = 36, bottom = 64;
    Canvas cv(W, H);
    cv.text(left, 10, title, {20, 20, 20});

    int plot_w = W - left - right, plot_h = H - top - bottom;
    cv.line(left, top, left, top + plot_h, {60, 60, 60});
    cv.line(left, top + plot_h, left + plot_w, top + plot_h, {60, 60, 60});
    for (int g = 0; g <= 4; ++g) {
        int y = top + plot_h - g * plot_h / 4;
        char lab[32];
        std::snprintf(lab, sizeof(lab), "%.0f", vmax * g / 4);
        cv.text(left - 8 - cv.text_width(lab), y - 3, lab, {90, 90, 90});
        if (g > 0) cv.line(left, y, left + plot_w, y, {225, 225, 225});
    }

    int n_groups = static_cast<int>(labels.size());
    int n_series = static_cast<int>(series.size());
    int group_w = plot_w / n_groups;
    int bar_w = std::max(4, (group_w - 12) / n_series);
    for (int gi = 0; gi < n_groups; ++gi) {
        int gx = left + gi * group_w + 6;
        for (int si = 0; si < n_series; ++si) {
            double v = std::clamp(series[si].values[gi], 0.0, vmax);
            int bh = static_cast<int>(std::lround(v / vmax * plot_h));
            int x0 = gx + si * bar_w;
            cv.fill_rect(x0, top + plot_h - bh, x0 + bar_w - 2, top + plot_h - 1,
                         series[si].color);
        }
        cv.text(gx, top + plot_h + 8, labels[gi].substr(0, 11), {40, 40, 40});
    }
    int lx = left;
    int ly = H - 22;
    for (const auto& s : series) {
        cv.fill_rect(lx, ly, lx + 10, ly + 6, s.color);
        cv.text(lx + 14, ly, s.name, {40, 40, 40});
        lx += 14 + cv.text_width(s.name) + 18;
    }
    cv.save(path);
}

void plot_lines(const std::string& path, const std::string& title,
                const std::vector<double>& xs, const std::vector<Series>& series,
                const std::vector<std::string>& x_labels) {
    if (series.empty() || xs.empty()) throw ConfigError("plot_lines: nothing to plot");
    for (const auto& s : series)
        if (s.values.size() != xs.size())
            throw ConfigError("plot_lines: series length does not match xs");

    double vmax = 0.0, vmin = 0.0;
    for (const auto& s : series)
        for (double v : s.values) {
            vmax = std::max(vmax, v);
            vmin = std::min(vmin, v);
        }
    if (vmax <= vmin) vmax = vmin + 1.0;

    const int W = 720, H = 420;
    const int left = 56, right = 16, top = 36, bottom = 64;
    Canvas cv(W, H);
    cv.text(left, 10, title, {20, 20, 20});
    int plot_w = W - left - right, plot_h = H - top - bottom;
    cv.line(left, top, left, top + plot_h, {60, 60, 60});
    cv.line(left, top + plot_h, left + plot_w, top + plot_h, {60, 60, 60});
    for (int g = 0; g <= 4; ++g) {
        int y = top + plot_h - g * plot_h / 4;
        char lab[32];
        std::snprintf(lab, sizeof(lab), "%.0f", vmin + (vmax - vmin) * g / 4);
        cv.text(left - 8 - cv.text_width(lab), y - 3, lab, {90, 90, 90});
        if (g > 0) cv.line(left, y, left + plot_w, y, {225, 225, 225});
    }

    int n = static_cast<int>(xs.size());
    auto px = [&](int i) {
        return n == 1 ? left + plot_w / 2 : left + i * plot_w / (n - 1);
    };
    auto py = [&](double v) {
        return top + plot_h - static_cast<int>(std::lround((v - vmin) / (vmax - vmin) * plot_h));
    };
    for (int i = 0; i < n; ++i) {
        std::string lab;
        if (i < static_cast<int>(x_labels.size())) {
            lab = x_labels[i];
        } else {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g", xs[i]);
            lab = buf;
        }
        cv.text(px(i) - cv.text_width(lab) / 2, top + plot_h + 8, lab, {40, 40, 40});
    }
    for (const auto& s : series) {
        for (int i = 0; i + 1 < n; ++i)
            cv.line(px(i), py(s.values[i]), px(i + 1), py(s.values[i + 1]), s.color);
        for (int i = 0; i < n; ++i)
            cv.fill_rect(px(i) - 2, py(s.values[i]) - 2, px(i) + 2, py(s.values[i]) + 2, s.color);
    }
    int lx = left;
    int ly = H - 22;
    for (const auto& s : series) {
        cv.fill_rect(lx, ly, lx + 10, ly + 6, s.color);
        cv.text(lx + 14, ly, s.name, {40, 40, 40});
        lx += 14 + cv.text_width(s.name) + 18;
    }
    cv.save(path);
}

}  // namespace recall
