#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace recall {

// Minimal RGB raster canvas with a 5x7 bitmap font, enough for the report
// charts without pulling in a plotting stack.
struct Canvas {
    int w = 0, h = 0;
    std::vector<std::uint8_t> rgb;

    Canvas(int w_, int h_, std::array<std::uint8_t, 3> bg = {250, 250, 250});
    void set(int x, int y, std::array<std::uint8_t, 3> c);
    void fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c);
    void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c);
    // Uppercase-only font; lowercase input is folded. scale >= 1.
    void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c, int scale = 1);
    int text_width(const std::string& s, int scale = 1) const;
    void save(const std::string& path) const;
};

struct Series {
    std::string name;
    std::array<std::uint8_t, 3> color;
    std::vector<double> values;
};

// Grouped bar chart; one group per label, one bar per series within a group.
void plot_bars(const std::string& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<Series>& series,
               double y_max = 0.0);

// Line chart over shared x positions (rendered with point markers).
void plot_lines(const std::string& path, const std::string& title,
                const std::vector<double>& xs, const std::vector<Series>& series,
                const std::vector<std::string>& x_labels = {});

}  // namespace recall
