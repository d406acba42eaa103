//
// Minimal raster rendering for report artifacts: an RGB canvas, a PNG
// writer, a 5x7 bitmap font, and the three plot kinds the CLI exports:
// signed-contribution bar charts, shape-function curves with a quartile
// band, and mid-slice attention montages.
//

#pragma once

#include <panic/types.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace panic::render {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{20, 20, 20};
inline constexpr Rgb kGray{140, 140, 140};
inline constexpr Rgb kLightGray{225, 225, 225};
inline constexpr Rgb kBlue{42, 96, 180};
inline constexpr Rgb kRed{190, 54, 44};
inline constexpr Rgb kGreen{40, 170, 70};
inline constexpr Rgb kBand{205, 220, 240};

class Canvas {
public:
    Canvas(int w, int h, Rgb bg = kWhite);

    int width() const { return w_; }
    int height() const { return h_; }
    const std::vector<std::uint8_t>& pixels() const { return px_; }

    void set(int x, int y, Rgb c);
    void blend(int x, int y, Rgb c, double alpha);
    void fill_rect(int x, int y, int w, int h, Rgb c);
    void line(int x0, int y0, int x1, int y1, Rgb c);

private:
    int w_, h_;
    std::vector<std::uint8_t> px_;
};

// Deflate-compressed 8-bit RGB PNG.
void save_png(const Canvas& canvas, const std::string& path);

// 5x7 bitmap font, scaled by integer factors; y is the glyph top.
void draw_text(Canvas& canvas, int x, int y, const std::string& text, Rgb c, int scale = 1);
int text_width(const std::string& text, int scale = 1);
int text_height(int scale = 1);

// Horizontal signed bars, one per item, drawn in the given order with a
// shared zero axis. Values are annotated; footer lines go under the chart.
struct BarItem {
    std::string label;
    double value = 0.0;
};
void render_bars(const std::string& path, const std::string& title,
                 const std::vector<BarItem>& items, const std::vector<std::string>& footer);

// Single curve y(x) with optional shaded x-band (quartiles), a marker at the
// observed value, and a horizontal reference line at y = 0.
struct CurvePlot {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    std::vector<double> x;
    std::vector<double> y;
    bool has_band = false;
    double band_lo = 0.0, band_hi = 0.0;
    bool has_marker = false;
    double marker_x = 0.0, marker_y = 0.0;
    std::vector<std::string> footer;
};
void render_curve(const std::string& path, const CurvePlot& plot);

// Three orthogonal mid-slices of a volume in grayscale with mask voxels
// tinted green. volume and mask have grid.voxels() entries, W-fastest.
void render_attention_montage(const std::string& path, const std::string& title,
                              const Grid3& grid, const std::vector<float>& volume,
                              const std::vector<std::uint8_t>& mask);

}  // namespace panic::render
