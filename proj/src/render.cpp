#include <panic/render.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace panic::render {

namespace {

std::string fmt_value(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// Round limits outward to one significant digit for clean axis ends.
void nice_range(double& lo, double& hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
        return;
    }
    const double span = hi - lo;
    lo -= 0.05 * span;
    hi += 0.05 * span;
}

}  // namespace

void render_bars(const std::string& path, const std::string& title,
                 const std::vector<BarItem>& items, const std::vector<std::string>& footer) {
    const int label_w = 300;
    const int value_w = 90;
    const int plot_w = 440;
    const int row_h = 16;
    const int top = 34;
    const int width = 16 + label_w + plot_w + value_w + 16;
    const int footer_h = static_cast<int>(footer.size()) * 12 + (footer.empty() ? 0 : 10);
    const int height = top + row_h * std::max<int>(1, static_cast<int>(items.size())) + 24 + footer_h;

    Canvas canvas(width, height);
    draw_text(canvas, 16, 10, title, kBlack, 2);

    double max_abs = 1e-12;
    for (const auto& it : items) max_abs = std::max(max_abs, std::abs(it.value));
    const int x_zero = 16 + label_w + plot_w / 2;
    const double px_per_unit = (plot_w / 2 - 6) / max_abs;

    canvas.line(x_zero, top - 4, x_zero, top + row_h * static_cast<int>(items.size()) + 4, kGray);

    for (std::size_t i = 0; i < items.size(); ++i) {
        const int y = top + static_cast<int>(i) * row_h;
        std::string label = items[i].label;
        const std::size_t max_chars = static_cast<std::size_t>(label_w / 6 - 1);
        if (label.size() > max_chars) label = label.substr(0, max_chars - 2) + "..";
        draw_text(canvas, 16, y + 4, label, kBlack, 1);

        const double v = items[i].value;
        const int len = static_cast<int>(std::abs(v) * px_per_unit + 0.5);
        const Rgb col = v >= 0 ? kRed : kBlue;
        if (v >= 0)
            canvas.fill_rect(x_zero + 1, y + 3, std::max(1, len), row_h - 6, col);
        else
            canvas.fill_rect(x_zero - len, y + 3, std::max(1, len), row_h - 6, col);
        const std::string vs = fmt_value(v);
        const int vx = v >= 0 ? x_zero + len + 6 : x_zero - len - 6 - text_width(vs);
        draw_text(canvas, std::min(vx, width - value_w + 4), y + 4, vs, kGray, 1);
    }

    int fy = top + row_h * static_cast<int>(items.size()) + 18;
    for (const auto& line : footer) {
        draw_text(canvas, 16, fy, line, kGray, 1);
        fy += 12;
    }
    save_png(canvas, path);
}

void render_curve(const std::string& path, const CurvePlot& plot) {
    if (plot.x.size() != plot.y.size() || plot.x.empty())
        throw InvalidInput("curve plot needs matching non-empty x/y");
    const int width = 760, height = 480;
    const int ml = 84, mr = 24, mt = 46;
    const int mb = 64 + static_cast<int>(plot.footer.size()) * 12;
    const int pw = width - ml - mr, ph = height - mt - mb;

    double xlo = *std::min_element(plot.x.begin(), plot.x.end());
    double xhi = *std::max_element(plot.x.begin(), plot.x.end());
    double ylo = *std::min_element(plot.y.begin(), plot.y.end());
    double yhi = *std::max_element(plot.y.begin(), plot.y.end());
    if (plot.has_marker) {
        ylo = std::min(ylo, plot.marker_y);
        yhi = std::max(yhi, plot.marker_y);
    }
    ylo = std::min(ylo, 0.0);
    yhi = std::max(yhi, 0.0);
    nice_range(xlo, xhi);
    nice_range(ylo, yhi);

    const auto px = [&](double x) {
        return ml + static_cast<int>((x - xlo) / (xhi - xlo) * pw + 0.5);
    };
    const auto py = [&](double y) {
        return mt + static_cast<int>((yhi - y) / (yhi - ylo) * ph + 0.5);
    };

    Canvas canvas(width, height);
    draw_text(canvas, ml, 12, plot.title, kBlack, 2);

    if (plot.has_band) {
        const int bx0 = std::max(ml, px(plot.band_lo));
        const int bx1 = std::min(ml + pw, px(plot.band_hi));
        if (bx1 > bx0) canvas.fill_rect(bx0, mt, bx1 - bx0, ph, kBand);
    }

    // axes, ticks, zero line
    canvas.line(ml, mt, ml, mt + ph, kBlack);
    canvas.line(ml, mt + ph, ml + pw, mt + ph, kBlack);
    for (int t = 0; t <= 4; ++t) {
        const double xv = xlo + (xhi - xlo) * t / 4.0;
        const double yv = ylo + (yhi - ylo) * t / 4.0;
        const int tx = px(xv), ty = py(yv);
        canvas.line(tx, mt + ph, tx, mt + ph + 4, kBlack);
        const std::string xs = fmt_value(xv);
        draw_text(canvas, tx - text_width(xs) / 2, mt + ph + 8, xs, kBlack, 1);
        canvas.line(ml - 4, ty, ml, ty, kBlack);
        const std::string ys = fmt_value(yv);
        draw_text(canvas, ml - 8 - text_width(ys), ty - 3, ys, kBlack, 1);
    }
    if (ylo < 0.0 && yhi > 0.0) {
        const int zy = py(0.0);
        for (int x = ml; x < ml + pw; x += 4) canvas.line(x, zy, x + 1, zy, kGray);
    }

    for (std::size_t i = 1; i < plot.x.size(); ++i)
        canvas.line(px(plot.x[i - 1]), py(plot.y[i - 1]), px(plot.x[i]), py(plot.y[i]), kBlue);

    if (plot.has_marker) {
        const int mx = px(plot.marker_x), my = py(plot.marker_y);
        canvas.fill_rect(mx - 3, my - 3, 7, 7, kRed);
    }

    draw_text(canvas, ml + pw / 2 - text_width(plot.xlabel) / 2, mt + ph + 24, plot.xlabel, kBlack,
              1);
    draw_text(canvas, 10, mt - 16, plot.ylabel, kBlack, 1);
    int fy = mt + ph + 40;
    for (const auto& line : plot.footer) {
        draw_text(canvas, ml, fy, line, kGray, 1);
        fy += 12;
    }
    save_png(canvas, path);
}

void render_attention_montage(const std::string& path, const std::string& title,
                              const Grid3& grid, const std::vector<float>& volume,
                              const std::vector<std::uint8_t>& mask) {
    if (volume.size() != static_cast<std::size_t>(grid.voxels()) || mask.size() != volume.size())
        throw InvalidInput("montage: volume/mask size does not match grid");

    float lo = volume[0], hi = volume[0];
    for (float v : volume) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;

    struct Panel {
        const char* name;
        int rows, cols;
    };
    const int mi = grid.h / 2, mj = grid.d / 2, mk = grid.w / 2;
    const Panel panels[3] = {
        {"axial", grid.d, grid.w},     // fixed i
        {"coronal", grid.h, grid.w},   // fixed j
        {"sagittal", grid.h, grid.d},  // fixed k
    };
    const auto sample = [&](int p, int r, int c) {
        if (p == 0) return grid.index(mi, r, c);
        if (p == 1) return grid.index(r, mj, c);
        return grid.index(r, c, mk);
    };

    int max_dim = 1;
    for (const auto& pn : panels) max_dim = std::max({max_dim, pn.rows, pn.cols});
    const int scale = std::max(1, 256 / max_dim);
    const int gap = 14, top = 40, bottom = 26;

    int width = gap;
    int tallest = 0;
    for (const auto& pn : panels) {
        width += pn.cols * scale + gap;
        tallest = std::max(tallest, pn.rows * scale);
    }
    Canvas canvas(width, top + tallest + bottom, kWhite);
    draw_text(canvas, gap, 10, title, kBlack, 2);

    int x0 = gap;
    for (int p = 0; p < 3; ++p) {
        const auto& pn = panels[p];
        for (int r = 0; r < pn.rows; ++r)
            for (int c = 0; c < pn.cols; ++c) {
                const Index v = sample(p, r, c);
                const float g = (volume[static_cast<std::size_t>(v)] - lo) / span;
                const auto gray = static_cast<std::uint8_t>(std::clamp(g, 0.0f, 1.0f) * 255.0f);
                canvas.fill_rect(x0 + c * scale, top + r * scale, scale, scale, {gray, gray, gray});
                if (mask[static_cast<std::size_t>(v)])
                    for (int yy = 0; yy < scale; ++yy)
                        for (int xx = 0; xx < scale; ++xx)
                            canvas.blend(x0 + c * scale + xx, top + r * scale + yy, kGreen, 0.45);
            }
        draw_text(canvas, x0, top + tallest + 8, pn.name, kBlack, 1);
        x0 += pn.cols * scale + gap;
    }
    save_png(canvas, path);
}

}  // namespace panic::render
