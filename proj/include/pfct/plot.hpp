#pragma once

// Minimal raster line plots written as RGB PNG. Axis tick labels use a 3x5
// pixel font covering digits, '.', '-', 'e' and 'k'.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "pfct/io.hpp"

namespace pfct {

struct Series {
    std::vector<double> x;
    std::vector<double> y;
    std::array<std::uint8_t, 3> color{31, 119, 180};
};

struct PlotOptions {
    int width = 640;
    int height = 400;
    bool log_y = false;
};

namespace detail {

class Canvas {
  public:
    Canvas(int w, int h) : w_(w), h_(h), rgb_(static_cast<std::size_t>(w) * h * 3, 255) {}

    void set(int x, int y, std::array<std::uint8_t, 3> c)
    {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        auto* p = &rgb_[(static_cast<std::size_t>(y) * w_ + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c)
    {
        const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
        }
    }

    void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c)
    {
        for (char ch : s) {
            const auto g = glyph(ch);
            for (int r = 0; r < 5; ++r) {
                for (int q = 0; q < 3; ++q) {
                    if (g[static_cast<std::size_t>(r)] & (4 >> q)) {
                        set(x + 2 * q, y + 2 * r, c);
                        set(x + 2 * q + 1, y + 2 * r, c);
                        set(x + 2 * q, y + 2 * r + 1, c);
                        set(x + 2 * q + 1, y + 2 * r + 1, c);
                    }
                }
            }
            x += 8;
        }
    }

    const std::vector<std::uint8_t>& rgb() const { return rgb_; }

  private:
    static std::array<std::uint8_t, 5> glyph(char ch)
    {
        switch (ch) {
        case '0': return {7, 5, 5, 5, 7};
        case '1': return {2, 6, 2, 2, 7};
        case '2': return {7, 1, 7, 4, 7};
        case '3': return {7, 1, 7, 1, 7};
        case '4': return {5, 5, 7, 1, 1};
        case '5': return {7, 4, 7, 1, 7};
        case '6': return {7, 4, 7, 5, 7};
        case '7': return {7, 1, 1, 1, 1};
        case '8': return {7, 5, 7, 5, 7};
        case '9': return {7, 5, 7, 1, 7};
        case '.': return {0, 0, 0, 0, 2};
        case '-': return {0, 0, 7, 0, 0};
        case 'e': return {0, 7, 7, 4, 7};
        case 'k': return {4, 5, 6, 5, 5};
        default: return {0, 0, 0, 0, 0};
        }
    }

    int w_, h_;
    std::vector<std::uint8_t> rgb_;
};

inline std::string tick_label(double v)
{
    char buf[32];
    if (v != 0.0 && (std::abs(v) >= 1e5 || std::abs(v) < 1e-2)) {
        std::snprintf(buf, sizeof buf, "%.0e", v);
    } else if (std::abs(v) >= 1000 && std::fmod(v, 1000.0) == 0.0) {
        std::snprintf(buf, sizeof buf, "%.0fk", v / 1000.0);
    } else {
        std::snprintf(buf, sizeof buf, "%.3g", v);
    }
    return buf;
}

} // namespace detail

/// Non-positive values are dropped on a log axis.
inline void write_line_plot(const std::filesystem::path& path, const std::vector<Series>& series, PlotOptions opt = {})
{
    const int left = 70, right = 20, top = 20, bottom = 40;
    detail::Canvas cv(opt.width, opt.height);
    auto ty = [&](double v) { return opt.log_y ? std::log10(v) : v; };
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i]) || (opt.log_y && s.y[i] <= 0)) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, ty(s.y[i]));
            ymax = std::max(ymax, ty(s.y[i]));
        }
    }
    if (!std::isfinite(xmin)) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) {
        ymax += 0.5;
        ymin -= 0.5;
    }
    const double pw = opt.width - left - right, ph = opt.height - top - bottom;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    const std::array<std::uint8_t, 3> axis{0, 0, 0}, grid{225, 225, 225};
    for (int t = 0; t <= 4; ++t) {
        const double yv = ymin + (ymax - ymin) * t / 4.0;
        const double xv = xmin + (xmax - xmin) * t / 4.0;
        cv.line(left, py(yv), left + pw, py(yv), grid);
        cv.line(px(xv), top, px(xv), top + ph, grid);
        cv.text(4, static_cast<int>(py(yv)) - 5, detail::tick_label(opt.log_y ? std::pow(10.0, yv) : yv), axis);
        const std::string xl = detail::tick_label(std::round(xv));
        cv.text(static_cast<int>(px(xv)) - 4 * static_cast<int>(xl.size()), top + static_cast<int>(ph) + 8, xl, axis);
    }
    cv.line(left, top, left, top + ph, axis);
    cv.line(left, top + ph, left + pw, top + ph, axis);
    for (const auto& s : series) {
        bool have = false;
        double lx = 0, ly = 0;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i]) || (opt.log_y && s.y[i] <= 0)) {
                have = false;
                continue;
            }
            const double cx = px(s.x[i]), cy = py(ty(s.y[i]));
            if (have) cv.line(lx, ly, cx, cy, s.color);
            else cv.set(static_cast<int>(cx), static_cast<int>(cy), s.color);
            lx = cx;
            ly = cy;
            have = true;
        }
    }
    io::write_png_rgb8(path, opt.width, opt.height, cv.rgb());
}

/// Trailing moving average, used to smooth loss curves before plotting.
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window)
{
    std::vector<double> out(v.size());
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::isfinite(v[i])) {
            sum += v[i];
            ++n;
        }
        if (i >= window && std::isfinite(v[i - window])) {
            sum -= v[i - window];
            --n;
        }
        out[i] = n ? sum / static_cast<double>(n) : std::nan("");
    }
    return out;
}

} // namespace pfct
