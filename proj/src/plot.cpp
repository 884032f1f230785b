#include "camgauge/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "camgauge/error.hpp"

namespace camgauge::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>;  // 5 bits per row, MSB = left column

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f{
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0E}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}, {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},
  };
  return f;
}

using Rgb = std::array<double, 3>;

const std::array<Rgb, 6> kPalette{{{0.22, 0.42, 0.69},
                                   {0.87, 0.52, 0.32},
                                   {0.33, 0.66, 0.41},
                                   {0.77, 0.31, 0.32},
                                   {0.51, 0.45, 0.70},
                                   {0.58, 0.47, 0.38}}};

class Canvas {
 public:
  Canvas(int w, int h) : img_(3, h, w, 1.0) {}

  void fill(int x0, int y0, int x1, int y1, const Rgb& c) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(img_.width() - 1, x1);
    y1 = std::min(img_.height() - 1, y1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        for (int ch = 0; ch < 3; ++ch) img_.at(ch, y, x) = c[ch];
  }

  // Text in the 5x7 font at integer `scale`; vertical text runs bottom to top.
  void text(int x, int y, const std::string& s, const Rgb& c, int scale = 1, bool vertical = false) {
    for (char raw : s) {
      const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      const auto it = font().find(ch);
      if (it != font().end()) {
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col) {
            if (!(it->second[row] & (0x10 >> col))) continue;
            const int px = vertical ? x + row * scale : x + col * scale;
            const int py = vertical ? y - col * scale : y + row * scale;
            fill(px, py, px + scale - 1, vertical ? py - scale + 1 : py + scale - 1, c);
          }
      }
      if (vertical)
        y -= 6 * scale;
      else
        x += 6 * scale;
    }
  }

  Image take() { return std::move(img_); }

 private:
  Image img_;
};

int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void draw_panel(Canvas& cv, const BarPanel& panel, int ox, int oy, int w, int h) {
  const Rgb black{0.1, 0.1, 0.1}, grid{0.85, 0.85, 0.85};
  const int left = ox + 48, right = ox + w - 12, top = oy + 28, bottom = oy + h - 110;
  cv.text(ox + (w - text_width(panel.title, 2)) / 2, oy + 6, panel.title, black, 2);

  double lo = 0.0, hi = 0.0;
  for (const auto& s : panel.series)
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double e = i < s.errors.size() ? s.errors[i] : 0.0;
      lo = std::min(lo, s.values[i] - e);
      hi = std::max(hi, s.values[i] + e);
    }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  auto to_y = [&](double v) { return bottom - static_cast<int>(std::lround((v - lo) / (hi - lo) * (bottom - top))); };

  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int y = to_y(v);
    cv.fill(left, y, right, y, grid);
    const std::string label = tick_label(v);
    cv.text(left - 4 - text_width(label), y - 3, label, black);
  }
  cv.fill(left, top, left, bottom, black);
  cv.fill(left, to_y(0.0), right, to_y(0.0), black);

  const std::size_t n_cat = panel.categories.size();
  const std::size_t n_ser = std::max<std::size_t>(1, panel.series.size());
  if (n_cat == 0) return;
  const double slot = static_cast<double>(right - left) / static_cast<double>(n_cat);
  const double bar = slot * 0.8 / static_cast<double>(n_ser);
  for (std::size_t c = 0; c < n_cat; ++c) {
    const int sx = left + static_cast<int>(slot * c + slot * 0.1);
    for (std::size_t s = 0; s < panel.series.size(); ++s) {
      const Series& ser = panel.series[s];
      if (c >= ser.values.size()) continue;
      const int x0 = sx + static_cast<int>(bar * s);
      const int x1 = sx + static_cast<int>(bar * (s + 1)) - 2;
      const Rgb& color = kPalette[(panel.series.size() > 1 ? s : c) % kPalette.size()];
      cv.fill(x0, to_y(0.0), x1, to_y(ser.values[c]), color);
      if (c < ser.errors.size() && ser.errors[c] > 0.0) {
        const int xm = (x0 + x1) / 2;
        const int ya = to_y(ser.values[c] - ser.errors[c]);
        const int yb = to_y(ser.values[c] + ser.errors[c]);
        cv.fill(xm, ya, xm, yb, black);
        cv.fill(xm - 3, ya, xm + 3, ya, black);
        cv.fill(xm - 3, yb, xm + 3, yb, black);
      }
    }
    const std::string& label = panel.categories[c];
    const int lx = sx + static_cast<int>(slot * 0.4) - 3;
    cv.text(lx, bottom + 6 + text_width(label), label, black, 1, true);
  }

  if (panel.series.size() > 1) {
    int lx = right - 110;
    int ly = top + 4;
    for (std::size_t s = 0; s < panel.series.size(); ++s, ly += 12) {
      cv.fill(lx, ly, lx + 8, ly + 7, kPalette[s % kPalette.size()]);
      cv.text(lx + 12, ly, panel.series[s].label, black);
    }
  }
}

}  // namespace

Image render_bar_panels(std::span<const BarPanel> panels, int columns) {
  if (panels.empty()) throw InvalidInput("nothing to plot");
  if (columns < 1) throw InvalidInput("columns must be >= 1");
  std::size_t max_cat = 1;
  for (const auto& p : panels) max_cat = std::max(max_cat, p.categories.size() * std::max<std::size_t>(1, p.series.size()));
  const int pw = std::max(320, 60 + static_cast<int>(max_cat) * 22);
  const int ph = 360;
  const int cols = std::min<int>(columns, static_cast<int>(panels.size()));
  const int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
  Canvas cv(pw * cols, ph * rows);
  for (std::size_t i = 0; i < panels.size(); ++i)
    draw_panel(cv, panels[i], static_cast<int>(i % cols) * pw, static_cast<int>(i / cols) * ph, pw, ph);
  return cv.take();
}

}  // namespace camgauge::plot
