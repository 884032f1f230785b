#pragma once

#include <span>
#include <string>
#include <vector>

#include "camgauge/core.hpp"

namespace camgauge::plot {

struct Series {
  std::string label;
  std::vector<double> values;
  std::vector<double> errors;  // half-length of the error bar; may be empty
};

struct BarPanel {
  std::string title;
  std::vector<std::string> categories;
  std::vector<Series> series;  // each series has one value per category
};

/// Grouped bar charts laid out on a grid with `columns` panels per row.
/// Returns an RGB image; text uses a built-in 5x7 font (lower case is drawn as upper case).
Image render_bar_panels(std::span<const BarPanel> panels, int columns);

}  // namespace camgauge::plot
