#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "camgauge/metrics.hpp"

namespace camgauge::testing {

// Dense oracle: one equation per pixel. Known pixels pin their value; removed
// pixels equal the renormalized weighted mean of their in-image neighbours.
inline Image dense_impute(const Image& x, const PixelMask& mask) {
  const int h = x.height(), w = x.width(), n = h * w;
  Image out = x;
  for (int ch = 0; ch < x.channels(); ++ch) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int p = r * w + c;
        a(p, p) = 1.0;
        if (!mask(r, c)) {
          b(p) = x.at(ch, r, c);
          continue;
        }
        double total = 0.0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || r + dr < 0 || r + dr >= h || c + dc < 0 || c + dc >= w) continue;
            total += (dr == 0 || dc == 0) ? 1.0 / 6.0 : 1.0 / 12.0;
          }
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || r + dr < 0 || r + dr >= h || c + dc < 0 || c + dc >= w) continue;
            const double wt = (dr == 0 || dc == 0) ? 1.0 / 6.0 : 1.0 / 12.0;
            a(p, (r + dr) * w + c + dc) -= wt / total;
          }
      }
    const Eigen::VectorXd sol = a.fullPivLu().solve(b);
    for (int p = 0; p < n; ++p) out.plane(ch)[p] = std::clamp(sol(p), 0.0, 1.0);
  }
  return out;
}

inline double softmax_of(const std::vector<double>& logits, int cls) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  return std::exp(logits[cls] - top) / z;
}

// ROAD step by step: explicit stable orderings of the map, the first
// round(k * n) pixels removed, imputed by dense_impute, scored by the model.
inline double road_brute_force(Classifier& model, const Image& x, const AttributionMap& map, int cls,
                               const std::vector<double>& fractions) {
  const std::size_t n = map.size();
  std::vector<int> morf(n), lerf(n);
  std::iota(morf.begin(), morf.end(), 0);
  std::iota(lerf.begin(), lerf.end(), 0);
  std::stable_sort(morf.begin(), morf.end(), [&](int a, int b) { return map[a] > map[b]; });
  std::stable_sort(lerf.begin(), lerf.end(), [&](int a, int b) { return map[a] < map[b]; });
  double total = 0.0;
  for (double k : fractions) {
    const int count = static_cast<int>(std::floor(k * static_cast<double>(n) + 0.5));
    auto score = [&](const std::vector<int>& order) {
      PixelMask mask(map.rows(), map.cols());
      for (int i = 0; i < count; ++i) mask.removed[order[i]] = 1;
      const Image imputed = dense_impute(x, mask);
      return softmax_of(model.logits({&imputed, 1})[0], cls);
    };
    total += score(lerf) - score(morf);
  }
  return total / static_cast<double>(fractions.size());
}

}  // namespace camgauge::testing
