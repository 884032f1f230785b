#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camgauge/error.hpp"
#include "camgauge/metrics.hpp"
#include "camgauge/rng.hpp"
#include "support/oracles.hpp"
#include "support/toy_models.hpp"

using namespace camgauge;
using camgauge::testing::dense_impute;
using camgauge::testing::LinearToy;

namespace {

AttributionMap map_of(Grid g) {
  const int r = g.rows(), c = g.cols();
  return AttributionMap(std::move(g), r, c);
}

Image random_image(int c, int h, int w, std::uint64_t seed) {
  Image img(c, h, w);
  Rng rng(seed);
  for (double& v : img.pixels()) v = rng.uniform();
  return img;
}

RoadConfig noiseless() {
  RoadConfig cfg;
  cfg.noise_std = 0.0;
  return cfg;
}

double softmax_prob(const std::vector<double>& logits, int cls) {
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  return std::exp(logits[cls]) / z;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("average drop") {
    CHECK(average_drop_from_confidences(0.8, 0.4) == doctest::Approx(0.5));
    CHECK(average_drop_from_confidences(0.5, 0.7) == 0.0);
    CHECK_THROWS_AS(average_drop_from_confidences(0.0, 0.1), UndefinedMetric);

    LinearToy model(1, 8, 8, 3);
    Rng rng(1);
    for (int c = 0; c < 3; ++c)
      for (double& w : model.weights(c)) w = rng.uniform() - 0.5;
    const Image x = random_image(1, 8, 8, 2);
    CHECK(average_drop(model, x, map_of(Grid(8, 8, 1.0)), 1) == 0.0);
    const double ad = average_drop(model, x, map_of(Grid(8, 8, 0.3)), 1);
    CHECK(ad >= 0.0);
    CHECK(ad <= 1.0);
  }

  TEST_CASE("complexity") {
    CHECK(complexity(map_of(Grid(4, 4, 0.0))) == 0.0);
    CHECK(complexity(map_of(Grid(4, 4, 1.0))) == 1.0);
    CHECK(complexity(map_of(Grid{{1, 0}, {0, 1}})) == 0.5);
  }

  TEST_CASE("coherency from maps") {
    const AttributionMap l = map_of(Grid{{0, 0.2}, {0.7, 1}});
    const CoherencyResult same = coherency_from_maps(l, l);
    CHECK(same.value == doctest::Approx(1.0));
    CHECK_FALSE(same.degenerate);
    Grid inv(2, 2);
    for (std::size_t i = 0; i < 4; ++i) inv[i] = 1.0 - l[i];
    CHECK(coherency_from_maps(l, map_of(inv)).value == doctest::Approx(0.0).scale(1.0));
    const CoherencyResult flat = coherency_from_maps(l, map_of(Grid(2, 2, 0.4)));
    CHECK(flat.value == 0.0);
    CHECK(flat.degenerate);
  }

  TEST_CASE("coherency of a trivial baseline is one") {
    LinearToy model(1, 8, 8, 2);
    const Image x = random_image(1, 8, 8, 3);
    const AttributionFunction half = make_attribution("half");
    const AttributionMap m = half(model, 0, x, 0);
    CHECK(coherency(model, x, m, 0, half, 0).value == doctest::Approx(1.0));
  }

  TEST_CASE("adcc") {
    CHECK(adcc(0.0, 0.0, 1.0) == doctest::Approx(1.0));
    CHECK(adcc(0.5, 0.5, 0.5) == doctest::Approx(0.5));
    CHECK(adcc(0.0, 0.5, 1.0) == doctest::Approx(0.75));
    CHECK(std::isfinite(adcc(1.0, 1.0, 0.0)));
  }

  TEST_CASE("arcc") {
    CHECK(arcc(1.0, 0.0, 1.0) == doctest::Approx(1.0));
    CHECK(arcc(0.6, 0.4, 0.6) == doctest::Approx(0.6));
    const double clamped = arcc(1.0, 0.0, -0.3);
    CHECK(clamped == doctest::Approx(3.0 / (2.0 + 1.0 / kMetricEpsilon)));
    CHECK(clamped < 4e-6);
  }

  TEST_CASE("imputing a single pixel from constant neighbours") {
    Image x(1, 5, 5, 0.3);
    x.at(0, 2, 2) = 0.9;
    PixelMask mask(5, 5);
    mask.set(2, 2);
    CHECK(noisy_linear_imputation(x, mask, noiseless()).at(0, 2, 2) == doctest::Approx(0.3).epsilon(1e-12));
  }

  TEST_CASE("imputation uses direct and diagonal weights") {
    Image x(1, 3, 3, 0.0);
    for (auto [r, c] : {std::pair{0, 1}, {1, 0}, {1, 2}, {2, 1}}) x.at(0, r, c) = 1.0;
    PixelMask mask(3, 3);
    mask.set(1, 1);
    CHECK(noisy_linear_imputation(x, mask, noiseless()).at(0, 1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  TEST_CASE("imputation matches a dense solve") {
    for (int size : {5, 8}) {
      const Image x = random_image(3, size, size, 40 + size);
      PixelMask mask(size, size);
      mask.set(2, 2);
      mask.set(2, 3);
      if (size == 8) {
        Rng rng(5);
        for (int i = 0; i < 20; ++i) mask.set(static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8)));
        mask.set(0, 0);
        mask.set(7, 7);
      }
      const Image got = noisy_linear_imputation(x, mask, noiseless());
      const Image want = dense_impute(x, mask);
      for (std::size_t i = 0; i < got.pixels().size(); ++i)
        CHECK(got.pixels()[i] == doctest::Approx(want.pixels()[i]).epsilon(1e-10));
    }
  }

  TEST_CASE("imputation noise touches only removed pixels") {
    const Image x = random_image(3, 8, 8, 7);
    PixelMask mask(8, 8);
    mask.set(3, 3);
    mask.set(5, 1);
    RoadConfig cfg;
    cfg.noise_std = 0.05;
    const Image a = noisy_linear_imputation(x, mask, cfg, 11);
    const Image b = noisy_linear_imputation(x, mask, cfg, 11);
    const Image c = noisy_linear_imputation(x, mask, cfg, 12);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < 8; ++r)
        for (int col = 0; col < 8; ++col)
          if (!mask(r, col)) CHECK(a.at(ch, r, col) == x.at(ch, r, col));
  }

  TEST_CASE("imputation rejects a fully masked image") {
    const Image x(1, 4, 4, 0.5);
    PixelMask mask(4, 4);
    std::fill(mask.removed.begin(), mask.removed.end(), std::uint8_t{1});
    CHECK_THROWS_AS(noisy_linear_imputation(x, mask, noiseless()), InvalidInput);
    CHECK_THROWS_AS(noisy_linear_imputation(x, PixelMask(3, 4), noiseless()), InvalidInput);
  }

  TEST_CASE("perturbed pixel counts round half away from zero") {
    CHECK(perturbed_count(0.2, 16) == 3);
    CHECK(perturbed_count(0.4, 16) == 6);
    CHECK(perturbed_count(0.6, 16) == 10);
    CHECK(perturbed_count(0.8, 16) == 13);
    CHECK(perturbed_count(0.5, 5) == 3);
  }

  TEST_CASE("road of a constant map is zero") {
    LinearToy model(1, 8, 8, 2);
    Rng rng(3);
    for (double& w : model.weights(0)) w = rng.uniform();
    const Image x = random_image(1, 8, 8, 4);
    CHECK(road(model, x, map_of(Grid(8, 8, 0.6)), 0, RoadConfig{}, 9) == 0.0);
  }

  TEST_CASE("road matches brute-force enumeration on a 4x4 linear model") {
    LinearToy model(1, 4, 4, 2);
    Grid quadrant(4, 4, 0.0);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        quadrant(r, c) = 1.0;
        model.weights(0)[r * 4 + c] = 2.0;
      }
    const Image x = random_image(1, 4, 4, 17);
    const AttributionMap l = map_of(quadrant);

    // MoRF visits the quadrant first; LeRF visits it last. Ties keep row-major order.
    std::vector<int> inside, outside;
    for (int p = 0; p < 16; ++p) (quadrant[p] > 0 ? inside : outside).push_back(p);
    std::vector<int> morf = inside, lerf = outside;
    morf.insert(morf.end(), outside.begin(), outside.end());
    lerf.insert(lerf.end(), inside.begin(), inside.end());

    const RoadConfig cfg = noiseless();
    double total = 0.0;
    for (double k : cfg.fractions) {
      const int count = static_cast<int>(std::floor(k * 16 + 0.5));
      auto score = [&](const std::vector<int>& order) {
        PixelMask mask(4, 4);
        for (int i = 0; i < count; ++i) mask.removed[order[i]] = 1;
        const Image imputed = dense_impute(x, mask);
        return softmax_prob(model.logits({&imputed, 1})[0], 0);
      };
      total += score(lerf) - score(morf);
    }
    const double expected = total / static_cast<double>(cfg.fractions.size());
    const RoadResult got = road_detailed(model, x, l, 0, cfg);
    CHECK(got.score == doctest::Approx(expected).epsilon(1e-10));
    CHECK(got.score > 0.0);
    CHECK(got.lerf.size() == 4);
  }

  TEST_CASE("road matches the brute-force oracle on random 4x4 cases") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      LinearToy model(1, 4, 4, 3);
      Rng rng(100 + seed);
      for (int c = 0; c < 3; ++c)
        for (double& w : model.weights(c)) w = 4.0 * rng.uniform() - 2.0;
      const Image x = random_image(1, 4, 4, 200 + seed);
      Grid g(4, 4);
      for (double& v : g.values()) v = rng.uniform();
      const AttributionMap l = normalize_map(g);
      const int cls = static_cast<int>(seed % 3);
      const RoadConfig cfg = noiseless();
      CHECK(road(model, x, l, cls, cfg) ==
            doctest::Approx(camgauge::testing::road_brute_force(model, x, l, cls, cfg.fractions)).epsilon(1e-12));
    }
  }

  TEST_CASE("road only sees the ranking") {
    LinearToy model(3, 12, 12, 3);
    Rng rng(8);
    for (int c = 0; c < 3; ++c)
      for (double& w : model.weights(c)) w = rng.uniform() - 0.5;
    const Image x = random_image(3, 12, 12, 6);
    Grid g(12, 12);
    for (double& v : g.values()) v = rng.uniform();
    const AttributionMap l = normalize_map(g);
    Grid root(12, 12);
    for (std::size_t i = 0; i < root.size(); ++i) root[i] = std::pow(l[i], 1.0 / 8.0);
    RoadConfig cfg;
    cfg.noise_seed = 4;
    CHECK(road(model, x, l, 2, cfg, 77) == road(model, x, map_of(root), 2, cfg, 77));
    CHECK(complexity(map_of(root)) >= complexity(l));
  }

  TEST_CASE("road config validation") {
    RoadConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.fractions = {0.4, 0.2};
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg.fractions = {0.0, 0.5};
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = RoadConfig{};
    cfg.noise_std = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    // weights over a full interior neighbourhood sum to one
    CHECK(4 * RoadConfig{}.direct_weight + 4 * RoadConfig{}.diagonal_weight == doctest::Approx(1.0));
  }

  TEST_CASE("all-ones baseline fools average drop and complexity") {
    LinearToy model(1, 16, 16, 2);
    Rng rng(12);
    for (double& w : model.weights(1)) w = rng.uniform();
    Image x = random_image(1, 16, 16, 13);
    const AttributionMap m = trivial_cam(TrivialKind::All1s, 16, 16, 0);
    CHECK(complexity(m) == doctest::Approx(1.0 - 1.0 / 256.0));
    CHECK(average_drop(model, x, m, 1) < 0.05);
    x.at(0, 0, 0) = 0.0;  // the zeroed anchor pixel then changes nothing
    CHECK(average_drop(model, x, m, 1) == 0.0);
  }

  TEST_CASE("metric ids and record keys") {
    CHECK(metric_ids() == std::vector<std::string>{"ad", "cmx", "chn", "adcc", "road", "arcc", "cosine"});
    CHECK(to_string(parse_metric_id("arcc")) == "arcc");
    CHECK_THROWS_AS(parse_metric_id("auc"), LookupError);
    MetricRecord a{"img", "m", "gradcam", "stage1", "ad", 0.3, false};
    MetricRecord b = a;
    b.value = 0.9;
    CHECK(a.key() == b.key());
    b.layer_id = "stage2";
    CHECK(a.key() != b.key());
    CHECK(a.key().size() == 16);
  }
}
