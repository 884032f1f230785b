#include <doctest.h>

#include <cmath>
#include <vector>

#include "camgauge/stats.hpp"

using namespace camgauge;

TEST_SUITE("stats") {
  TEST_CASE("mean and population standard deviation") {
    const std::vector<double> x{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(stats::mean(x) == doctest::Approx(5.0));
    CHECK(stats::stddev(x) == doctest::Approx(2.0));
  }

  TEST_CASE("pearson of affine relations") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> y{3, 5, 7, 9, 11};
    const std::vector<double> z{10, 8, 6, 4, 2};
    CHECK(*stats::pearson(x, y) == doctest::Approx(1.0));
    CHECK(*stats::pearson(x, z) == doctest::Approx(-1.0));
  }

  TEST_CASE("pearson hand-computed value") {
    // dx = {-1, 0, 1}, dy = {-1, 1, 0}: r = 1 / (sqrt(2) * sqrt(2)) = 0.5
    const std::vector<double> x{1, 2, 3};
    const std::vector<double> y{1, 3, 2};
    CHECK(*stats::pearson(x, y) == doctest::Approx(0.5));
  }

  TEST_CASE("pearson is undefined for constant or short series") {
    const std::vector<double> c{1, 1, 1};
    const std::vector<double> x{1, 2, 3};
    CHECK_FALSE(stats::pearson(c, x).has_value());
    CHECK_FALSE(stats::pearson(x, c).has_value());
    CHECK_FALSE(stats::pearson(std::vector<double>{1}, std::vector<double>{2}).has_value());
    CHECK_FALSE(stats::pearson(x, std::vector<double>{1, 2}).has_value());
  }

  TEST_CASE("average ranks share ties") {
    const std::vector<double> x{10, 20, 20, 5};
    CHECK(stats::average_ranks(x) == std::vector<double>{2, 3.5, 3.5, 1});
  }

  TEST_CASE("spearman is rank-based") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> y{1, 4, 9, 16, 1000};
    CHECK(*stats::spearman(x, y) == doctest::Approx(1.0));
    const std::vector<double> u{1, 2, 3, 4};
    const std::vector<double> v{1, 3, 2, 4};
    // d = {0, 1, 1, 0}: 1 - 6 * 2 / (4 * 15) = 0.8
    CHECK(*stats::spearman(u, v) == doctest::Approx(0.8));
  }
}
