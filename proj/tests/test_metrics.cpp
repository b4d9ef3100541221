#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "hbsim/metrics.hpp"

using namespace hbsim;

TEST_CASE("fragmentation ratio", "[metrics]") {
  CHECK(fragmentation_ratio({5, 5, 5}, 10) == 0.0);
  CHECK(fragmentation_ratio({10, 0}, 10) == 1.0);
  CHECK(fragmentation_ratio({3, 7, 5}, 8) == 0.5);
  CHECK(fragmentation_ratio({}, 8) == 0.0);
  CHECK_THROWS_AS(fragmentation_ratio({1}, 0), std::invalid_argument);
}

TEST_CASE("waste ratio", "[metrics]") {
  CHECK(waste_ratio(2048, 768) == 0.625);
  CHECK(waste_ratio(0, 0) == 0.0);
  CHECK(waste_ratio(10, 10) == 0.0);
  CHECK_THROWS_AS(waste_ratio(1, 2), std::invalid_argument);
}

TEST_CASE("imbalance ratio", "[metrics]") {
  CHECK(imbalance_ratio({2, 2, 2, 2}) == 0.0);
  CHECK(imbalance_ratio({7, 0, 0, 0}) == 1.0);
  CHECK(imbalance_ratio({0, 0}) == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 100);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(16);
    for (auto& x : v) x = u(rng);
    double hi = v[0], lo = v[0], sum = 0;
    for (double x : v) {
      hi = std::max(hi, x);
      lo = std::min(lo, x);
      sum += x;
    }
    CHECK(imbalance_ratio(v) == Catch::Approx((hi - lo) / sum).epsilon(1e-12));
  }
  CHECK_THROWS_AS(imbalance_ratio({-1.0}), std::invalid_argument);
}

TEST_CASE("nearest-rank percentile", "[metrics]") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(1));
  CHECK(percentile(v, 50) == 50);
  CHECK(percentile(v, 99) == 99);
  CHECK(percentile(v, 100) == 100);
  CHECK(percentile({4.5}, 50) == 4.5);
  CHECK(percentile({4.5}, 99) == 4.5);
  CHECK(percentile({1, 2, 3}, 50) == 2);
  CHECK_THROWS_AS(percentile({}, 50), std::invalid_argument);
  CHECK_THROWS_AS(percentile({1}, 0), std::invalid_argument);
}
