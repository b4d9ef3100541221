#include <catch_amalgamated.hpp>

#include <random>

#include "hbsim/norm_stats.hpp"
#include "test_support.hpp"

using namespace hbsim;

namespace {

struct Direct {
  double mean, var, sq;
};

Direct direct_stats(const std::vector<double>& x) {
  double s = 0, sq = 0;
  for (double v : x) {
    s += v;
    sq += v * v;
  }
  const double mean = s / static_cast<double>(x.size());
  double acc = 0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return {mean, acc / static_cast<double>(x.size()), sq};
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("merge norm stats: two-point symmetry", "[norm]") {
  NormStats<double> a{4, 0.0, 0.0, 0.0};
  NormStats<double> b{4, 2.0, 0.0, 16.0};
  auto m = merge_norm_stats(a, b);
  CHECK(m.n == 8);
  CHECK(m.mean == 1.0);
  CHECK(m.var == 1.0);
  CHECK(m.sq_sum == 16.0);
}

TEST_CASE("merge norm stats: equal means keep the mean", "[norm]") {
  NormStats<double> a{3, 1.5, 0.25, 3 * (0.25 + 2.25)};
  NormStats<double> b{7, 1.5, 4.0, 7 * (4.0 + 2.25)};
  auto m = merge_norm_stats(a, b);
  CHECK(m.mean == 1.5);
  CHECK(m.var == Catch::Approx((3 * 0.25 + 7 * 4.0) / 10));
}

TEST_CASE("merge norm stats: empty operand rejected", "[norm]") {
  CHECK_THROWS_AS(merge_norm_stats(NormStats<double>{}, NormStats<double>{1, 0, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("merge norm stats: any split reproduces direct statistics", "[norm][property]") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<std::size_t> len(2, 1024);
    const std::size_t n = len(rng);
    const double offset = std::uniform_real_distribution<double>(-10, 10)(rng);
    auto x = hbsim::testing::random_vec(rng, n, 3.0);
    for (double& v : x) v += offset;
    const auto ref = direct_stats(x);
    for (int split = 0; split < 3; ++split) {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
      auto a = NormStats<double>::of(std::span<const double>(x).first(k));
      auto b = NormStats<double>::of(std::span<const double>(x).subspan(k));
      auto m = merge_norm_stats(a, b);
      CHECK(m.n == n);
      CHECK(close(m.mean, ref.mean, 1e-12));
      CHECK(close(m.var, ref.var, 1e-12));
      CHECK(close(m.sq_sum, ref.sq, 1e-12));
      CHECK(close(m.sq_sum, static_cast<double>(n) * (m.var + m.mean * m.mean), 1e-12));
    }
  }
}

TEST_CASE("merge norm stats: multiway tree reduction across shards", "[norm][property]") {
  std::mt19937_64 rng(3);
  auto x = hbsim::testing::random_vec(rng, 4096, 1.0);
  const auto ref = direct_stats(x);
  std::vector<NormStats<double>> shards;
  for (std::size_t i = 0; i < 16; ++i) {
    shards.push_back(NormStats<double>::of(std::span<const double>(x).subspan(i * 256, 256)));
  }
  while (shards.size() > 1) {
    std::vector<NormStats<double>> next;
    for (std::size_t i = 0; i + 1 < shards.size(); i += 2) next.push_back(merge_norm_stats(shards[i], shards[i + 1]));
    shards = next;
  }
  CHECK(close(shards[0].mean, ref.mean, 1e-12));
  CHECK(close(shards[0].var, ref.var, 1e-12));
}
