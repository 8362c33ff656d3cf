#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scale/baselines.hpp"
#include "scale/error.hpp"
#include "support.hpp"

using namespace scale;

TEST_SUITE("baselines") {

TEST_CASE("water filling") {
  const std::vector<std::size_t> even{5, 5, 5}, tight{1, 5, 5};
  CHECK(water_fill(10, even) == std::vector<std::size_t>{4, 3, 3});
  CHECK(water_fill(10, tight) == std::vector<std::size_t>{1, 5, 4});
  CHECK(water_fill(11, tight) == std::vector<std::size_t>{1, 5, 5});
  CHECK(water_fill(0, tight) == std::vector<std::size_t>{0, 0, 0});
  CHECK_THROWS_AS(water_fill(12, tight), DomainError);

  Rng rng(1);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    std::vector<std::size_t> cap(testing::random_size(rng, 1, 10));
    for (auto& x : cap) x = rng.below(30);
    const std::size_t sum = std::accumulate(cap.begin(), cap.end(), std::size_t{0});
    const std::size_t total = sum == 0 ? 0 : rng.below(sum + 1);
    auto give = water_fill(total, cap);
    CHECK(std::accumulate(give.begin(), give.end(), std::size_t{0}) == total);
    for (std::size_t i = 0; i < cap.size(); ++i) {
      CHECK(give[i] <= cap[i]);
      // Max-min fairness: an unsaturated slot is within one of every other.
      if (give[i] < cap[i])
        for (std::size_t j = 0; j < cap.size(); ++j) CHECK(give[j] <= give[i] + 1);
    }
  }
}

TEST_CASE("uniform baseline") {
  Model m = Model::mlp(16, {64, 32, 16}, 4, 3);
  const std::size_t G = 8;
  SUBCASE("zero budget") {
    auto r = baseline_uniform(m, 0, G);
    CHECK(r.model == m);
    CHECK(r.zeroed == 0);
    CHECK(r.transmitted == 0);
  }
  SUBCASE("full budget") {
    std::size_t nnz = 0;
    for (const auto& l : m.all_params()) nnz += static_cast<std::size_t>(std::count_if(l.begin(), l.end(), [](double v) { return v != 0.0; }));
    auto r = baseline_uniform(m, nnz, G);
    for (const auto& l : r.model.all_params()) CHECK(std::all_of(l.begin(), l.end(), [](double v) { return v == 0.0; }));
    CHECK(r.zeroed == nnz);
    CHECK_THROWS_AS(baseline_uniform(m, nnz + 1, G), DomainError);
  }
  SUBCASE("equal split across layers") {
    Rng rng(2);
    for (std::size_t c = 0; c < testing::kCases; ++c) {
      Model r_m = testing::random_mlp(rng, 12);
      const std::size_t g = testing::random_size(rng, 1, 8);
      const std::size_t budget = rng.below(r_m.total_params() / 2 + 1);
      auto r = baseline_uniform(r_m, budget, g);
      CHECK(r.zeroed == budget);
      // Among layers with room left, counts differ by at most G.
      std::vector<std::size_t> open;
      for (std::size_t l = 0; l < r_m.num_layers(); ++l) {
        auto p = r.model.params(l);
        if (std::count(p.begin(), p.end(), 0.0) < static_cast<std::ptrdiff_t>(p.size())) open.push_back(r.zeroed_per_layer[l]);
      }
      if (!open.empty()) CHECK(*std::max_element(open.begin(), open.end()) - *std::min_element(open.begin(), open.end()) <= g);
    }
  }
}

TEST_CASE("gradient ascent baseline") {
  Dataset ds = gen_synthetic(3, 4, 10, 0.1, 5);
  Model m = Model::mlp(4, {8}, 3, 6);
  std::vector<std::size_t> forget{0, 1, 2, 3, 10, 11};

  SUBCASE("zero steps") {
    auto r = baseline_grad_ascent(m, ds, forget, 0, 0.1);
    CHECK(r.model == m);
    CHECK(r.projections == 0);
  }
  SUBCASE("small steps raise the forget loss") {
    auto r = baseline_grad_ascent(m, ds, forget, 5, 0.01);
    REQUIRE(r.losses.size() == 6);
    for (std::size_t i = 1; i < r.losses.size(); ++i) CHECK(r.losses[i] >= r.losses[i - 1]);
    CHECK(r.projections == 0);
  }
  SUBCASE("large steps are projected back") {
    const auto norm = [](const Model& x) {
      long double s = 0;
      for (const auto& l : x.all_params())
        for (double v : l) s += static_cast<long double>(v) * v;
      return static_cast<double>(std::sqrt(s));
    };
    const double radius = 2.0 * norm(m);
    const Batch fb = make_batch(ds, forget);
    auto r = baseline_grad_ascent(m, ds, forget, 4, 50.0);
    CHECK(r.projections == 4);
    REQUIRE(r.losses.size() == 5);
    CHECK(r.losses[0] == loss(m, fb));
    CHECK(r.losses.back() == doctest::Approx(loss(r.model, fb)).epsilon(1e-12));
    CHECK(norm(r.model) == doctest::Approx(radius).epsilon(1e-12));

    // Replay one step by hand: ascend, then rescale onto the sphere.
    auto one = baseline_grad_ascent(m, ds, forget, 1, 50.0);
    const auto g = loss_and_grads(m, fb).grads;
    std::vector<std::vector<double>> step(m.num_layers());
    long double sq = 0;
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      auto p = m.params(l);
      for (std::size_t i = 0; i < p.size(); ++i) {
        step[l].push_back(p[i] + 50.0 * g.layers[l][i]);
        sq += static_cast<long double>(step[l].back()) * step[l].back();
      }
    }
    const double f = radius / static_cast<double>(std::sqrt(sq));
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      auto got = one.model.params(l);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(step[l][i] * f).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(baseline_grad_ascent(m, ds, std::vector<std::size_t>{}, 1, 0.1), DomainError);
    CHECK_THROWS_AS(baseline_grad_ascent(m, ds, forget, 1, -1.0), DomainError);
  }
}

}
