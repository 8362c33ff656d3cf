#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scale/error.hpp"
#include "scale/ppo.hpp"
#include "support.hpp"

using namespace scale;

namespace {

double log_softmax_at(std::span<const double> z, std::size_t i) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return z[i] - mx - std::log(s);
}

double log_sigmoid(double z) { return -std::log1p(std::exp(-z)); }

// Direct evaluation of the factorised log-probability.
double reference_log_prob(const std::vector<double>& z, const PolicyLayout& lay, const Action& a) {
  std::span<const double> all(z);
  double lp = log_softmax_at(all.subspan(0, lay.num_layers()), a.layer_rank);
  const std::size_t off = lay.group_offset(a.layer_rank);
  for (std::size_t j = 0; j < lay.groups_per_layer[a.layer_rank]; ++j) {
    const bool on = std::find(a.groups.begin(), a.groups.end(), j) != a.groups.end();
    lp += on ? log_sigmoid(z[off + j]) : log_sigmoid(-z[off + j]);
  }
  return lp + log_softmax_at(all.subspan(lay.ratio_offset(), lay.ratio_levels), a.ratio_level - 1);
}

PolicyLayout small_layout(std::vector<std::size_t> groups, std::size_t levels) {
  PolicyLayout l;
  l.groups_per_layer = std::move(groups);
  l.ratio_levels = levels;
  l.state_dim = 3 * l.total_groups();
  return l;
}

SensitivityReport flat_report(std::size_t layers, std::vector<std::size_t> selected) {
  SensitivityReport r;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerScore s;
    s.layer = l;
    s.combined = 1.0 + static_cast<double>(l);
    r.layers.push_back(s);
  }
  r.selected = std::move(selected);
  return r;
}

}  // namespace

TEST_SUITE("ppo") {

TEST_CASE("generalised advantage estimation") {
  SUBCASE("single transition") {
    const std::vector<double> r{2.5}, v{0.0};
    const std::vector<char> d{1};
    auto e = gae(r, v, d, 1.0, 1.0);
    CHECK(e.advantages[0] == 2.5);
    CHECK(e.returns[0] == 2.5);
  }
  SUBCASE("two constant rewards") {
    const std::vector<double> r{1.0, 1.0}, v{0.0, 0.0};
    const std::vector<char> d{0, 1};
    auto e = gae(r, v, d, 0.5, 1.0);
    CHECK(e.advantages[0] == doctest::Approx(1.5));
    CHECK(e.advantages[1] == doctest::Approx(1.0));
  }
  SUBCASE("episode boundaries cut the recursion") {
    const std::vector<double> r{1.0, 1.0, 1.0}, v{0.2, 0.3, 0.4};
    const std::vector<char> d{1, 0, 0};
    auto e = gae(r, v, d, 0.9, 0.8);
    CHECK(e.advantages[0] == doctest::Approx(0.8));
    const double d2 = 1.0 - 0.4, d1 = 1.0 + 0.9 * 0.4 - 0.3;
    CHECK(e.advantages[2] == doctest::Approx(d2));
    CHECK(e.advantages[1] == doctest::Approx(d1 + 0.9 * 0.8 * d2));
    for (std::size_t i = 0; i < 3; ++i) CHECK(e.returns[i] == doctest::Approx(e.advantages[i] + v[i]));
  }
  SUBCASE("misaligned inputs") {
    const std::vector<double> r{1.0, 1.0}, v{0.0};
    const std::vector<char> d{0, 1};
    CHECK_THROWS_AS(gae(r, v, d, 0.9, 0.9), ShapeError);
  }
}

TEST_CASE("advantage normalisation") {
  Rng rng(1);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    auto a = testing::random_vector(rng, testing::random_size(rng, 2, 64), -10.0, 10.0);
    normalize_advantages(a);
    const double n = static_cast<double>(a.size());
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var / n) - 1.0) < 1e-6);
  }
  std::vector<double> flat(5, 3.0);
  normalize_advantages(flat);
  for (double x : flat) CHECK(x == 0.0);
}

TEST_CASE("log-probabilities factorise over the heads") {
  Rng rng(2);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    std::vector<std::size_t> groups(testing::random_size(rng, 1, 4));
    for (auto& g : groups) g = testing::random_size(rng, 1, 6);
    const auto lay = small_layout(groups, testing::random_size(rng, 1, 10));
    auto z = testing::random_vector(rng, lay.head_size(), -3.0, 3.0);
    auto state = testing::random_vector(rng, lay.state_dim, 0.0, 1.0);
    auto sa = sample_action(z, lay, state, rng);
    CHECK(sa.log_prob <= 0.0);
    CHECK(sa.log_prob == doctest::Approx(reference_log_prob(z, lay, sa.action)).epsilon(1e-9));
    auto parts = action_log_prob(z, lay, sa.action);
    CHECK(parts.total() == doctest::Approx(parts.layer + parts.groups + parts.ratio));
    CHECK(!sa.action.groups.empty());
    CHECK(sa.action.ratio > 0.0);
    CHECK(sa.action.ratio <= 1.0);
  }
}

TEST_CASE("uniform logits sample the layer head uniformly") {
  const auto lay = small_layout({3, 3, 3, 3}, 10);
  const std::vector<double> z(lay.head_size(), 0.0);
  const std::vector<double> state(lay.state_dim, 0.0);
  Rng rng(3);
  std::vector<double> count(4, 0.0);
  const double n = 10000.0;
  for (int i = 0; i < 10000; ++i) count[sample_action(z, lay, state, rng).action.layer_rank] += 1.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (double c : count) CHECK(std::abs(c - n / 4.0) <= 3.0 * sigma);
}

TEST_CASE("saturated logits make sampling deterministic") {
  const auto lay = small_layout({2, 4}, 5);
  std::vector<double> z(lay.head_size(), -50.0);
  z[1] = 50.0;                                    // layer rank 1
  z[lay.group_offset(1) + 0] = 50.0;               // groups 0 and 2 on
  z[lay.group_offset(1) + 2] = 50.0;
  z[lay.ratio_offset() + 3] = 50.0;               // level 4
  const std::vector<double> state(lay.state_dim, 0.0);
  const Action mode = mode_action(z, lay, state);
  CHECK(mode.layer_rank == 1);
  CHECK(mode.groups == std::vector<std::size_t>{0, 2});
  CHECK(mode.ratio_level == 4);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    auto sa = sample_action(z, lay, state, rng);
    CHECK(sa.action.layer_rank == mode.layer_rank);
    CHECK(sa.action.groups == mode.groups);
    CHECK(sa.action.ratio_level == mode.ratio_level);
  }
}

TEST_CASE("empty masks are coerced to the oldest group") {
  const auto lay = small_layout({3, 2}, 2);
  std::vector<double> z(lay.head_size(), -50.0);
  z[0] = 50.0;
  std::vector<double> state(lay.state_dim, 0.0);
  state[3 * 1] = 1.0;  // group 1 of rank 0 is the oldest
  state[3 * 2] = 0.5;
  Rng rng(5);
  auto sa = sample_action(z, lay, state, rng);
  CHECK(sa.action.groups == std::vector<std::size_t>{1});
  CHECK(sa.log_prob == doctest::Approx(action_log_prob(z, lay, sa.action).total()));
  CHECK(mode_action(z, lay, state).groups == std::vector<std::size_t>{1});

  // Ties between logits and at p = 1/2 resolve to the lowest index / "off".
  std::vector<double> flat(lay.head_size(), 0.0);
  const Action m = mode_action(flat, lay, state);
  CHECK(m.layer_rank == 0);
  CHECK(m.ratio_level == 1);
  CHECK(m.groups == std::vector<std::size_t>{1});
}

TEST_CASE("logit gradients match finite differences") {
  Rng rng(6);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    const auto lay = small_layout({testing::random_size(rng, 1, 4), testing::random_size(rng, 1, 4)}, 4);
    auto z = testing::random_vector(rng, lay.head_size(), -2.0, 2.0);
    auto state = testing::random_vector(rng, lay.state_dim, 0.0, 1.0);
    const Action a = sample_action(z, lay, state, rng).action;
    const double cl = rng.uniform(-1, 1), ce = rng.uniform(-1, 1);
    std::vector<double> g(z.size(), 0.0);
    accumulate_logit_grad(z, lay, a, cl, ce, g);
    auto f = [&](const std::vector<double>& x) {
      return cl * action_log_prob(x, lay, a).total() + ce * action_entropy(x, lay, a.layer_rank);
    };
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto up = z, dn = z;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      CHECK(g[i] == doctest::Approx((f(up) - f(dn)) / 2e-5).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("ppo_update") {
  const auto lay = small_layout({2, 2}, 3);
  PpoConfig cfg;
  cfg.hidden = 16;
  Rng rng(7);

  auto collect = [&](PpoAgent& agent, std::size_t n, bool same_value) {
    std::vector<Transition> buf;
    for (std::size_t i = 0; i < n; ++i) {
      auto s = testing::random_vector(rng, lay.state_dim, 0.0, 1.0);
      auto sa = policy_sample(agent.policy, s, rng);
      const double r = rng.uniform(0.0, 1.0);
      buf.push_back(Transition{s, sa.action, r, s, true, sa.log_prob, same_value ? r : agent.value.value(s)});
    }
    return buf;
  };

  SUBCASE("first pass ratio is one") {
    PpoAgent agent(make_policy(lay, 16, 1), make_value(lay.state_dim, 16, 2), 3e-4, 3e-4);
    auto buf = collect(agent, 32, false);
    auto st = ppo_update(agent, buf, cfg, rng);
    CHECK(st.first_epoch_ratio_dev < 1e-12);
    CHECK(buf.empty());
    CHECK(st.minibatches == cfg.epochs * 4);
  }
  SUBCASE("zero advantages leave only the entropy term") {
    PpoAgent agent(make_policy(lay, 16, 1), make_value(lay.state_dim, 16, 2), 3e-4, 3e-4);
    const Model before = agent.policy.net;
    auto buf = collect(agent, 16, true);
    PpoConfig no_entropy = cfg;
    no_entropy.entropy_coef = 0.0;
    ppo_update(agent, buf, no_entropy, rng);
    CHECK(agent.policy.net == before);

    buf = collect(agent, 16, true);
    ppo_update(agent, buf, cfg, rng);
    CHECK(!(agent.policy.net == before));
  }
  SUBCASE("empty buffer") {
    PpoAgent agent(make_policy(lay, 16, 1), make_value(lay.state_dim, 16, 2), 3e-4, 3e-4);
    std::vector<Transition> empty;
    CHECK_THROWS_AS(ppo_update(agent, empty, cfg, rng), DomainError);
  }
}

TEST_CASE("two-armed bandit converges") {
  // One-step episodes: arm 0 (layer rank 0) pays 1, arm 1 pays 0.
  const auto lay = small_layout({1, 1}, 1);
  PpoConfig cfg;
  cfg.hidden = 16;
  cfg.actor_lr = 3e-3;
  cfg.critic_lr = 3e-3;
  PpoAgent agent(make_policy(lay, cfg.hidden, 11), make_value(lay.state_dim, cfg.hidden, 12), cfg.actor_lr,
                 cfg.critic_lr);
  const std::vector<double> state(lay.state_dim, 0.5);
  Rng rng(13);
  for (int update = 0; update < 200; ++update) {
    std::vector<Transition> buf;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      auto sa = policy_sample(agent.policy, state, rng);
      const double r = sa.action.layer_rank == 0 ? 1.0 : 0.0;
      buf.push_back(Transition{state, sa.action, r, state, true, sa.log_prob, agent.value.value(state)});
    }
    ppo_update(agent, buf, cfg, rng);
  }
  const auto z = agent.policy.logits(state);
  const double p0 = std::exp(log_softmax_at(std::span<const double>(z).subspan(0, 2), 0));
  CHECK(p0 > 0.95);
}

TEST_CASE("train_unlearner and deploy") {
  Model m = Model::mlp(4, {6, 5}, 3, 21);
  auto report = flat_report(m.num_layers(), {2, 0});
  auto idx = partition_groups(m, report.selected, 3);
  EnvConfig env;
  env.horizon = 6;
  PpoConfig cfg;
  cfg.hidden = 16;
  cfg.episodes = 12;
  cfg.epochs = 2;

  SUBCASE("zero episodes") {
    cfg.episodes = 0;
    auto res = train_unlearner(m, report, idx, env, cfg, 5);
    CHECK(res.curve.empty());
    CHECK(res.updates.empty());
  }
  SUBCASE("rewards are bounded, updates happen and training is reproducible") {
    auto a = train_unlearner(m, report, idx, env, cfg, 5);
    auto b = train_unlearner(m, report, idx, env, cfg, 5);
    REQUIRE(a.curve.size() == 12);
    const double bound = static_cast<double>(env.horizon) * (env.w_f * static_cast<double>(idx.max_groups()) + env.w_c);
    for (std::size_t e = 0; e < a.curve.size(); ++e) {
      CHECK(std::isfinite(a.curve[e].total_reward));
      CHECK(a.curve[e].total_reward >= 0.0);
      CHECK(a.curve[e].total_reward <= bound);
      CHECK(a.curve[e].total_reward == b.curve[e].total_reward);
    }
    CHECK(!a.updates.empty());
    CHECK(a.agent.policy.net == b.agent.policy.net);
    for (const auto& u : a.updates) CHECK(u.first_epoch_ratio_dev < 1e-12);
  }
  SUBCASE("deployment") {
    auto res = train_unlearner(m, report, idx, env, cfg, 5);
    auto none = deploy(res.agent.policy, m, report, idx, env, 0);
    CHECK(none.model == m);
    CHECK(none.actions.empty());

    auto dep = deploy(res.agent.policy, m, report, idx, env, 10);
    CHECK(dep.actions.size() <= 10);
    CHECK(dep.aoi.size() == dep.actions.size());
    std::size_t zeroed = 0;
    for (const auto& a : dep.actions) {
      CHECK(std::find(report.selected.begin(), report.selected.end(), a.layer) != report.selected.end());
      zeroed += a.zeroed;
    }
    CHECK(zeroed == dep.zeroed);
    for (std::size_t l = 0; l < m.num_layers(); ++l)
      if (std::find(report.selected.begin(), report.selected.end(), l) == report.selected.end())
        CHECK(dep.model.layer_view(l) == m.layer_view(l));
  }
}

}
