#include "scale/baselines.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "scale/aoi.hpp"
#include "scale/error.hpp"
#include "scale/unlearn_env.hpp"

namespace scale {

std::vector<std::size_t> water_fill(std::size_t total, std::span<const std::size_t> capacity) {
  const std::size_t cap_sum = std::accumulate(capacity.begin(), capacity.end(), std::size_t{0});
  if (total > cap_sum) {
    throw DomainError("budget " + std::to_string(total) + " exceeds capacity " + std::to_string(cap_sum));
  }
  // Find the highest common level L with sum(min(cap, L)) <= total, then
  // hand the leftover out one each to the lowest-index slots above L.
  const auto filled = [&](std::size_t level) {
    std::size_t s = 0;
    for (std::size_t c : capacity) s += std::min(c, level);
    return s;
  };
  std::size_t lo = 0, hi = total;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (filled(mid) <= total) lo = mid; else hi = mid - 1;
  }
  std::vector<std::size_t> give(capacity.size());
  std::size_t leftover = total - filled(lo);
  for (std::size_t i = 0; i < capacity.size(); ++i) {
    give[i] = std::min(capacity[i], lo);
    if (leftover > 0 && capacity[i] > lo) {
      ++give[i];
      --leftover;
    }
  }
  return give;
}

namespace {

std::size_t count_nonzero(std::span<const double> p, GroupRange r) {
  std::size_t n = 0;
  for (std::size_t i = r.begin; i < r.end; ++i) n += p[i] != 0.0 ? 1 : 0;
  return n;
}

}  // namespace

UniformResult baseline_uniform(const Model& model, std::size_t budget, std::size_t groups_per_layer) {
  std::vector<std::size_t> layers(model.num_layers());
  std::iota(layers.begin(), layers.end(), std::size_t{0});
  const GroupIndex idx = partition_groups(model, layers, groups_per_layer);

  std::vector<std::vector<std::size_t>> group_cap(layers.size());
  std::vector<std::size_t> layer_cap(layers.size(), 0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const auto& r : idx.ranges[l]) {
      group_cap[l].push_back(count_nonzero(model.params(l), r));
      layer_cap[l] += group_cap[l].back();
    }
  }

  UniformResult res{model, 0, 0, std::vector<std::size_t>(layers.size(), 0)};
  const auto per_layer = water_fill(budget, layer_cap);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto per_group = water_fill(per_layer[l], group_cap[l]);
    auto p = res.model.mutable_params(l);
    for (std::size_t j = 0; j < per_group.size(); ++j) {
      if (per_group[j] == 0) continue;
      const std::size_t z = prune_smallest(p, idx.ranges[l][j], per_group[j]);
      res.zeroed_per_layer[l] += z;
      res.zeroed += z;
      res.transmitted += idx.ranges[l][j].size();
    }
  }
  return res;
}

AscentResult baseline_grad_ascent(const Model& model, const Dataset& ds, std::span<const std::size_t> forget,
                                  std::size_t steps, double eta_u) {
  if (forget.empty()) throw DomainError("gradient ascent needs a nonempty D_u");
  if (!(eta_u >= 0.0) || !std::isfinite(eta_u)) throw DomainError("eta_u must be finite and non-negative");
  const Batch batch = make_batch(ds, forget);

  auto norm_of = [](const Model& m) {
    double s = 0.0;
    for (const auto& layer : m.all_params())
      for (double v : layer) s += v * v;
    return std::sqrt(s);
  };
  const double radius = 2.0 * norm_of(model);

  AscentResult res{model, {}, 0};
  for (std::size_t step = 0; step < steps; ++step) {
    LossAndGrads lg = loss_and_grads(res.model, batch);
    if (step == 0) res.losses.push_back(lg.loss);
    sgd_step(res.model, lg.grads, -eta_u);
    for (std::size_t l = 0; l < res.model.num_layers(); ++l)
      for (double v : res.model.params(l))
        if (!std::isfinite(v)) {
          throw NumericError("gradient ascent diverged at step " + std::to_string(step + 1) + ", layer " +
                                 std::to_string(l),
                             static_cast<int>(l));
        }
    const double n = norm_of(res.model);
    if (n > radius) {
      const double f = radius / n;
      for (std::size_t l = 0; l < res.model.num_layers(); ++l)
        for (double& v : res.model.mutable_params(l)) v *= f;
      ++res.projections;
    }
    res.losses.push_back(loss(res.model, batch));
  }
  return res;
}

}  // namespace scale
