#include "scale/unlearn_env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scale/error.hpp"

namespace scale {

Action Action::make(std::size_t layer_rank, std::vector<std::size_t> groups, std::size_t level, std::size_t levels) {
  Action a;
  a.layer_rank = layer_rank;
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  a.groups = std::move(groups);
  a.ratio_level = level;
  a.ratio = static_cast<double>(level) / static_cast<double>(levels);
  return a;
}

namespace {

std::vector<std::size_t> nonzero_in(std::span<const double> p, GroupRange r) {
  std::vector<std::size_t> nz;
  for (std::size_t i = r.begin; i < r.end; ++i)
    if (p[i] != 0.0) nz.push_back(i);
  return nz;
}

}  // namespace

std::size_t prune_smallest(std::span<double> p, GroupRange r, std::size_t count) {
  if (r.end > p.size() || r.begin > r.end) throw IndexError("group range outside the parameter vector");
  std::vector<std::size_t> nonzero = nonzero_in(p, r);
  const std::size_t take = std::min(count, nonzero.size());
  std::stable_sort(nonzero.begin(), nonzero.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(p[a]) < std::abs(p[b]); });
  for (std::size_t k = 0; k < take; ++k) p[nonzero[k]] = 0.0;
  return take;
}

std::size_t sparsify(Model& model, const GroupIndex& idx, std::size_t layer, std::span<const std::size_t> groups,
                     double s) {
  if (!(s > 0.0 && s <= 1.0)) throw DomainError("sparsify: ratio must lie in (0, 1]");
  if (groups.empty()) throw DomainError("sparsify: no groups selected");
  for (std::size_t j : groups) idx.range({layer, j});

  auto p = model.mutable_params(layer);
  std::size_t zeroed = 0;
  for (std::size_t j : groups) {
    const GroupRange& r = idx.range({layer, j});
    // The quota is taken over what is still nonzero, so a repeated action
    // keeps thinning the group geometrically instead of stalling.
    const auto live = static_cast<double>(nonzero_in(p, r).size());
    const auto quota = static_cast<std::size_t>(std::floor(s * live + 1e-9));
    zeroed += prune_smallest(p, r, quota);
  }
  return zeroed;
}

namespace {

void check_groups(const Action& action, const GroupIndex& idx) {
  if (action.layer_rank >= idx.num_layers()) throw IndexError("action names an untracked layer rank");
  if (action.groups.empty()) throw DomainError("action selects no groups");
  for (std::size_t j : action.groups) idx.range({idx.layers[action.layer_rank], j});
}

}  // namespace

double reward_forget(const Action& action, const SensitivityReport& report, const GroupIndex& idx) {
  check_groups(action, idx);
  double mx = 0.0;
  for (std::size_t l : idx.layers) mx = std::max(mx, report.score(l));
  if (mx <= 0.0) return 0.0;
  const double ratio = report.score(idx.layers[action.layer_rank]) / mx;
  return static_cast<double>(action.groups.size()) * ratio * action.ratio;
}

double reward_fresh(const Action& action, const AoiLedger& ledger, const GroupIndex& idx) {
  check_groups(action, idx);
  const std::uint64_t mx = ledger.max_age();
  if (mx == 0) return 0.0;
  const std::size_t layer = idx.layers[action.layer_rank];
  double acc = 0.0;
  for (std::size_t j : action.groups) acc += static_cast<double>(ledger.age({layer, j})) / static_cast<double>(mx);
  return acc / static_cast<double>(action.groups.size()) * action.ratio;
}

Reward reward(const Action& action, const SensitivityReport& report, const AoiLedger& ledger, const GroupIndex& idx,
              double w_f, double w_c) {
  if (w_f < 0.0 || w_c < 0.0) throw DomainError("reward weights must be non-negative");
  Reward r;
  r.forget = reward_forget(action, report, idx);
  r.fresh = reward_fresh(action, ledger, idx);
  r.total = w_f * r.forget + w_c * r.fresh;
  return r;
}

// ---------------------------------------------------------------------------

UnlearnEnv::UnlearnEnv(const Model& base, GroupIndex idx, SensitivityReport report, EnvConfig cfg)
    : base_(&base), idx_(std::move(idx)), report_(std::move(report)), cfg_(cfg), work_(base), ledger_(idx_) {
  if (cfg_.ratio_levels < 1) throw ConfigError("ratio_levels must be >= 1");
  if (cfg_.horizon < 1) throw ConfigError("episode horizon must be >= 1");
}

std::vector<double> UnlearnEnv::reset() {
  work_ = *base_;
  ledger_ = AoiLedger(idx_);
  steps_ = 0;
  done_ = false;
  return state();
}

std::vector<double> UnlearnEnv::state() const { return state_vector(work_, ledger_, idx_); }

double UnlearnEnv::group_sparsity(GroupId id) const {
  const GroupRange& r = idx_.range(id);
  const auto p = work_.params(id.layer);
  std::size_t zeros = 0;
  for (std::size_t i = r.begin; i < r.end; ++i) zeros += p[i] == 0.0 ? 1 : 0;
  return static_cast<double>(zeros) / static_cast<double>(r.size());
}

bool UnlearnEnv::all_groups_capped() const {
  for (const auto& id : idx_.all_groups())
    if (group_sparsity(id) < cfg_.sparsity_cap) return false;
  return true;
}

void UnlearnEnv::check_action(const Action& action) const {
  check_groups(action, idx_);
  if (!(action.ratio > 0.0 && action.ratio <= 1.0)) throw DomainError("action ratio must lie in (0, 1]");
}

StepResult UnlearnEnv::step(const Action& action) {
  if (done_) throw DomainError("env_step called on a finished episode");
  check_action(action);

  StepResult res;
  res.reward = reward(action, report_, ledger_, idx_, cfg_.w_f, cfg_.w_c);

  const std::size_t layer = idx_.layers[action.layer_rank];
  res.zeroed = sparsify(work_, idx_, layer, action.groups, action.ratio);
  std::vector<GroupId> touched;
  for (std::size_t j : action.groups) {
    touched.push_back({layer, j});
    res.transmitted += idx_.range({layer, j}).size();
  }
  ledger_.advance();
  ledger_.touch(touched);
  ++steps_;

  done_ = steps_ >= cfg_.horizon || all_groups_capped();
  res.done = done_;
  res.next_state = state();
  return res;
}

}  // namespace scale
