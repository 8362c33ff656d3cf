#pragma once

// The sparsification MDP.
//
// State: state_vector() over the sensitive layers' groups.
// Action: (sensitive layer, nonempty subset of its groups, ratio level k),
//         with sparsification ratio s = k / K.
// Reward: w_f * R_f + w_c * R_c, evaluated on the ledger *before* the
//         acted-on groups are refreshed.
// Step:   reward -> magnitude-prune the groups -> advance clock -> touch.

#include <cstddef>
#include <span>
#include <vector>

#include "scale/aoi.hpp"
#include "scale/model.hpp"
#include "scale/sensitivity.hpp"

namespace scale {

struct Action {
  /// Index into GroupIndex::layers.
  std::size_t layer_rank = 0;
  /// Sorted group indices within that layer.
  std::vector<std::size_t> groups;
  /// 1..K
  std::size_t ratio_level = 1;
  double ratio = 0.0;

  static Action make(std::size_t layer_rank, std::vector<std::size_t> groups, std::size_t level, std::size_t levels);
};

/// Zeroes up to `count` smallest-magnitude nonzero entries of p[r.begin, r.end)
/// (ties: lower index first). Returns how many were zeroed.
std::size_t prune_smallest(std::span<double> p, GroupRange r, std::size_t count);

/// Zeroes the floor(s * nnz(W_{l,j})) smallest-magnitude nonzero entries of
/// each selected group (ties: lower index first). Returns the number of
/// coordinates zeroed.
std::size_t sparsify(Model& model, const GroupIndex& idx, std::size_t layer, std::span<const std::size_t> groups,
                     double s);

/// Sum over selected groups of (S_l / max_{L_s} S) * s.
double reward_forget(const Action& action, const SensitivityReport& report, const GroupIndex& idx);

/// Mean over selected groups of (A_{l,j} / max_{all} A) * s; 0 when every age is 0.
double reward_fresh(const Action& action, const AoiLedger& ledger, const GroupIndex& idx);

struct Reward {
  double forget = 0.0;
  double fresh = 0.0;
  double total = 0.0;
};

Reward reward(const Action& action, const SensitivityReport& report, const AoiLedger& ledger, const GroupIndex& idx,
              double w_f, double w_c);

struct EnvConfig {
  double w_f = 0.7;
  double w_c = 0.3;
  /// Steps per episode (T_collect).
  std::size_t horizon = 32;
  double sparsity_cap = 0.95;
  std::size_t ratio_levels = 10;
};

struct StepResult {
  std::vector<double> next_state;
  Reward reward;
  bool done = false;
  std::size_t zeroed = 0;
  /// Scalars in the acted-on groups (what a delta broadcast would carry).
  std::size_t transmitted = 0;
};

class UnlearnEnv {
 public:
  UnlearnEnv(const Model& base, GroupIndex idx, SensitivityReport report, EnvConfig cfg);

  /// Fresh copy of the base model and a fresh ledger; returns the state.
  std::vector<double> reset();
  StepResult step(const Action& action);

  const Model& model() const { return work_; }
  const AoiLedger& ledger() const { return ledger_; }
  const GroupIndex& groups() const { return idx_; }
  const SensitivityReport& report() const { return report_; }
  const EnvConfig& config() const { return cfg_; }
  std::vector<double> state() const;
  std::size_t state_dim() const { return 3 * idx_.total_groups(); }
  bool done() const { return done_; }
  std::size_t steps_taken() const { return steps_; }

  /// Fraction of zero coordinates in a group.
  double group_sparsity(GroupId id) const;

  /// Throws unless the action addresses existing groups with s in (0, 1].
  void check_action(const Action& action) const;

 private:
  bool all_groups_capped() const;

  const Model* base_;
  GroupIndex idx_;
  SensitivityReport report_;
  EnvConfig cfg_;
  Model work_;
  AoiLedger ledger_;
  std::size_t steps_ = 0;
  bool done_ = false;
};

}  // namespace scale
