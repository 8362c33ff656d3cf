#pragma once

// From-scratch PPO over the factored action space of UnlearnEnv.
//
// The policy network emits one logit vector laid out as
//   [ layer logits (|L_s|) | group logits (sum_l G_l) | ratio logits (K) ].
// The action distribution factorises as
//   pi(a|h) = Cat(layer) * prod_{j in chosen layer} Bern(group j) * Cat(ratio),
// so log-probabilities and their logit gradients are exact.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scale/model.hpp"
#include "scale/rng.hpp"
#include "scale/unlearn_env.hpp"

namespace scale {

struct PolicyLayout {
  std::vector<std::size_t> groups_per_layer;
  std::size_t ratio_levels = 10;
  std::size_t state_dim = 0;

  std::size_t num_layers() const { return groups_per_layer.size(); }
  std::size_t total_groups() const;
  /// Offset of a layer's first group logit within the logit vector.
  std::size_t group_offset(std::size_t rank) const;
  std::size_t ratio_offset() const { return num_layers() + total_groups(); }
  std::size_t head_size() const { return ratio_offset() + ratio_levels; }

  static PolicyLayout for_groups(const GroupIndex& idx, std::size_t ratio_levels);
};

struct LogProbParts {
  double layer = 0.0;
  double groups = 0.0;
  double ratio = 0.0;

  double total() const { return layer + groups + ratio; }
};

LogProbParts action_log_prob(std::span<const double> logits, const PolicyLayout& layout, const Action& action);

/// Entropy of the layer head, the chosen layer's group heads, and the ratio head.
double action_entropy(std::span<const double> logits, const PolicyLayout& layout, std::size_t layer_rank);

/// grad += c_logp * d log pi(a) / d logits + c_ent * d H / d logits.
void accumulate_logit_grad(std::span<const double> logits, const PolicyLayout& layout, const Action& action,
                           double c_logp, double c_ent, std::span<double> grad);

/// Sampling from logits. `state` supplies the A_norm column used to coerce
/// an empty group mask onto the chosen layer's oldest group.
struct SampledAction {
  Action action;
  double log_prob = 0.0;
};

SampledAction sample_action(std::span<const double> logits, const PolicyLayout& layout,
                            std::span<const double> state, Rng& rng);
Action mode_action(std::span<const double> logits, const PolicyLayout& layout, std::span<const double> state);

struct PolicyNet {
  PolicyLayout layout;
  Model net;

  std::vector<double> logits(std::span<const double> state) const;
};

struct ValueNet {
  Model net;

  double value(std::span<const double> state) const;
};

PolicyNet make_policy(const PolicyLayout& layout, std::size_t hidden, std::uint64_t seed);
ValueNet make_value(std::size_t state_dim, std::size_t hidden, std::uint64_t seed);

SampledAction policy_sample(const PolicyNet& policy, std::span<const double> state, Rng& rng);
Action policy_mode(const PolicyNet& policy, std::span<const double> state);

struct PpoConfig {
  std::size_t episodes = 200;
  std::size_t epochs = 10;
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  /// Buffer fill that triggers an update.
  std::size_t batch_size = 32;
  std::size_t minibatch_size = 8;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  std::size_t hidden = 64;

  void validate() const;
};

struct Transition {
  std::vector<double> state;
  Action action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
  double log_prob = 0.0;
  double value = 0.0;
};

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalised advantage estimation. A done transition bootstraps from 0;
/// so does the final transition of the trajectory.
AdvantageEstimate gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const char> dones, double gamma, double lambda);

/// Zero mean, unit variance (std floored at 1e-8).
void normalize_advantages(std::vector<double>& adv);

struct PpoAgent {
  PolicyNet policy;
  ValueNet value;
  Adam actor_opt;
  Adam critic_opt;

  PpoAgent(PolicyNet p, ValueNet v, double actor_lr, double critic_lr);
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  /// max |ratio - 1| over the first minibatch pass of epoch one; 0 when
  /// the behaviour policy equals the target policy.
  double first_epoch_ratio_dev = 0.0;
  std::size_t minibatches = 0;
};

/// K epochs of clipped-surrogate updates over shuffled minibatches, then
/// clears the buffer.
UpdateStats ppo_update(PpoAgent& agent, std::vector<Transition>& buffer, const PpoConfig& cfg, Rng& rng);

struct EpisodeStats {
  std::size_t episode = 0;
  double total_reward = 0.0;
  double forget_reward = 0.0;
  double fresh_reward = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  PpoAgent agent;
  std::vector<EpisodeStats> curve;
  std::vector<UpdateStats> updates;
};

/// Every episode starts from a fresh copy of `model` and a fresh ledger.
TrainResult train_unlearner(const Model& model, const SensitivityReport& report, const GroupIndex& idx,
                            const EnvConfig& env_cfg, const PpoConfig& cfg, std::uint64_t seed);

struct ActionRecord {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::vector<std::size_t> groups;
  double ratio = 0.0;
  std::size_t zeroed = 0;
  std::size_t transmitted = 0;
  Reward reward;
};

struct AoiSample {
  std::size_t step = 0;
  double sum = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

struct Deployment {
  Model model;
  std::vector<ActionRecord> actions;
  std::vector<AoiSample> aoi;
  std::size_t zeroed = 0;
};

/// Greedy rollout of up to `steps` env steps on a fresh copy of `model`.
Deployment deploy(const PolicyNet& policy, const Model& model, const SensitivityReport& report,
                  const GroupIndex& idx, const EnvConfig& env_cfg, std::size_t steps);

}  // namespace scale
