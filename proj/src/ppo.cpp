#include "scale/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scale/error.hpp"

namespace scale {

// ---------------------------------------------------------------------------
// Layout

std::size_t PolicyLayout::total_groups() const {
  return std::accumulate(groups_per_layer.begin(), groups_per_layer.end(), std::size_t{0});
}

std::size_t PolicyLayout::group_offset(std::size_t rank) const {
  std::size_t off = num_layers();
  for (std::size_t r = 0; r < rank; ++r) off += groups_per_layer[r];
  return off;
}

PolicyLayout PolicyLayout::for_groups(const GroupIndex& idx, std::size_t ratio_levels) {
  PolicyLayout l;
  l.groups_per_layer = idx.groups_per_layer();
  l.ratio_levels = ratio_levels;
  l.state_dim = 3 * idx.total_groups();
  return l;
}

// ---------------------------------------------------------------------------
// Head math

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double log_sigmoid(double z) { return -softplus(-z); }
double log_one_minus_sigmoid(double z) { return -softplus(z); }
double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

std::vector<double> log_probs(std::span<const double> z) {
  std::vector<double> out(z.size());
  log_softmax(z, out);
  return out;
}

double categorical_entropy(std::span<const double> z) {
  const auto lp = log_probs(z);
  double h = 0.0;
  for (double v : lp) h -= std::exp(v) * v;
  return h;
}

double bernoulli_entropy(double z) {
  const double p = sigmoid(z);
  return -(p * log_sigmoid(z) + (1.0 - p) * log_one_minus_sigmoid(z));
}

std::size_t sample_categorical(std::span<const double> z, Rng& rng) {
  const auto lp = log_probs(z);
  const double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cdf += std::exp(lp[i]);
    if (u < cdf) return i;
  }
  // Rounding left the cdf a hair below 1; take the last non-negligible entry.
  std::size_t last = lp.size() - 1;
  while (last > 0 && std::exp(lp[last]) == 0.0) --last;
  return last;
}

std::size_t argmax_lowest(std::span<const double> z) {
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

void check_layout(std::span<const double> logits, const PolicyLayout& layout) {
  if (logits.size() != layout.head_size()) {
    throw ShapeError("policy logits have " + std::to_string(logits.size()) + " entries, layout expects " +
                     std::to_string(layout.head_size()));
  }
}

void check_action_in_layout(const PolicyLayout& layout, const Action& a) {
  if (a.layer_rank >= layout.num_layers()) throw ShapeError("action layer outside the policy layout");
  if (a.ratio_level < 1 || a.ratio_level > layout.ratio_levels) throw ShapeError("action ratio level outside layout");
  for (std::size_t j : a.groups)
    if (j >= layout.groups_per_layer[a.layer_rank]) throw ShapeError("action group outside the policy layout");
}

std::size_t oldest_group(const PolicyLayout& layout, std::span<const double> state, std::size_t rank) {
  if (state.size() != layout.state_dim) {
    throw ShapeError("state has " + std::to_string(state.size()) + " entries, layout expects " +
                     std::to_string(layout.state_dim));
  }
  const std::size_t first = layout.group_offset(rank) - layout.num_layers();
  std::size_t best = 0;
  for (std::size_t j = 1; j < layout.groups_per_layer[rank]; ++j)
    if (state[3 * (first + j)] > state[3 * (first + best)]) best = j;
  return best;
}

}  // namespace

LogProbParts action_log_prob(std::span<const double> logits, const PolicyLayout& layout, const Action& action) {
  check_layout(logits, layout);
  check_action_in_layout(layout, action);
  LogProbParts parts;
  parts.layer = log_probs(logits.subspan(0, layout.num_layers()))[action.layer_rank];
  const std::size_t off = layout.group_offset(action.layer_rank);
  for (std::size_t j = 0; j < layout.groups_per_layer[action.layer_rank]; ++j) {
    const bool on = std::binary_search(action.groups.begin(), action.groups.end(), j);
    parts.groups += on ? log_sigmoid(logits[off + j]) : log_one_minus_sigmoid(logits[off + j]);
  }
  parts.ratio = log_probs(logits.subspan(layout.ratio_offset(), layout.ratio_levels))[action.ratio_level - 1];
  return parts;
}

double action_entropy(std::span<const double> logits, const PolicyLayout& layout, std::size_t layer_rank) {
  check_layout(logits, layout);
  double h = categorical_entropy(logits.subspan(0, layout.num_layers()));
  const std::size_t off = layout.group_offset(layer_rank);
  for (std::size_t j = 0; j < layout.groups_per_layer[layer_rank]; ++j) h += bernoulli_entropy(logits[off + j]);
  h += categorical_entropy(logits.subspan(layout.ratio_offset(), layout.ratio_levels));
  return h;
}

void accumulate_logit_grad(std::span<const double> logits, const PolicyLayout& layout, const Action& action,
                           double c_logp, double c_ent, std::span<double> grad) {
  check_layout(logits, layout);
  check_action_in_layout(layout, action);
  if (grad.size() != logits.size()) throw ShapeError("gradient buffer does not match logits");

  auto categorical = [&](std::size_t off, std::size_t n, std::size_t chosen) {
    const auto lp = log_probs(logits.subspan(off, n));
    double h = 0.0;
    for (double v : lp) h -= std::exp(v) * v;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::exp(lp[i]);
      grad[off + i] += c_logp * ((i == chosen ? 1.0 : 0.0) - p) + c_ent * (-p * (lp[i] + h));
    }
  };
  categorical(0, layout.num_layers(), action.layer_rank);
  const std::size_t off = layout.group_offset(action.layer_rank);
  for (std::size_t j = 0; j < layout.groups_per_layer[action.layer_rank]; ++j) {
    const double z = logits[off + j];
    const double p = sigmoid(z);
    const double m = std::binary_search(action.groups.begin(), action.groups.end(), j) ? 1.0 : 0.0;
    grad[off + j] += c_logp * (m - p) + c_ent * (-p * (1.0 - p) * z);
  }
  categorical(layout.ratio_offset(), layout.ratio_levels, action.ratio_level - 1);
}

SampledAction sample_action(std::span<const double> logits, const PolicyLayout& layout,
                            std::span<const double> state, Rng& rng) {
  check_layout(logits, layout);
  const std::size_t rank = sample_categorical(logits.subspan(0, layout.num_layers()), rng);
  const std::size_t off = layout.group_offset(rank);
  std::vector<std::size_t> groups;
  for (std::size_t j = 0; j < layout.groups_per_layer[rank]; ++j)
    if (rng.uniform() < sigmoid(logits[off + j])) groups.push_back(j);
  const std::size_t level = sample_categorical(logits.subspan(layout.ratio_offset(), layout.ratio_levels), rng) + 1;
  if (groups.empty()) groups.push_back(oldest_group(layout, state, rank));

  SampledAction out;
  out.action = Action::make(rank, std::move(groups), level, layout.ratio_levels);
  out.log_prob = action_log_prob(logits, layout, out.action).total();
  return out;
}

Action mode_action(std::span<const double> logits, const PolicyLayout& layout, std::span<const double> state) {
  check_layout(logits, layout);
  const std::size_t rank = argmax_lowest(logits.subspan(0, layout.num_layers()));
  const std::size_t off = layout.group_offset(rank);
  std::vector<std::size_t> groups;
  // Binary argmax with the "not selected" outcome first, so p = 0.5 stays off.
  for (std::size_t j = 0; j < layout.groups_per_layer[rank]; ++j)
    if (logits[off + j] > 0.0) groups.push_back(j);
  const std::size_t level = argmax_lowest(logits.subspan(layout.ratio_offset(), layout.ratio_levels)) + 1;
  if (groups.empty()) groups.push_back(oldest_group(layout, state, rank));
  return Action::make(rank, std::move(groups), level, layout.ratio_levels);
}

// ---------------------------------------------------------------------------
// Networks

namespace {

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

Model dense_net(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, double head_scale) {
  Model m = Model::mlp(in, {hidden, hidden}, out, seed);
  auto head = m.mutable_params(m.num_layers() - 1);
  for (double& v : head) v *= head_scale;
  return m;
}

}  // namespace

std::vector<double> PolicyNet::logits(std::span<const double> state) const {
  return forward(net, row_matrix(state)).data;
}

double ValueNet::value(std::span<const double> state) const { return forward(net, row_matrix(state)).data[0]; }

PolicyNet make_policy(const PolicyLayout& layout, std::size_t hidden, std::uint64_t seed) {
  if (layout.num_layers() == 0 || layout.ratio_levels == 0 || layout.state_dim == 0) {
    throw ShapeError("policy layout is empty");
  }
  // A small output layer starts the policy near uniform.
  return PolicyNet{layout, dense_net(layout.state_dim, hidden, layout.head_size(), seed, 0.01)};
}

ValueNet make_value(std::size_t state_dim, std::size_t hidden, std::uint64_t seed) {
  return ValueNet{dense_net(state_dim, hidden, 1, seed, 1.0)};
}

SampledAction policy_sample(const PolicyNet& policy, std::span<const double> state, Rng& rng) {
  if (state.size() != policy.layout.state_dim) throw ShapeError("state layout does not match the policy");
  return sample_action(policy.logits(state), policy.layout, state, rng);
}

Action policy_mode(const PolicyNet& policy, std::span<const double> state) {
  if (state.size() != policy.layout.state_dim) throw ShapeError("state layout does not match the policy");
  return mode_action(policy.logits(state), policy.layout, state);
}

// ---------------------------------------------------------------------------
// PPO

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo.clip must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma must lie in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must lie in (0, 1]");
  if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw ConfigError("ppo learning rates must be positive");
  if (batch_size < 1 || minibatch_size < 1) throw ConfigError("ppo batch sizes must be >= 1");
  if (epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
  if (entropy_coef < 0.0 || max_grad_norm <= 0.0) throw ConfigError("ppo entropy/grad-clip settings invalid");
}

AdvantageEstimate gae(std::span<const double> rewards, std::span<const double> values, std::span<const char> dones,
                      double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw ShapeError("gae: rewards, values and dones must align");
  AdvantageEstimate est;
  est.advantages.assign(n, 0.0);
  est.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool terminal = dones[i] != 0 || i + 1 == n;
    const double next_value = terminal ? 0.0 : values[i + 1];
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + (terminal ? 0.0 : gamma * lambda * running);
    est.advantages[i] = running;
    est.returns[i] = running + values[i];
  }
  return est;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  for (double& a : adv) a = (a - mean) / sd;
}

PpoAgent::PpoAgent(PolicyNet p, ValueNet v, double actor_lr, double critic_lr)
    : policy(std::move(p)), value(std::move(v)), actor_opt(policy.net, actor_lr), critic_opt(value.net, critic_lr) {}

UpdateStats ppo_update(PpoAgent& agent, std::vector<Transition>& buffer, const PpoConfig& cfg, Rng& rng) {
  if (buffer.empty()) throw DomainError("ppo_update: empty buffer");
  cfg.validate();
  const PolicyLayout& layout = agent.policy.layout;
  const std::size_t n = buffer.size();

  std::vector<double> rewards(n), values(n);
  std::vector<char> dones(n);
  for (std::size_t i = 0; i < n; ++i) {
    rewards[i] = buffer[i].reward;
    values[i] = buffer[i].value;
    dones[i] = buffer[i].done ? 1 : 0;
  }
  AdvantageEstimate est = gae(rewards, values, dones, cfg.gamma, cfg.gae_lambda);
  normalize_advantages(est.advantages);

  UpdateStats stats;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb = std::min(cfg.minibatch_size, n);
  const std::size_t sdim = layout.state_dim;
  std::size_t clipped = 0, counted = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t len = std::min(mb, n - start);
      const double inv = 1.0 / static_cast<double>(len);
      Matrix states(len, sdim);
      for (std::size_t b = 0; b < len; ++b) {
        const auto& s = buffer[order[start + b]].state;
        std::copy(s.begin(), s.end(), states.row(b).begin());
      }

      // Actor.
      const ForwardCache pc = forward_cached(agent.policy.net, states);
      Matrix dlogits(len, layout.head_size(), 0.0);
      double pl = 0.0, ent = 0.0;
      for (std::size_t b = 0; b < len; ++b) {
        const std::size_t k = order[start + b];
        const Transition& tr = buffer[k];
        const auto z = pc.logits().row(b);
        const double logp = action_log_prob(z, layout, tr.action).total();
        const double ratio = std::exp(logp - tr.log_prob);
        if (epoch == 0 && start == 0) stats.first_epoch_ratio_dev = std::max(stats.first_epoch_ratio_dev, std::abs(ratio - 1.0));
        const double adv = est.advantages[k];
        const double unclipped = ratio * adv;
        const double clipped_v = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        const bool active = unclipped <= clipped_v;
        if (!active) ++clipped;
        ++counted;
        const double h = action_entropy(z, layout, tr.action.layer_rank);
        pl -= std::min(unclipped, clipped_v) * inv;
        ent += h * inv;
        accumulate_logit_grad(z, layout, tr.action, active ? -adv * ratio * inv : 0.0, -cfg.entropy_coef * inv,
                              dlogits.row(b));
      }
      Gradients pg = backward(agent.policy.net, pc, dlogits);
      clip_grad_norm(pg, cfg.max_grad_norm);
      agent.actor_opt.step(agent.policy.net, pg);

      // Critic.
      const ForwardCache vc = forward_cached(agent.value.net, states);
      Matrix dv(len, 1);
      double vl = 0.0;
      for (std::size_t b = 0; b < len; ++b) {
        const double diff = vc.logits()(b, 0) - est.returns[order[start + b]];
        vl += diff * diff * inv;
        dv(b, 0) = 2.0 * diff * inv;
      }
      Gradients vg = backward(agent.value.net, vc, dv);
      clip_grad_norm(vg, cfg.max_grad_norm);
      agent.critic_opt.step(agent.value.net, vg);

      stats.policy_loss += pl;
      stats.value_loss += vl;
      stats.entropy += ent;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double m = static_cast<double>(stats.minibatches);
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
  }
  stats.clip_fraction = counted ? static_cast<double>(clipped) / static_cast<double>(counted) : 0.0;
  buffer.clear();
  return stats;
}

// ---------------------------------------------------------------------------
// Training and deployment

TrainResult train_unlearner(const Model& model, const SensitivityReport& report, const GroupIndex& idx,
                            const EnvConfig& env_cfg, const PpoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PolicyLayout layout = PolicyLayout::for_groups(idx, env_cfg.ratio_levels);
  TrainResult res{PpoAgent(make_policy(layout, cfg.hidden, derive_seed(seed, 1)),
                           make_value(layout.state_dim, cfg.hidden, derive_seed(seed, 2)), cfg.actor_lr,
                           cfg.critic_lr),
                  {},
                  {}};
  Rng rng(derive_seed(seed, 3));
  UnlearnEnv env(model, idx, report, env_cfg);
  std::vector<Transition> buffer;

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    std::vector<double> state = env.reset();
    EpisodeStats st;
    st.episode = ep + 1;
    while (!env.done()) {
      SampledAction sa = policy_sample(res.agent.policy, state, rng);
      const double v = res.agent.value.value(state);
      StepResult sr = env.step(sa.action);
      st.total_reward += sr.reward.total;
      st.forget_reward += sr.reward.forget;
      st.fresh_reward += sr.reward.fresh;
      ++st.steps;
      buffer.push_back(Transition{std::move(state), std::move(sa.action), sr.reward.total, sr.next_state, sr.done,
                                  sa.log_prob, v});
      state = std::move(sr.next_state);
    }
    res.curve.push_back(st);
    if (buffer.size() >= cfg.batch_size) res.updates.push_back(ppo_update(res.agent, buffer, cfg, rng));
  }
  return res;
}

Deployment deploy(const PolicyNet& policy, const Model& model, const SensitivityReport& report,
                  const GroupIndex& idx, const EnvConfig& env_cfg, std::size_t steps) {
  Deployment dep{model, {}, {}, 0};
  if (steps == 0) return dep;
  EnvConfig cfg = env_cfg;
  cfg.horizon = steps;
  UnlearnEnv env(model, idx, report, cfg);
  std::vector<double> state = env.reset();
  while (!env.done()) {
    const Action a = policy_mode(policy, state);
    StepResult sr = env.step(a);
    ActionRecord rec;
    rec.step = env.steps_taken();
    rec.layer = idx.layers[a.layer_rank];
    rec.groups = a.groups;
    rec.ratio = a.ratio;
    rec.zeroed = sr.zeroed;
    rec.transmitted = sr.transmitted;
    rec.reward = sr.reward;
    dep.zeroed += sr.zeroed;
    dep.actions.push_back(std::move(rec));
    const auto& led = env.ledger();
    dep.aoi.push_back(AoiSample{env.steps_taken(), static_cast<double>(led.sum_age()), global_aoi(led),
                                static_cast<double>(led.max_age())});
    state = std::move(sr.next_state);
  }
  dep.model = env.model();
  return dep;
}

}  // namespace scale
