#include "scale/federation.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "scale/error.hpp"
#include "scale/kernels.hpp"
#include "scale/rng.hpp"

namespace scale {

void FedConfig::validate() const {
  if (num_clients < 1) throw ConfigError("federation: clients must be >= 1");
  if (clients_per_round < 1 || clients_per_round > num_clients) {
    throw ConfigError("federation: clients_per_round must lie in [1, clients]");
  }
  if (local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
  if (!(eta >= 0.0)) throw ConfigError("federation: eta must be non-negative");
  if (batch_size < 1) throw ConfigError("federation: batch_size must be >= 1");
}

const ClientRecord& FederationHistory::at(std::size_t n) const {
  auto it = clients.find(n);
  if (it == clients.end()) throw IndexError("client " + std::to_string(n) + " has no recorded upload");
  return it->second;
}

void FederationHistory::record(std::size_t n, Model model, std::size_t data_size, std::size_t round) {
  if (!clients.empty() && !clients.begin()->second.model.congruent(model)) {
    throw ShapeError("history: uploaded model is not congruent with stored models");
  }
  clients[n] = ClientRecord{std::move(model), data_size, round};
}

Model local_update(const Model& global, const Dataset& ds, std::span<const std::size_t> indices,
                   std::size_t epochs, double eta, std::size_t batch_size, std::uint64_t seed) {
  if (indices.empty()) throw DomainError("local_update: client has no data");
  Model local = global;
  if (eta == 0.0) return local;
  Rng rng(seed);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t len = std::min(batch_size, order.size() - start);
      const Batch batch = make_batch(ds, std::span<const std::size_t>(order).subspan(start, len));
      const auto lg = loss_and_grads(local, batch);
      sgd_step(local, lg.grads, eta);
    }
  }
  return local;
}

Model aggregate(std::span<const Model> models, std::span<const std::size_t> sizes) {
  if (models.empty()) throw DomainError("aggregate: no models");
  if (models.size() != sizes.size()) throw ShapeError("aggregate: models and sizes differ in length");
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  if (total == 0.0) throw DomainError("aggregate: total data size is zero");
  Model out = models.front();
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    auto p = out.mutable_params(l);
    std::fill(p.begin(), p.end(), 0.0);
  }
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (!models[k].congruent(out)) throw ShapeError("aggregate: model " + std::to_string(k) + " is not congruent");
    if (sizes[k] == 0) throw DomainError("aggregate: client sizes must be positive");
    const double w = static_cast<double>(sizes[k]) / total;
    for (std::size_t l = 0; l < out.num_layers(); ++l) kernels::axpy(w, models[k].params(l), out.mutable_params(l));
  }
  return out;
}

double accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DomainError("accuracy is undefined on an empty sample set");
  const Batch b = make_batch(ds, indices);
  const Matrix logits = forward(model, b.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto row = logits.row(i);
    const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (pred == b.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double accuracy(const Model& model, const Dataset& ds) {
  const auto idx = all_indices(ds);
  return accuracy(model, ds, idx);
}

FederationResult run_rounds(const FedConfig& cfg, const std::vector<std::vector<std::size_t>>& client_indices,
                            const Dataset& ds, const Model& init, const Dataset* eval) {
  cfg.validate();
  if (client_indices.size() != cfg.num_clients) throw ShapeError("run_rounds: partition size differs from N");

  std::vector<std::size_t> eligible;
  std::vector<std::size_t> pooled;
  for (std::size_t k = 0; k < client_indices.size(); ++k) {
    if (!client_indices[k].empty()) eligible.push_back(k);
    pooled.insert(pooled.end(), client_indices[k].begin(), client_indices[k].end());
  }
  if (eligible.empty()) throw DomainError("run_rounds: every client is empty");
  const std::size_t per_round = std::min(cfg.clients_per_round, eligible.size());

  FederationResult res{init, {}, {}};
  Rng select_rng(derive_seed(cfg.seed, 0x5e1ec7u));
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    // Partial Fisher-Yates: the first per_round slots are the draw.
    std::vector<std::size_t> pool = eligible;
    for (std::size_t i = 0; i < per_round; ++i) {
      const std::size_t j = i + select_rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_round));
    std::sort(chosen.begin(), chosen.end());

    std::vector<Model> uploads;
    std::vector<std::size_t> sizes;
    uploads.reserve(chosen.size());
    for (std::size_t n : chosen) {
      uploads.push_back(local_update(res.model, ds, client_indices[n], cfg.local_epochs, cfg.eta, cfg.batch_size,
                                     derive_seed(cfg.seed, t + 1, n + 1)));
      sizes.push_back(client_indices[n].size());
    }
    res.model = aggregate(uploads, sizes);
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      res.history.record(chosen[k], std::move(uploads[k]), sizes[k], t + 1);
    }
    if (cfg.snapshot_capacity > 0) {
      res.history.snapshots.push_back(res.model);
      if (res.history.snapshots.size() > cfg.snapshot_capacity) res.history.snapshots.pop_front();
    }

    RoundLog log;
    log.round = t + 1;
    log.participants = chosen;
    log.loss = loss(res.model, make_batch(ds, pooled));
    log.accuracy = eval ? accuracy(res.model, *eval) : accuracy(res.model, ds, pooled);
    res.rounds.push_back(std::move(log));
  }
  return res;
}

FederationResult retrain_baseline(const FedConfig& cfg, const ForgetSplit& split, const Dataset& ds,
                                  const Model& init, const Dataset* eval) {
  if (split.remain.empty()) throw DomainError("retrain: remaining dataset is empty");
  return run_rounds(cfg, split.remain_by_client, ds, init, eval);
}

}  // namespace scale
