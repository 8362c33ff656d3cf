#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "scale/dataset.hpp"
#include "scale/model.hpp"

namespace scale {

struct FedConfig {
  std::size_t num_clients = 8;
  std::size_t rounds = 30;
  std::size_t local_epochs = 2;
  double eta = 0.05;
  std::size_t clients_per_round = 8;
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  /// Global-model snapshots kept per round; 0 disables the ring buffer.
  std::size_t snapshot_capacity = 0;

  void validate() const;
};

struct ClientRecord {
  Model model;
  std::size_t data_size = 0;
  std::size_t last_round = 0;
};

/// Each client's most recent upload, keyed by client id.
struct FederationHistory {
  std::map<std::size_t, ClientRecord> clients;
  std::deque<Model> snapshots;

  bool contains(std::size_t n) const { return clients.count(n) != 0; }
  const ClientRecord& at(std::size_t n) const;
  void record(std::size_t n, Model model, std::size_t data_size, std::size_t round);
};

struct RoundLog {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct FederationResult {
  Model model;
  FederationHistory history;
  std::vector<RoundLog> rounds;
};

/// E epochs of minibatch SGD from `global` on the given samples.
Model local_update(const Model& global, const Dataset& ds, std::span<const std::size_t> indices,
                   std::size_t epochs, double eta, std::size_t batch_size, std::uint64_t seed);

/// Data-size weighted average, reduced in the order given.
Model aggregate(std::span<const Model> models, std::span<const std::size_t> sizes);

/// T rounds of FedAvg. Clients with no samples are never selected.
/// `eval` (optional) supplies the accuracy column of the round log; the
/// loss column is the aggregated model's mean loss over all client data.
FederationResult run_rounds(const FedConfig& cfg, const std::vector<std::vector<std::size_t>>& client_indices,
                            const Dataset& ds, const Model& init, const Dataset* eval = nullptr);

/// FedAvg from `init` over D_r only; clients with nothing left are excluded.
FederationResult retrain_baseline(const FedConfig& cfg, const ForgetSplit& split, const Dataset& ds,
                                  const Model& init, const Dataset* eval = nullptr);

/// Fraction of argmax-correct predictions (ties go to the lower class index).
double accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> indices);
double accuracy(const Model& model, const Dataset& ds);

}  // namespace scale
