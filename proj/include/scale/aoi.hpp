#pragma once

// Parameter groups over the sensitive layers and their Age of Information.
//
// The AoI clock counts sparsification decision steps. A group's age is
// A = t - T where T is the step at which it was last touched.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "scale/model.hpp"

namespace scale {

struct GroupRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const GroupRange&, const GroupRange&) = default;
};

struct GroupId {
  std::size_t layer = 0;
  std::size_t group = 0;

  friend auto operator<=>(const GroupId&, const GroupId&) = default;
};

/// Balanced contiguous split of each tracked layer's flat vector.
struct GroupIndex {
  /// Tracked layers in rank order (most sensitive first).
  std::vector<std::size_t> layers;
  /// ranges[r] are the groups of layers[r].
  std::vector<std::vector<GroupRange>> ranges;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t groups_in_rank(std::size_t rank) const { return ranges.at(rank).size(); }
  std::size_t total_groups() const;
  std::size_t max_groups() const;
  /// Rank of a layer id; throws IndexError for untracked layers.
  std::size_t rank_of(std::size_t layer) const;
  const GroupRange& range(GroupId id) const;
  /// Canonical (rank, group) enumeration.
  std::vector<GroupId> all_groups() const;
  std::vector<std::size_t> groups_per_layer() const;
};

GroupIndex partition_groups(const Model& model, std::span<const std::size_t> layers, std::size_t groups_per_layer);

class AoiLedger {
 public:
  AoiLedger() = default;
  /// Tracks every group of idx with T = 0 at t = 0.
  explicit AoiLedger(const GroupIndex& idx);

  void track(GroupId id);
  bool tracks(GroupId id) const { return stamps_.count(id) != 0; }
  std::size_t size() const { return stamps_.size(); }

  std::uint64_t now() const { return now_; }
  std::uint64_t age(GroupId id) const;
  std::uint64_t last_update(GroupId id) const;

  void advance() { ++now_; }
  void touch(std::span<const GroupId> ids);
  void touch(GroupId id) { touch(std::span<const GroupId>(&id, 1)); }

  std::uint64_t max_age() const;
  std::uint64_t sum_age() const;

  const std::map<GroupId, std::uint64_t>& stamps() const { return stamps_; }

 private:
  std::uint64_t now_ = 0;
  std::map<GroupId, std::uint64_t> stamps_;
};

struct GroupStats {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mean and population standard deviation of one group's parameters.
GroupStats group_stats(const Model& model, const GroupIndex& idx, GroupId id);

/// (A_norm, mu, sigma) per group in canonical order;
/// A_norm = A / max(1, max age).
std::vector<double> state_vector(const Model& model, const AoiLedger& ledger, const GroupIndex& idx);

enum class AoiAverage {
  mean,           ///< sum of ages / number of groups
  paper_literal,  ///< additionally divided by the number of sensitive layers
};

double global_aoi(const AoiLedger& ledger, AoiAverage mode = AoiAverage::mean, std::size_t m_sel = 1);

}  // namespace scale
