#include "scale/aoi.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scale/error.hpp"
#include "scale/kernels.hpp"

namespace scale {

std::size_t GroupIndex::total_groups() const {
  std::size_t n = 0;
  for (const auto& r : ranges) n += r.size();
  return n;
}

std::size_t GroupIndex::max_groups() const {
  std::size_t n = 0;
  for (const auto& r : ranges) n = std::max(n, r.size());
  return n;
}

std::size_t GroupIndex::rank_of(std::size_t layer) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) throw IndexError("layer " + std::to_string(layer) + " is not tracked");
  return static_cast<std::size_t>(it - layers.begin());
}

const GroupRange& GroupIndex::range(GroupId id) const {
  const auto& r = ranges[rank_of(id.layer)];
  if (id.group >= r.size()) {
    throw IndexError("group " + std::to_string(id.group) + " does not exist in layer " + std::to_string(id.layer));
  }
  return r[id.group];
}

std::vector<GroupId> GroupIndex::all_groups() const {
  std::vector<GroupId> out;
  for (std::size_t r = 0; r < layers.size(); ++r)
    for (std::size_t j = 0; j < ranges[r].size(); ++j) out.push_back({layers[r], j});
  return out;
}

std::vector<std::size_t> GroupIndex::groups_per_layer() const {
  std::vector<std::size_t> g;
  for (const auto& r : ranges) g.push_back(r.size());
  return g;
}

GroupIndex partition_groups(const Model& model, std::span<const std::size_t> layers, std::size_t groups_per_layer) {
  if (groups_per_layer < 1) throw DomainError("partition_groups: need at least one group per layer");
  if (layers.empty()) throw DomainError("partition_groups: no layers to partition");
  GroupIndex idx;
  for (std::size_t l : layers) {
    const std::size_t d = model.params(l).size();
    const std::size_t g = std::min(groups_per_layer, d);
    const std::size_t base = d / g, extra = d % g;
    std::vector<GroupRange> rs;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < g; ++j) {
      const std::size_t len = base + (j < extra ? 1 : 0);
      rs.push_back({pos, pos + len});
      pos += len;
    }
    idx.layers.push_back(l);
    idx.ranges.push_back(std::move(rs));
  }
  return idx;
}

// ---------------------------------------------------------------------------

AoiLedger::AoiLedger(const GroupIndex& idx) {
  for (const auto& id : idx.all_groups()) stamps_[id] = 0;
}

void AoiLedger::track(GroupId id) { stamps_.emplace(id, now_); }

std::uint64_t AoiLedger::last_update(GroupId id) const {
  auto it = stamps_.find(id);
  if (it == stamps_.end()) {
    throw IndexError("unknown group (" + std::to_string(id.layer) + ", " + std::to_string(id.group) + ")");
  }
  return it->second;
}

std::uint64_t AoiLedger::age(GroupId id) const { return now_ - last_update(id); }

void AoiLedger::touch(std::span<const GroupId> ids) {
  for (const auto& id : ids) last_update(id);
  for (const auto& id : ids) stamps_[id] = now_;
}

std::uint64_t AoiLedger::max_age() const {
  std::uint64_t mx = 0;
  for (const auto& [id, t] : stamps_) mx = std::max(mx, now_ - t);
  return mx;
}

std::uint64_t AoiLedger::sum_age() const {
  std::uint64_t s = 0;
  for (const auto& [id, t] : stamps_) s += now_ - t;
  return s;
}

GroupStats group_stats(const Model& model, const GroupIndex& idx, GroupId id) {
  const GroupRange& r = idx.range(id);
  const auto p = model.params(id.layer).subspan(r.begin, r.size());
  const double n = static_cast<double>(p.size());
  GroupStats s;
  s.mean = kernels::sum(p) / n;
  double ss = 0.0;
  for (double v : p) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / n);
  return s;
}

std::vector<double> state_vector(const Model& model, const AoiLedger& ledger, const GroupIndex& idx) {
  const double norm = static_cast<double>(std::max<std::uint64_t>(1, ledger.max_age()));
  std::vector<double> h;
  h.reserve(3 * idx.total_groups());
  for (const auto& id : idx.all_groups()) {
    const GroupStats s = group_stats(model, idx, id);
    h.push_back(static_cast<double>(ledger.age(id)) / norm);
    h.push_back(s.mean);
    h.push_back(s.stddev);
  }
  return h;
}

double global_aoi(const AoiLedger& ledger, AoiAverage mode, std::size_t m_sel) {
  if (ledger.size() == 0) throw DomainError("global_aoi: ledger tracks no groups");
  double g = static_cast<double>(ledger.sum_age()) / static_cast<double>(ledger.size());
  if (mode == AoiAverage::paper_literal) g /= static_cast<double>(std::max<std::size_t>(1, m_sel));
  return g;
}

}  // namespace scale
