#include "scale/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "scale/error.hpp"
#include "scale/rng.hpp"

namespace scale {
namespace fs = std::filesystem;

void Dataset::validate() const {
  if (labels.empty()) throw DomainError("dataset is empty");
  if (inputs.size() != labels.size() * dim) throw ShapeError("dataset inputs do not match labels x dim");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw ShapeError("dataset label out of range");
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.inputs = Matrix(indices.size(), ds.dim);
  b.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= ds.size()) throw IndexError("sample index " + std::to_string(src) + " out of range");
    auto x = ds.input(src);
    std::copy(x.begin(), x.end(), b.inputs.row(i).begin());
    b.labels[i] = ds.labels[src];
  }
  return b;
}

Batch make_batch(const Dataset& ds) { return make_batch(ds, all_indices(ds)); }

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// ---------------------------------------------------------------------------
// Synthetic clusters

namespace {

std::vector<std::vector<double>> cluster_means(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xc1u));
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim));
  for (auto& m : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : m) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : m) v /= norm;
  }
  return means;
}

Dataset sample_clusters(const SyntheticSpec& spec, const std::vector<std::vector<double>>& means,
                        std::size_t per_class, std::uint64_t noise_seed) {
  Dataset ds;
  ds.dim = spec.dim;
  ds.num_classes = spec.classes;
  ds.source = DataSource::synthetic;
  ds.inputs.reserve(spec.classes * per_class * spec.dim);
  Rng rng(noise_seed);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t d = 0; d < spec.dim; ++d) ds.inputs.push_back(means[c][d] + spec.spread * rng.normal());
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

void check_spec(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw DomainError("synthetic data needs at least 2 classes");
  if (spec.per_class < 1) throw DomainError("synthetic data needs per_class >= 1");
  if (spec.dim < 1) throw DomainError("synthetic data needs dim >= 1");
  if (!(spec.spread >= 0.0)) throw DomainError("synthetic spread must be non-negative");
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  return sample_clusters(spec, cluster_means(spec, seed), spec.per_class, derive_seed(seed, 0x5a3u));
}

Dataset gen_synthetic(std::size_t classes, std::size_t dim, std::size_t per_class, double spread,
                      std::uint64_t seed) {
  return gen_synthetic(SyntheticSpec{classes, dim, per_class, spread}, seed);
}

Dataset gen_synthetic_holdout(const SyntheticSpec& spec, std::uint64_t seed, std::size_t per_class) {
  check_spec(spec);
  if (per_class < 1) throw DomainError("holdout needs per_class >= 1");
  return sample_clusters(spec, cluster_means(spec, seed), per_class, derive_seed(seed, 0x401du));
}

// ---------------------------------------------------------------------------
// IDX ingestion

namespace {

std::vector<unsigned char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const fs::path& p, const char* field) {
  if (b.size() < off + 4) throw FormatError(p.string() + ": truncated header (field '" + field + "')");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

struct IdxImages {
  std::uint32_t count, rows, cols;
  std::vector<unsigned char> bytes;
};

IdxImages read_images(const fs::path& p) {
  IdxImages im;
  im.bytes = read_all(p);
  const std::uint32_t magic = be32(im.bytes, 0, p, "magic");
  if (magic != 0x00000803u) {
    std::ostringstream os;
    os << p.string() << ": bad magic 0x" << std::hex << magic << " (expected 0x00000803 for images)";
    throw FormatError(os.str());
  }
  im.count = be32(im.bytes, 4, p, "count");
  im.rows = be32(im.bytes, 8, p, "rows");
  im.cols = be32(im.bytes, 12, p, "cols");
  if (im.rows == 0 || im.cols == 0) throw FormatError(p.string() + ": zero image dimension (field 'rows'/'cols')");
  const std::size_t need = 16 + std::size_t{im.count} * im.rows * im.cols;
  if (im.bytes.size() < need) {
    throw FormatError(p.string() + ": truncated pixel data (field 'count' says " + std::to_string(im.count) +
                      " images)");
  }
  return im;
}

}  // namespace

ImageShape idx_image_shape(const fs::path& images_path) {
  const IdxImages im = read_images(images_path);
  return {im.rows, im.cols};
}

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path, std::size_t limit) {
  const IdxImages im = read_images(images_path);
  const auto lb = read_all(labels_path);
  const std::uint32_t lmagic = be32(lb, 0, labels_path, "magic");
  if (lmagic != 0x00000801u) {
    std::ostringstream os;
    os << labels_path.string() << ": bad magic 0x" << std::hex << lmagic << " (expected 0x00000801 for labels)";
    throw FormatError(os.str());
  }
  const std::uint32_t lcount = be32(lb, 4, labels_path, "count");
  if (lb.size() < 8 + std::size_t{lcount}) {
    throw FormatError(labels_path.string() + ": truncated label data (field 'count' says " + std::to_string(lcount) +
                      " labels)");
  }
  if (lcount != im.count) {
    throw FormatError("count mismatch: images header has " + std::to_string(im.count) + ", labels header has " +
                      std::to_string(lcount));
  }
  std::size_t n = im.count;
  if (limit > 0) n = std::min(n, limit);
  if (n == 0) throw FormatError(images_path.string() + ": no samples (field 'count')");

  Dataset ds;
  ds.source = DataSource::idx_files;
  ds.dim = std::size_t{im.rows} * im.cols;
  ds.inputs.resize(n * ds.dim);
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < ds.dim; ++d) ds.inputs[i * ds.dim + d] = im.bytes[16 + i * ds.dim + d] / 255.0;
    ds.labels[i] = lb[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return ds;
}

// ---------------------------------------------------------------------------
// Partitioning

std::vector<std::size_t> ClientPartition::sizes() const {
  std::vector<std::size_t> s;
  s.reserve(clients.size());
  for (const auto& c : clients) s.push_back(c.size());
  return s;
}

ClientPartition dirichlet_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed) {
  if (num_clients < 1) throw DomainError("partition needs at least one client");
  if (!(alpha > 0.0)) throw DomainError("Dirichlet alpha must be positive");
  if (num_clients > ds.size()) {
    throw DomainError("infeasible partition: " + std::to_string(num_clients) + " clients but only " +
                      std::to_string(ds.size()) + " samples");
  }
  Rng rng(seed);
  ClientPartition part;
  part.clients.resize(num_clients);

  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  for (auto& members : by_class) {
    if (members.empty()) continue;
    rng.shuffle(members);
    const std::vector<double> props = dirichlet(rng, num_clients, alpha);
    // Largest remainder: floor first, then hand out the leftovers by
    // descending fractional part (ties to the lower client id).
    const double n = static_cast<double>(members.size());
    std::vector<std::size_t> counts(num_clients);
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const double exact = props[k] * n;
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[k];
      rema.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < members.size(); ++r, ++assigned) ++counts[rema[r % num_clients].second];

    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) part.clients[k].push_back(members[pos++]);
    }
  }

  for (std::size_t k = 0; k < num_clients; ++k) {
    if (!part.clients[k].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < num_clients; ++j)
      if (part.clients[j].size() > part.clients[donor].size()) donor = j;
    part.clients[k].push_back(part.clients[donor].back());
    part.clients[donor].pop_back();
  }
  for (auto& c : part.clients) std::sort(c.begin(), c.end());
  return part;
}

nlohmann::json partition_to_json(const ClientPartition& part) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < part.clients.size(); ++k) j[std::to_string(k)] = part.clients[k];
  return j;
}

ClientPartition partition_from_json(const nlohmann::json& j) {
  ClientPartition part;
  part.clients.resize(j.size());
  for (const auto& [key, val] : j.items()) {
    const std::size_t k = std::stoul(key);
    if (k >= part.clients.size()) throw FormatError("partition: client ids must be 0..N-1");
    part.clients[k] = val.get<std::vector<std::size_t>>();
  }
  return part;
}

// ---------------------------------------------------------------------------
// Unlearning requests

void UnlearnRequest::validate() const {
  if (clients.empty()) throw DomainError("unlearning request names no clients");
  if (granularity == Granularity::class_ && class_set.empty()) {
    throw DomainError("class unlearning request needs a nonempty class set");
  }
  if (granularity == Granularity::sample) {
    if (!sample_fraction) throw DomainError("sample unlearning request needs a sample fraction");
    if (!(*sample_fraction > 0.0 && *sample_fraction < 1.0)) {
      throw DomainError("sample fraction must lie in (0, 1)");
    }
  }
}

UnlearnRequest UnlearnRequest::parse(const std::string& text, std::uint64_t seed) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ':');) parts.push_back(tok);
  auto bad = [&]() { return ConfigError("bad request '" + text + "' (client:<n> | class:<n>:<c1,c2> | sample:<n>:<frac>)"); };
  if (parts.size() < 2) throw bad();
  UnlearnRequest r;
  r.seed = seed;
  try {
    r.clients.push_back(std::stoul(parts[1]));
    if (parts[0] == "client" && parts.size() == 2) {
      r.granularity = Granularity::client;
    } else if (parts[0] == "class" && parts.size() == 3) {
      r.granularity = Granularity::class_;
      std::stringstream cs(parts[2]);
      for (std::string c; std::getline(cs, c, ',');) r.class_set.push_back(std::stoi(c));
    } else if (parts[0] == "sample" && parts.size() == 3) {
      r.granularity = Granularity::sample;
      r.sample_fraction = std::stod(parts[2]);
    } else {
      throw bad();
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
  r.validate();
  return r;
}

std::string UnlearnRequest::to_string() const {
  std::string s;
  const std::string n = clients.empty() ? "?" : std::to_string(clients.front());
  switch (granularity) {
    case Granularity::client:
      return "client:" + n;
    case Granularity::class_: {
      s = "class:" + n + ":";
      for (std::size_t i = 0; i < class_set.size(); ++i) s += (i ? "," : "") + std::to_string(class_set[i]);
      return s;
    }
    case Granularity::sample: {
      std::ostringstream os;
      os << "sample:" << n << ":" << sample_fraction.value_or(0.0);
      return os.str();
    }
  }
  return s;
}

std::vector<std::size_t> ForgetSplit::remain_sizes() const {
  std::vector<std::size_t> s;
  for (const auto& c : remain_by_client) s.push_back(c.size());
  return s;
}

ForgetSplit build_split(const Dataset& ds, const ClientPartition& part, const UnlearnRequest& req) {
  req.validate();
  const std::size_t N = part.num_clients();
  std::vector<char> forgotten(ds.size(), 0);
  for (std::size_t n : req.clients) {
    if (n >= N) throw IndexError("request names client " + std::to_string(n) + " but N=" + std::to_string(N));
    const auto& mine = part.clients[n];
    switch (req.granularity) {
      case Granularity::client:
        for (std::size_t i : mine) forgotten[i] = 1;
        break;
      case Granularity::class_:
        for (int c : req.class_set)
          if (c < 0 || static_cast<std::size_t>(c) >= ds.num_classes) {
            throw IndexError("request names class " + std::to_string(c) + " outside the dataset");
          }
        for (std::size_t i : mine)
          if (std::find(req.class_set.begin(), req.class_set.end(), ds.labels[i]) != req.class_set.end()) {
            forgotten[i] = 1;
          }
        break;
      case Granularity::sample: {
        std::vector<std::size_t> pool = mine;
        Rng rng(derive_seed(req.seed, n, 0x5a9u));
        rng.shuffle(pool);
        const auto take = static_cast<std::size_t>(std::ceil(*req.sample_fraction * static_cast<double>(pool.size())));
        for (std::size_t k = 0; k < std::min(take, pool.size()); ++k) forgotten[pool[k]] = 1;
        break;
      }
    }
  }

  ForgetSplit split;
  split.remain_by_client.resize(N);
  for (std::size_t i = 0; i < ds.size(); ++i) (forgotten[i] ? split.forget : split.remain).push_back(i);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t i : part.clients[k])
      if (!forgotten[i]) split.remain_by_client[k].push_back(i);
  if (split.forget.empty()) throw DomainError("degenerate request '" + req.to_string() + "': nothing to forget");
  return split;
}

ForgetSplit empty_split(const ClientPartition& part) {
  ForgetSplit split;
  split.remain_by_client = part.clients;
  for (const auto& c : part.clients) split.remain.insert(split.remain.end(), c.begin(), c.end());
  std::sort(split.remain.begin(), split.remain.end());
  return split;
}

}  // namespace scale
