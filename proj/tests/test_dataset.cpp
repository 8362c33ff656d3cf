#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>

#include "scale/dataset.hpp"
#include "scale/error.hpp"
#include "scale/federation.hpp"
#include "support.hpp"

using namespace scale;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_images(const fs::path& p, std::uint32_t magic, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                  const std::vector<unsigned char>& pixels) {
  std::ofstream out(p, std::ios::binary);
  put_be32(out, magic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_labels(const fs::path& p, std::uint32_t magic, std::uint32_t count, const std::vector<unsigned char>& labels) {
  std::ofstream out(p, std::ios::binary);
  put_be32(out, magic);
  put_be32(out, count);
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

void check_set_partition(const ClientPartition& part, std::size_t total) {
  std::vector<int> seen(total, 0);
  for (const auto& c : part.clients) {
    CHECK(!c.empty());
    for (std::size_t i : c) {
      REQUIRE(i < total);
      ++seen[i];
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("synthetic generation") {
  SUBCASE("counts and labels") {
    Dataset ds = gen_synthetic(2, 2, 5, 0.1, 7);
    CHECK(ds.size() == 10);
    CHECK(std::count(ds.labels.begin(), ds.labels.end(), 0) == 5);
    CHECK(std::count(ds.labels.begin(), ds.labels.end(), 1) == 5);
    CHECK(ds.inputs.size() == 20);
  }
  SUBCASE("zero spread collapses each class to one point") {
    Dataset ds = gen_synthetic(3, 4, 6, 0.0, 8);
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < ds.size(); ++j)
        if (ds.labels[i] == ds.labels[j]) CHECK(std::equal(ds.input(i).begin(), ds.input(i).end(), ds.input(j).begin()));
  }
  SUBCASE("deterministic per seed") {
    CHECK(gen_synthetic(4, 16, 10, 0.15, 1).inputs == gen_synthetic(4, 16, 10, 0.15, 1).inputs);
    CHECK(gen_synthetic(4, 16, 10, 0.15, 1).inputs != gen_synthetic(4, 16, 10, 0.15, 2).inputs);
  }
  SUBCASE("invalid counts") {
    CHECK_THROWS_AS(gen_synthetic(1, 2, 5, 0.1, 7), DomainError);
    CHECK_THROWS_AS(gen_synthetic(2, 2, 0, 0.1, 7), DomainError);
  }
  SUBCASE("tight clusters are linearly separable") {
    Dataset ds = gen_synthetic(4, 16, 50, 0.05, 9);
    Model lin(ArchId::custom, {LayerSpec::dense(16, 4, Activation::none)});
    Batch all = make_batch(ds);
    Adam opt(lin, 0.05);
    for (int step = 0; step < 300; ++step) opt.step(lin, loss_and_grads(lin, all).grads);
    CHECK(accuracy(lin, ds) == 1.0);
  }
}

TEST_CASE("IDX loading") {
  auto dir = testing::scratch_dir("idx");
  std::vector<unsigned char> px(18);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(i * 15);
  px[0] = 0;
  px[17] = 255;

  SUBCASE("two 3x3 images") {
    write_images(dir / "img", 0x803, 2, 3, 3, px);
    write_labels(dir / "lab", 0x801, 2, {4, 7});
    Dataset ds = load_idx(dir / "img", dir / "lab");
    CHECK(ds.size() == 2);
    CHECK(ds.dim == 9);
    CHECK(ds.labels == std::vector<int>{4, 7});
    CHECK(ds.input(0)[0] == 0.0);
    CHECK(ds.input(1)[8] == 1.0);
    CHECK(ds.input(0)[1] == doctest::Approx(15.0 / 255.0));
    CHECK(idx_image_shape(dir / "img").rows == 3);
    CHECK(load_idx(dir / "img", dir / "lab", 1).size() == 1);
  }
  SUBCASE("count mismatch") {
    write_images(dir / "img", 0x803, 2, 3, 3, px);
    write_labels(dir / "lab", 0x801, 3, {1, 2, 3});
    CHECK_THROWS_WITH_AS(load_idx(dir / "img", dir / "lab"), doctest::Contains("count"), FormatError);
  }
  SUBCASE("bad magic") {
    write_images(dir / "img", 0x804, 2, 3, 3, px);
    write_labels(dir / "lab", 0x801, 2, {1, 2});
    CHECK_THROWS_WITH_AS(load_idx(dir / "img", dir / "lab"), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("truncated pixels") {
    write_images(dir / "img", 0x803, 2, 3, 3, std::vector<unsigned char>(px.begin(), px.begin() + 10));
    write_labels(dir / "lab", 0x801, 2, {1, 2});
    CHECK_THROWS_WITH_AS(load_idx(dir / "img", dir / "lab"), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("truncated header") {
    std::ofstream(dir / "img", std::ios::binary).write("\0\0\x08", 3);
    write_labels(dir / "lab", 0x801, 2, {1, 2});
    CHECK_THROWS_AS(load_idx(dir / "img", dir / "lab"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_idx(dir / "nope", dir / "lab"), FormatError); }
}

TEST_CASE("dirichlet partition") {
  Dataset ds = gen_synthetic(4, 4, 100, 0.1, 3);

  SUBCASE("single client takes everything") {
    auto part = dirichlet_partition(ds, 1, 0.5, 1);
    CHECK(part.clients[0] == all_indices(ds));
  }
  SUBCASE("near-uniform proportions at large alpha") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto part = dirichlet_partition(ds, 4, 1000.0, seed);
      for (const auto& c : part.clients) {
        std::vector<double> hist(4, 0.0);
        for (std::size_t i : c) hist[static_cast<std::size_t>(ds.labels[i])] += 1.0;
        for (double h : hist) CHECK(std::abs(h / static_cast<double>(c.size()) - 0.25) <= 0.05);
      }
    }
  }
  SUBCASE("set partition for random parameters") {
    Rng rng(4);
    for (std::size_t c = 0; c < testing::kCases; ++c) {
      const std::size_t per_class = testing::random_size(rng, 1, 30);
      Dataset small = gen_synthetic(testing::random_size(rng, 2, 5), 2, per_class, 0.1, rng.next_u64());
      const std::size_t N = testing::random_size(rng, 1, std::min<std::size_t>(12, small.size()));
      const double alpha = std::exp(rng.uniform(std::log(0.05), std::log(100.0)));
      const std::uint64_t seed = rng.next_u64();
      auto part = dirichlet_partition(small, N, alpha, seed);
      CAPTURE(seed);
      CHECK(part.num_clients() == N);
      check_set_partition(part, small.size());
      CHECK(dirichlet_partition(small, N, alpha, seed).clients == part.clients);
    }
  }
  SUBCASE("infeasible and invalid") {
    Dataset tiny = gen_synthetic(2, 2, 1, 0.1, 1);
    CHECK_THROWS_AS(dirichlet_partition(tiny, 3, 1.0, 1), DomainError);
    CHECK_THROWS_AS(dirichlet_partition(tiny, 2, 0.0, 1), DomainError);
  }
  SUBCASE("json round trip") {
    auto part = dirichlet_partition(ds, 5, 0.3, 9);
    CHECK(partition_from_json(partition_to_json(part)).clients == part.clients);
  }
}

TEST_CASE("unlearning requests and splits") {
  Dataset ds;
  ds.dim = 1;
  ds.num_classes = 3;
  for (int i = 0; i < 20; ++i) {
    ds.inputs.push_back(i);
    ds.labels.push_back(i % 3);
  }
  ClientPartition part;
  part.clients = {{0, 1, 2, 3, 4, 5, 6}, {7, 8, 9, 10, 11, 12, 13, 14, 15, 16}, {17, 18, 19}};

  SUBCASE("client granularity") {
    auto split = build_split(ds, part, UnlearnRequest::parse("client:0"));
    CHECK(split.forget_size() == 7);
    CHECK(split.remain_sizes()[0] == 0);
    CHECK(split.remain_size() == 13);
  }
  SUBCASE("class granularity") {
    auto split = build_split(ds, part, UnlearnRequest::parse("class:2:0,2"));
    CHECK(split.forget == std::vector<std::size_t>{17, 18});
    Dataset one = ds;
    for (std::size_t i : part.clients[2]) one.labels[i] = 1;
    CHECK_THROWS_AS(build_split(one, part, UnlearnRequest::parse("class:2:0,2")), DomainError);
  }
  SUBCASE("sample granularity") {
    auto a = build_split(ds, part, UnlearnRequest::parse("sample:1:0.5", 11));
    auto b = build_split(ds, part, UnlearnRequest::parse("sample:1:0.5", 11));
    CHECK(a.forget_size() == 5);
    CHECK(a.forget == b.forget);
    for (std::size_t i : a.forget) CHECK(std::find(part.clients[1].begin(), part.clients[1].end(), i) != part.clients[1].end());
  }
  SUBCASE("parsing") {
    CHECK(UnlearnRequest::parse("class:1:0,2").to_string() == "class:1:0,2");
    CHECK(UnlearnRequest::parse("sample:4:0.25").to_string() == "sample:4:0.25");
    CHECK_THROWS_AS(UnlearnRequest::parse("client"), ConfigError);
    CHECK_THROWS_AS(UnlearnRequest::parse("cohort:1"), ConfigError);
    CHECK_THROWS_AS(UnlearnRequest::parse("sample:1:1.5"), DomainError);
    CHECK_THROWS_AS(build_split(ds, part, UnlearnRequest::parse("client:5")), IndexError);
  }
  SUBCASE("forget and remain complement each other") {
    Rng rng(5);
    for (std::size_t c = 0; c < testing::kCases; ++c) {
      Dataset big = gen_synthetic(3, 2, 20, 0.1, rng.next_u64());
      auto p = dirichlet_partition(big, 4, 0.5, rng.next_u64());
      const std::size_t n = rng.below(4);
      std::string text;
      switch (rng.below(3)) {
        case 0: text = "client:" + std::to_string(n); break;
        case 1: text = "sample:" + std::to_string(n) + ":0.3"; break;
        default: {
          int cls = big.labels[p.clients[n].front()];
          text = "class:" + std::to_string(n) + ":" + std::to_string(cls);
        }
      }
      CAPTURE(text);
      auto split = build_split(big, p, UnlearnRequest::parse(text, rng.next_u64()));
      std::vector<std::size_t> merged = split.forget;
      merged.insert(merged.end(), split.remain.begin(), split.remain.end());
      std::sort(merged.begin(), merged.end());
      CHECK(merged == all_indices(big));
      std::size_t sum = 0;
      for (auto s : split.remain_sizes()) sum += s;
      CHECK(sum == split.remain_size());
    }
  }
}

}
