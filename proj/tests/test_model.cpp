#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "scale/checkpoint.hpp"
#include "scale/error.hpp"
#include "scale/model.hpp"
#include "fd_oracle.hpp"
#include "support.hpp"

using namespace scale;

namespace {

// Plain triple-loop dense forward pass, independent of the library kernels.
Matrix reference_forward(const Model& m, const Matrix& x) {
  Matrix cur = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const LayerSpec& s = m.layer(l);
    REQUIRE(s.kind == LayerKind::dense);
    auto p = m.params(l);
    Matrix next(cur.rows, s.out_dim);
    for (std::size_t r = 0; r < cur.rows; ++r)
      for (std::size_t o = 0; o < s.out_dim; ++o) {
        long double acc = p[s.out_dim * s.in_dim + o];
        for (std::size_t i = 0; i < s.in_dim; ++i) acc += static_cast<long double>(p[o * s.in_dim + i]) * cur(r, i);
        double v = static_cast<double>(acc);
        next(r, o) = s.activation == Activation::relu ? std::max(0.0, v) : v;
      }
    cur = std::move(next);
  }
  return cur;
}

Model identity_layer(std::size_t n) {
  Model m(ArchId::custom, {LayerSpec::dense(n, n, Activation::none)});
  std::vector<double> p(n * n + n, 0.0);
  for (std::size_t i = 0; i < n; ++i) p[i * n + i] = 1.0;
  m.layer_write(0, p);
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("forward examples") {
  SUBCASE("zero weights give zero logits") {
    Model m(ArchId::mlp, {LayerSpec::dense(5, 7), LayerSpec::dense(7, 3, Activation::none)});
    Rng rng(1);
    auto b = testing::random_batch(rng, 5, 3, 6);
    auto z = forward(m, b.inputs);
    CHECK(z.rows == 6);
    CHECK(z.cols == 3);
    CHECK(std::all_of(z.data.begin(), z.data.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("identity layer returns its input") {
    Model m = identity_layer(4);
    Rng rng(2);
    auto b = testing::random_batch(rng, 4, 4, 3);
    CHECK(forward(m, b.inputs).data == b.inputs.data);
  }
  SUBCASE("matches a reference matrix-multiply pass") {
    Model m = Model::mlp(6, {9}, 4, 77);
    Rng rng(3);
    auto b = testing::random_batch(rng, 6, 4, 8);
    CHECK(testing::max_abs_diff(forward(m, b.inputs).data, reference_forward(m, b.inputs).data) < 1e-6);
  }
  SUBCASE("dimension mismatch is a shape error") {
    Model m = Model::mlp(6, {9}, 4, 77);
    CHECK_THROWS_AS(forward(m, Matrix(2, 5)), ShapeError);
  }
}

TEST_CASE("reference forward agrees on random deep models") {
  Rng rng(4);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    Model m = testing::random_mlp(rng, 12);
    auto b = testing::random_batch(rng, m.input_dim(), m.num_classes(), testing::random_size(rng, 1, 6));
    CHECK(testing::max_abs_diff(forward(m, b.inputs).data, reference_forward(m, b.inputs).data) < 1e-9);
  }
}

TEST_CASE("loss examples") {
  SUBCASE("zero model has loss ln C") {
    for (std::size_t C : {2u, 3u, 4u, 10u}) {
      Model m(ArchId::mlp, {LayerSpec::dense(3, 5), LayerSpec::dense(5, C, Activation::none)});
      Rng rng(C);
      auto b = testing::random_batch(rng, 3, C, 7);
      CHECK(std::abs(loss(m, b) - std::log(static_cast<double>(C))) <= 1e-9);
    }
  }
  SUBCASE("loss equals mean negative log-softmax of the true label") {
    Model m = Model::mlp(4, {6}, 3, 5);
    Rng rng(5);
    auto b = testing::random_batch(rng, 4, 3, 9);
    auto z = reference_forward(m, b.inputs);
    double expect = 0.0;
    for (std::size_t r = 0; r < b.size(); ++r) {
      double mx = *std::max_element(z.row(r).begin(), z.row(r).end());
      double se = 0.0;
      for (double v : z.row(r)) se += std::exp(v - mx);
      expect -= z(r, b.labels[r]) - mx - std::log(se);
    }
    expect /= static_cast<double>(b.size());
    CHECK(loss(m, b) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("duplicating the batch leaves loss and gradients unchanged") {
    Model m = Model::mlp(4, {6, 5}, 3, 6);
    Rng rng(6);
    auto b = testing::random_batch(rng, 4, 3, 5);
    Batch twice;
    twice.inputs = Matrix(10, 4);
    for (std::size_t r = 0; r < 10; ++r)
      std::copy(b.inputs.row(r % 5).begin(), b.inputs.row(r % 5).end(), twice.inputs.row(r).begin());
    for (std::size_t r = 0; r < 10; ++r) twice.labels.push_back(b.labels[r % 5]);
    auto one = loss_and_grads(m, b);
    auto two = loss_and_grads(m, twice);
    CHECK(two.loss == doctest::Approx(one.loss).epsilon(1e-13));
    for (std::size_t l = 0; l < m.num_layers(); ++l) CHECK(testing::max_abs_diff(one.grads.layers[l], two.grads.layers[l]) < 1e-14);
  }
  SUBCASE("non-finite parameters raise a numeric error naming the layer") {
    Model m = Model::mlp(4, {6}, 3, 7);
    m.mutable_params(1)[0] = std::nan("");
    Rng rng(7);
    auto b = testing::random_batch(rng, 4, 3, 2);
    try {
      (void)loss_and_grads(m, b);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.layer() == 1);
    }
  }
  SUBCASE("label outside the class range") {
    Model m = Model::mlp(4, {6}, 3, 7);
    Rng rng(8);
    auto b = testing::random_batch(rng, 4, 3, 2);
    b.labels[1] = 3;
    CHECK_THROWS_AS(loss(m, b), ShapeError);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // Same oracle as the acceptance gate, on every layer kind.
  SUBCASE("three-layer MLP") {
    Rng rng(21);
    for (std::size_t c = 0; c < 10; ++c) {
      Model m = Model::mlp(5, {7, 6}, 4, rng.next_u64());
      auto b = testing::random_batch(rng, 5, 4, 4);
      auto rep = testing::finite_difference_check(m, b);
      CAPTURE(c);
      CHECK(rep.max_rel < 1e-5);
      CHECK(rep.enough_coverage());
    }
  }
  SUBCASE("mini CNN") {
    Rng rng(22);
    for (std::size_t c = 0; c < 3; ++c) {
      Model m = Model::mini_cnn(1, 4, 4, 3, 5, rng.next_u64());
      auto b = testing::random_batch(rng, 16, 3, 2);
      auto rep = testing::finite_difference_check(m, b);
      CAPTURE(c);
      CHECK(rep.max_rel < 1e-5);
      CHECK(rep.enough_coverage());
    }
  }
}

TEST_CASE("sgd_step") {
  SUBCASE("zero gradient leaves the model unchanged") {
    Model m = Model::mlp(3, {4}, 2, 9);
    Model before = m;
    sgd_step(m, m.zero_gradients(), 0.3);
    CHECK(m == before);
  }
  SUBCASE("single coordinate arithmetic") {
    Model m(ArchId::custom, {LayerSpec::dense(1, 1, Activation::none)});
    m.layer_write(0, std::vector<double>{2.0, 0.0});
    Gradients g = m.zero_gradients();
    g.layers[0] = {0.5, 0.0};
    sgd_step(m, g, 1.0);
    CHECK(m.params(0)[0] == 1.5);
  }
  SUBCASE("sequential steps recompute the gradient") {
    Model m = Model::mlp(4, {5}, 3, 10);
    Rng rng(10);
    auto b = testing::random_batch(rng, 4, 3, 6);
    const double eta = 0.1;

    Model seq = m;
    sgd_step(seq, loss_and_grads(seq, b).grads, eta);
    sgd_step(seq, loss_and_grads(seq, b).grads, eta);

    Model lump = m;
    auto g = loss_and_grads(m, b).grads;
    g.scale(2.0);
    sgd_step(lump, g, eta);

    // Recorded on the scalar path; tolerance covers the AVX2 path.
    CHECK(loss(m, b) == doctest::Approx(1.316257276158).epsilon(1e-9));
    CHECK(loss(seq, b) == doctest::Approx(1.222560233910).epsilon(1e-9));
    CHECK(!(seq == lump));
  }
  SUBCASE("shape mismatch") {
    Model m = Model::mlp(3, {4}, 2, 9);
    Gradients g = m.zero_gradients();
    g.layers.pop_back();
    CHECK_THROWS_AS(sgd_step(m, g, 0.1), ShapeError);
  }
}

TEST_CASE("layer access") {
  Model m = Model::mlp(3, {4, 5}, 2, 11);
  std::vector<double> v(m.params(0).size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) * 0.5;
  m.layer_write(0, v);
  CHECK(m.layer_view(0) == v);

  std::size_t total = 0;
  for (std::size_t l = 0; l < m.num_layers(); ++l) total += m.layer_view(l).size();
  CHECK(total == m.total_params());
  CHECK(total == (3 * 4 + 4) + (4 * 5 + 5) + (5 * 2 + 2));

  CHECK_THROWS_AS(m.layer_view(m.num_layers()), IndexError);
  CHECK_THROWS_AS(m.layer_write(1, v), ShapeError);
}

TEST_CASE("initialisation and determinism") {
  Model a = Model::mlp(16, {64, 32, 16}, 4, 123);
  Model b = Model::mlp(16, {64, 32, 16}, 4, 123);
  Model c = Model::mlp(16, {64, 32, 16}, 4, 124);
  CHECK(a == b);
  CHECK(!(a == c));
  CHECK(a.num_layers() == 4);
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const auto& s = a.layer(l);
    const double lim = std::sqrt(6.0 / static_cast<double>(s.fan_in() + s.fan_out()));
    auto p = a.params(l);
    for (std::size_t i = 0; i < s.weight_count(); ++i) CHECK(std::abs(p[i]) <= lim);
    for (std::size_t i = s.weight_count(); i < p.size(); ++i) CHECK(p[i] == 0.0);
  }
  Rng rng(12);
  auto batch = testing::random_batch(rng, 16, 4, 10);
  CHECK(loss(a, batch) == loss(b, batch));
  CHECK_THROWS_AS(Model(ArchId::custom, {LayerSpec::dense(3, 4, Activation::none), LayerSpec::dense(4, 2)}),
                  ShapeError);
}

TEST_CASE("adam and gradient clipping") {
  Model m = Model::mlp(4, {6}, 3, 13);
  Rng rng(13);
  auto b = testing::random_batch(rng, 4, 3, 16);
  Adam opt(m, 0.01);
  const double first = loss(m, b);
  for (int i = 0; i < 200; ++i) opt.step(m, loss_and_grads(m, b).grads);
  CHECK(loss(m, b) < first);

  Gradients g = m.zero_gradients();
  g.layers[0][0] = 3.0;
  g.layers[1][0] = 4.0;
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(1.0));
  CHECK(clip_grad_norm(g, 2.0) == doctest::Approx(1.0));
  CHECK(g.layers[0][0] == doctest::Approx(0.6));
}

TEST_CASE("checkpoint round trip") {
  auto dir = testing::scratch_dir("ckpt");
  Model m = Model::mini_cnn(1, 5, 5, 3, 6, 99);
  save_model(m, dir / "net", std::string("abc"));
  Model back = load_model(dir / "net");
  CHECK(back == m);
  CHECK(back.seed() == 99);
  CHECK(back.arch() == ArchId::mini_cnn);

  std::filesystem::resize_file(dir / "net.model", 16);
  CHECK_THROWS_AS(load_model(dir / "net"), FormatError);
  CHECK_THROWS_AS(load_model(dir / "missing"), FormatError);
}

}
