#include <doctest.h>

#include <cmath>
#include <random>

#include "topkast/graph.hpp"
#include "topkast/param_store.hpp"

using namespace topkast;

namespace {

ComputeGraph<double> linear_graph(Index in, Index out, LossKind loss = LossKind::SquaredError) {
  return make_mlp<double>({in, out}, loss);
}

std::vector<Tensor<double>> random_params(const ComputeGraph<double>& g, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<Tensor<double>> out;
  for (const ParamSlot& s : g.slots()) {
    Tensor<double> t(s.shape);
    for (double& v : t.flat()) v = n(rng);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes") {
  CHECK_THROWS_AS(Tensor<double>({2, 2}, Vector<double>::Zero(3)), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({0, 2}), DimensionError);
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor<double>({6}).matrix(), DimensionError);
}

TEST_CASE("forward through an identity layer returns the input") {
  auto g = linear_graph(2, 2);
  std::vector<Tensor<double>> params{Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}), Tensor<double>({2})};
  const Tensor<double> y = g.forward(params, Tensor<double>({1, 2}, {1.0, 2.0}));
  CHECK(y.shape() == std::vector<Index>{1, 2});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("all-zero parameters give all-zero output for a linear graph") {
  auto g = make_mlp<double>({3, 4, 2}, LossKind::SquaredError);
  std::vector<Tensor<double>> params;
  for (const ParamSlot& s : g.slots()) params.emplace_back(s.shape);
  const Tensor<double> y = g.forward(params, Tensor<double>({2, 3}, {1, 2, 3, -4, 5, -6}));
  CHECK(y.values().isZero(0.0));
}

TEST_CASE("two-layer MLP matches a hand matrix multiply") {
  auto g = make_mlp<double>({4, 3, 2}, LossKind::SoftmaxCrossEntropy);
  std::vector<Tensor<double>> params{
      Tensor<double>({3, 4}, {0.2, -0.1, 0.4, 0.05, -0.3, 0.25, 0.1, -0.2, 0.15, 0.35, -0.45, 0.3}),
      Tensor<double>({3}, {0.1, -0.05, 0.0}),
      Tensor<double>({2, 3}, {0.5, -0.4, 0.3, -0.2, 0.6, 0.1}),
      Tensor<double>({2}, {0.01, -0.02}),
  };
  const Tensor<double> y = g.forward(params, Tensor<double>({1, 4}, {1.0, -2.0, 0.5, 3.0}));
  // hidden pre-activations 0.85, -1.4, 0.125
  CHECK(y[0] == doctest::Approx(0.4725).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(-0.1775).epsilon(1e-14));
}

TEST_CASE("forward reports dimension and numeric errors") {
  auto g = linear_graph(2, 2);
  std::vector<Tensor<double>> params{Tensor<double>({2, 2}, {1, 0, 0, 1}), Tensor<double>({2})};
  CHECK_THROWS_AS(g.forward(params, Tensor<double>({1, 3})), DimensionError);
  std::vector<Tensor<double>> wrong{Tensor<double>({2, 3}), Tensor<double>({2})};
  CHECK_THROWS_AS(g.forward(wrong, Tensor<double>({1, 2})), DimensionError);

  params[0][0] = std::numeric_limits<double>::infinity();
  try {
    g.forward(params, Tensor<double>({1, 2}, {1.0, 0.0}));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fc0.matmul") != std::string::npos);
  }
}

TEST_CASE("backward before forward is a state error") {
  auto g = linear_graph(2, 2);
  std::vector<ActiveSet> all(2, ActiveSet::all());
  CHECK_THROWS_AS(g.backward(1.0, std::span<const ActiveSet>(all)), StateError);
}

TEST_CASE("squared loss of a single weight has derivative 2w") {
  auto g = linear_graph(1, 1);
  std::vector<Tensor<double>> params{Tensor<double>({1, 1}, {3.0}), Tensor<double>({1})};
  const Tensor<double> x({1, 1}, {1.0});
  const Tensor<double> target({1, 1}, {0.0});
  g.forward(params, x);
  CHECK(g.loss(target) == 9.0);
  const IndexSet w{0};
  const IndexSet none;
  std::vector<IndexSet> sets{w, none};
  const auto grads = g.backward(1.0, std::span<const IndexSet>(sets));
  REQUIRE(grads[0].size() == 1);
  CHECK(grads[0].values[0] == doctest::Approx(6.0));
  CHECK(grads[1].empty());
}

TEST_CASE("central differences of simple scalar functions") {
  CHECK(central_difference([](double w) { return w * w; }, 3.0, 1e-5) == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(central_difference([](double w) { return std::abs(w); }, 2.0, 1e-5) == doctest::Approx(1.0).epsilon(1e-6));

  auto g = linear_graph(1, 1);
  std::vector<Tensor<double>> params{Tensor<double>({1, 1}, {3.0}), Tensor<double>({1})};
  const double fd = finite_diff_grad(g, params, Tensor<double>({1, 1}, {1.0}), Tensor<double>({1, 1}, {0.0}),
                                     ParamIndex{0, 0}, 1e-5);
  CHECK(std::abs(fd - 6.0) < 1e-6);
}

TEST_CASE("backward with full index sets matches central differences") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    const bool classify = trial % 2 == 0;
    auto g = make_mlp<double>({5, 7, 6, 3}, classify ? LossKind::SoftmaxCrossEntropy : LossKind::SquaredError);
    auto params = random_params(g, rng);
    Tensor<double> x({4, 5});
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : x.flat()) v = n(rng);
    std::vector<int> labels{0, 2, 1, 2};
    Tensor<double> targets({4, 3});
    for (double& v : targets.flat()) v = n(rng);

    g.forward(params, x);
    if (classify) {
      g.loss(labels);
    } else {
      g.loss(targets);
    }
    // skip draws with a hidden unit near the ReLU kink
    bool near_kink = false;
    for (const auto& node : g.nodes()) {
      if (node.kind == OpKind::Relu && (g.value(node.lhs).array().abs() < 1e-3).any()) near_kink = true;
    }
    if (near_kink) continue;
    std::vector<ActiveSet> all(g.slots().size(), ActiveSet::all());
    const auto grads = g.backward(1.0, std::span<const ActiveSet>(all));

    std::uniform_int_distribution<std::size_t> pick_slot(0, g.slots().size() - 1);
    for (int k = 0; k < 20; ++k) {
      const std::size_t slot = pick_slot(rng);
      std::uniform_int_distribution<Index> pick_off(0, params[slot].size() - 1);
      const Index off = pick_off(rng);
      const double fd = classify ? finite_diff_grad(g, params, x, labels, ParamIndex{slot, off}, 1e-5)
                                 : finite_diff_grad(g, params, x, targets, ParamIndex{slot, off}, 1e-5);
      const double an = grads[slot].values[static_cast<std::size_t>(off)];
      CHECK(std::abs(an - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("sparse backward returns exactly the requested offsets") {
  std::mt19937_64 rng(3);
  auto g = make_mlp<double>({4, 5, 3}, LossKind::SoftmaxCrossEntropy);
  auto params = random_params(g, rng);
  Tensor<double> x({2, 4}, {0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.2});
  std::vector<int> labels{1, 2};
  g.forward(params, x);
  g.loss(labels);
  std::vector<ActiveSet> all(4, ActiveSet::all());
  const auto dense = g.backward(1.0, std::span<const ActiveSet>(all));

  std::vector<IndexSet> sets{{0, 3, 19}, {}, {2, 14}, {1}};
  const auto sparse = g.backward(1.0, std::span<const IndexSet>(sets));
  for (std::size_t s = 0; s < sets.size(); ++s) {
    CHECK(sparse[s].indices == sets[s]);
    for (std::size_t k = 0; k < sets[s].size(); ++k) {
      CHECK(sparse[s].values[k] == dense[s].values[sets[s][k]]);
    }
  }

  std::vector<IndexSet> out_of_range{{20}, {}, {}, {}};
  CHECK_THROWS_AS(g.backward(1.0, std::span<const IndexSet>(out_of_range)), ArgumentError);
}

TEST_CASE("relu subgradient at exactly zero is zero") {
  ComputeGraph<double> g;
  const int w = g.add_param_slot("w", {1, 1}, true);
  const int x = g.input(1);
  const int y = g.relu(g.matmul(x, w));
  g.set_output(y, LossKind::SquaredError);
  std::vector<Tensor<double>> params{Tensor<double>({1, 1}, {0.0})};
  g.forward(params, Tensor<double>({1, 1}, {1.0}));
  g.loss(Tensor<double>({1, 1}, {1.0}));
  std::vector<ActiveSet> all(1, ActiveSet::all());
  CHECK(g.backward(1.0, std::span<const ActiveSet>(all))[0].values[0] == 0.0);
}

TEST_CASE("add and scale nodes differentiate correctly") {
  ComputeGraph<double> g;
  const int w = g.add_param_slot("w", {1, 1}, true);
  const int x = g.input(1);
  const int h = g.matmul(x, w);
  const int y = g.add(g.scale(h, 3.0), h);  // 4 * w * x
  g.set_output(y, LossKind::SquaredError);
  std::vector<Tensor<double>> params{Tensor<double>({1, 1}, {0.5})};
  g.forward(params, Tensor<double>({1, 1}, {2.0}));
  CHECK(g.loss(Tensor<double>({1, 1}, {0.0})) == doctest::Approx(16.0));
  std::vector<ActiveSet> all(1, ActiveSet::all());
  // d/dw (8w)^2 = 128 w
  CHECK(g.backward(1.0, std::span<const ActiveSet>(all))[0].values[0] == doctest::Approx(64.0));
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(9);
  auto g = make_mlp<float>({6, 8, 4}, LossKind::SoftmaxCrossEntropy);
  DenseParamStore<float> store(g);
  store.init_he(5);
  const auto params = store.tensors();
  Tensor<float> x({3, 6});
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (float& v : x.flat()) v = n(rng);
  const Tensor<float> a = g.forward(params, x);
  const Tensor<float> b = g.forward(params, x);
  CHECK(a == b);
}

TEST_CASE("softmax cross-entropy is stable for large logits") {
  auto g = linear_graph(1, 2, LossKind::SoftmaxCrossEntropy);
  std::vector<Tensor<double>> params{Tensor<double>({2, 1}, {1000.0, -1000.0}), Tensor<double>({2})};
  g.forward(params, Tensor<double>({1, 1}, {1.0}));
  const std::vector<int> labels{0};
  CHECK(g.loss(labels) == doctest::Approx(0.0));
  const std::vector<int> wrong{1};
  CHECK(g.loss(wrong) == doctest::Approx(2000.0));
}
