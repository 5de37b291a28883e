#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "wdgrl/nn.h"
#include "wdgrl/random.h"

using namespace wdgrl;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

double xent_value(const Tensor& logits, std::vector<int> labels) {
  Graph g;
  const NodeId x = g.constant(logits);
  return g.value(softmax_xent(g, x, labels)).item();
}

}  // namespace

TEST_CASE("MlpSpec validation") {
  CHECK_THROWS_AS((MlpSpec{{3}, {}, Head::kFeatures}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((MlpSpec{{3, 0}, {Activation::kRelu}, Head::kFeatures}.validate()),
                  std::invalid_argument);
  CHECK_THROWS_AS((MlpSpec{{3, 2}, {Activation::kIdentity}, Head::kScalar}.validate()),
                  std::invalid_argument);
  const MlpSpec critic = MlpSpec::critic(8);
  CHECK(critic.widths == std::vector<std::size_t>{8, 100, 1});
  CHECK(critic.head == Head::kScalar);
  const MlpSpec clf = MlpSpec::classifier(500, 2);
  CHECK(clf.head == Head::kSoftmax);
  CHECK(clf.output_dim() == 2);
}

TEST_CASE("init_params: Glorot bounds, zero biases, seeded") {
  const MlpSpec spec{{500, 100}, {Activation::kRelu}, Head::kFeatures};
  const ParamSet p = init_params(spec, 17);
  const double bound = std::sqrt(6.0 / 600.0);  // 0.1
  CHECK(bound == doctest::Approx(0.1));
  double largest = 0.0;
  for (double w : p.weight(0).data()) largest = std::max(largest, std::abs(w));
  CHECK(largest <= bound);
  CHECK(largest > 0.95 * bound);
  for (double b : p.bias(0).data()) CHECK(b == 0.0);
  CHECK(init_params(spec, 17) == p);
  CHECK_FALSE(init_params(spec, 18) == p);
}

TEST_CASE("apply: identity network passes input through") {
  MlpSpec spec{{3, 3}, {Activation::kIdentity}, Head::kFeatures};
  ParamSet p;
  p.tensors = {Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor({1, 3})};
  const Tensor x = Tensor::matrix(2, 3, {1.5, -2, 0.25, 4, 5, -6});
  CHECK(predict(spec, p, x) == x);
}

TEST_CASE("apply: zero-weight classifier gives uniform softmax rows") {
  const MlpSpec spec = MlpSpec::classifier(4, 5);
  ParamSet p = init_params(spec, 1);
  for (auto& t : p.tensors) std::fill(t.data().begin(), t.data().end(), 0.0);
  Graph g;
  const auto nodes = bind_params(g, p);
  Rng rng(2);
  const NodeId x = g.constant(random_tensor({3, 4}, rng));
  const NodeId probs = softmax_rows(g, apply(spec, g, nodes, x));
  for (double v : g.value(probs).data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("apply: hand-evaluated 2-2-1 network") {
  const MlpSpec spec = MlpSpec::critic(2, 2);
  ParamSet p;
  p.tensors = {Tensor::matrix(2, 2, {1.0, -1.0, 2.0, 0.5}), Tensor::matrix(1, 2, {0.5, -1.0}),
               Tensor::matrix(2, 1, {2.0, -3.0}), Tensor::matrix(1, 1, {0.25})};
  // x=(1,2): hidden = relu(5.5, -1) = (5.5, 0); out = 11 + 0.25.
  // x=(-1,0.5): hidden = relu(0.5, 0.25); out = 1 - 0.75 + 0.25.
  const Tensor out = predict(spec, p, Tensor::matrix(2, 2, {1.0, 2.0, -1.0, 0.5}));
  CHECK(std::abs(out[0] - 11.25) < 1e-12);
  CHECK(std::abs(out[1] - 0.5) < 1e-12);
  CHECK(out.shape() == Shape{2, 1});
}

TEST_CASE("apply rejects width mismatch") {
  const MlpSpec spec = MlpSpec::critic(3);
  const ParamSet p = init_params(spec, 3);
  CHECK_THROWS_AS(predict(spec, p, Tensor({4, 2})), ShapeError);
}

TEST_CASE("apply is permutation-equivariant across batch rows") {
  const MlpSpec spec = MlpSpec::feature_extractor(4, {7, 5});
  const ParamSet p = init_params(spec, 9);
  Rng rng(4);
  const Tensor x = random_tensor({6, 4}, rng);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  const Tensor permuted_out = predict(spec, p, gather_rows(x, perm));
  const Tensor out_permuted = gather_rows(predict(spec, p, x), perm);
  CHECK(permuted_out == out_permuted);
}

TEST_CASE("softmax_xent values") {
  CHECK(xent_value(Tensor::matrix(1, 2, {0.3, 0.3}), {1}) == doctest::Approx(std::log(2.0)));
  CHECK(xent_value(Tensor::matrix(1, 3, {100, 0, 0}), {0}) < 1e-40);
  // -log softmax([1,2])[0] = log(1 + e)
  CHECK(std::abs(xent_value(Tensor::matrix(1, 2, {1, 2}), {0}) - 1.3132616875182228) < 1e-14);
  CHECK_THROWS_AS(xent_value(Tensor::matrix(1, 2, {1, 2}), {2}), std::out_of_range);
  CHECK_THROWS_AS(xent_value(Tensor::matrix(1, 2, {1, 2}), {-1}), std::out_of_range);
}

TEST_CASE("softmax_xent gradient is (softmax - one_hot) / n") {
  Rng rng(8);
  Graph g;
  const Tensor logits = random_tensor({4, 3}, rng);
  const std::vector<int> labels = {0, 2, 1, 2};
  const NodeId x = g.parameter(logits);
  const NodeId loss = softmax_xent(g, x, labels);
  const Tensor grad = g.reverse_grad(loss).at(x);
  const Tensor p = g.value(softmax_rows(g, x));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double expected = (p.at(i, k) - (labels[i] == static_cast<int>(k) ? 1.0 : 0.0)) / 4.0;
      CHECK(std::abs(grad.at(i, k) - expected) < 1e-15);
    }
  }
  const NodeId params[] = {x};
  CHECK(fd_check(g, loss, params, 1e-5) < 1e-6);
}

TEST_CASE("adam_step: first step moves each coordinate by about lr") {
  ParamSet p;
  p.tensors = {Tensor::vector({1.0, -2.0, 0.5})};
  AdamState s = AdamState::for_params(p, 0.01);
  const std::vector<Tensor> g = {Tensor::vector({0.3, -4.0, 1e-3})};
  adam_step(s, p, g);
  CHECK(s.step == 1);
  // Bias correction makes m_hat = g and v_hat = g^2, so the step is
  // lr * g / (|g| + eps).
  const double expected[] = {1.0 - 0.01 * 0.3 / (0.3 + 1e-8), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8),
                             0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)};
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p.tensors[0][i] - expected[i]) < 1e-12);
}

TEST_CASE("adam_step: zero gradient and zero learning rate leave params fixed") {
  ParamSet p;
  p.tensors = {Tensor::vector({1.0, 2.0})};
  const ParamSet before = p;
  AdamState s = AdamState::for_params(p, 0.1);
  adam_step(s, p, std::vector<Tensor>{Tensor::vector({0.0, 0.0})});
  CHECK(p == before);
  CHECK(s.step == 1);

  AdamState frozen = AdamState::for_params(p, 0.0);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    adam_step(frozen, p, std::vector<Tensor>{random_tensor({2}, rng)});
  }
  CHECK(p == before);
  CHECK(frozen.step == 20);
}

TEST_CASE("adam_step rejects non-finite gradients with the step index") {
  ParamSet p;
  p.tensors = {Tensor::vector({1.0})};
  AdamState s = AdamState::for_params(p, 0.1);
  adam_step(s, p, std::vector<Tensor>{Tensor::vector({1.0})});
  const ParamSet before = p;
  try {
    adam_step(s, p, std::vector<Tensor>{Tensor::vector({INFINITY})});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
  CHECK(p == before);
  CHECK(s.step == 1);
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    const MlpSpec spec = MlpSpec::critic(3, 4);
    ParamSet p = init_params(spec, 5);
    AdamState s = AdamState::for_params(p, 1e-2);
    for (int i = 0; i < 3; ++i) {
      std::vector<Tensor> g;
      for (const auto& t : p.tensors) g.emplace_back(t.shape(), 0.1 * (i + 1));
      adam_step(s, p, g);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("classification loss decreases on a separable toy set") {
  Rng rng(21);
  std::normal_distribution<double> noise(0.0, 0.3);
  Tensor x({64, 2});
  std::vector<int> y(64);
  for (std::size_t i = 0; i < 64; ++i) {
    y[i] = static_cast<int>(i % 2);
    x.at(i, 0) = (y[i] ? 1.5 : -1.5) + noise(rng);
    x.at(i, 1) = noise(rng);
  }
  const MlpSpec spec = MlpSpec::classifier(2, 2, {8});
  ParamSet p = init_params(spec, 3);
  AdamState s = AdamState::for_params(p, 1e-2);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    Graph g;
    const auto nodes = bind_params(g, p);
    const NodeId loss = softmax_xent(g, apply(spec, g, nodes, g.constant(x)), y);
    losses.push_back(g.value(loss).item());
    adam_step(s, p, collect_grads(g.reverse_grad(loss, nodes), nodes));
  }
  for (std::size_t w = 1; w < 10; ++w) {
    const double prev = std::accumulate(losses.begin() + 10 * (w - 1), losses.begin() + 10 * w, 0.0) / 10;
    const double cur = std::accumulate(losses.begin() + 10 * w, losses.begin() + 10 * (w + 1), 0.0) / 10;
    CHECK(cur <= prev + 1e-3);
  }
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "wdgrl_nn_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ckpt.bin";
  const NamedParams nets = {{"extractor", init_params(MlpSpec::feature_extractor(3, {4}), 1)},
                            {"classifier", init_params(MlpSpec::classifier(4, 2), 2)}};
  save_checkpoint(path, nets);
  {
    std::ifstream in(path, std::ios::binary);
    std::string header;
    std::getline(in, header);
    CHECK(header == "wdgrl-checkpoint 1 extractor:3x4,1x4 classifier:4x2,1x2");
  }
  const std::size_t values = 12 + 4 + 8 + 2;
  CHECK(std::filesystem::file_size(path) ==
        std::string("wdgrl-checkpoint 1 extractor:3x4,1x4 classifier:4x2,1x2\n").size() + 8 * values);
  const NamedParams back = load_checkpoint(path);
  CHECK(back == nets);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS(load_checkpoint(path));
}
