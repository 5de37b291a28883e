#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "wdgrl/diagnostics.h"

using namespace wdgrl;

namespace {

Tensor random_points(std::size_t n, std::size_t d, std::mt19937_64& rng, double shift = 0.0) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t({n, d});
  for (auto& v : t.storage()) v = nd(rng) + shift;
  return t;
}

Hypothesis random_hypothesis(std::size_t dim, std::uint64_t seed) {
  Hypothesis h{MlpSpec::domain_classifier(dim, 6), {}};
  h.params = init_params(h.spec, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& t : h.params.tensors) {
    for (auto& v : t.storage()) v += nd(rng);
  }
  return h;
}

}  // namespace

TEST_CASE("exact_w1: sorted and matching agree in 1-d") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_points(7, 1, rng);
    const Tensor b = random_points(7, 1, rng, 0.7);
    CHECK(exact_w1(a, b, W1Mode::kSorted1d) ==
          doctest::Approx(exact_w1(a, b, W1Mode::kMatching)).epsilon(1e-12));
  }
}

TEST_CASE("exact_w1: hand cases") {
  const Tensor a = Tensor::matrix(2, 2, {0, 0, 1, 0});
  const Tensor b = Tensor::matrix(2, 2, {1, 1, 0, 1});
  CHECK(exact_w1(a, b, W1Mode::kMatching) == doctest::Approx(1.0));
  CHECK(exact_w1(a, a, W1Mode::kMatching) == 0.0);
  const Tensor c = Tensor::matrix(3, 1, {0, 1, 2});
  const Tensor d = Tensor::matrix(3, 1, {5, 3, 4});
  CHECK(exact_w1(c, d, W1Mode::kSorted1d) == doctest::Approx(3.0));
}

TEST_CASE("exact_w1: errors") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(exact_w1(random_points(11, 2, rng), random_points(11, 2, rng), W1Mode::kMatching),
                  std::invalid_argument);
  CHECK_THROWS_AS(exact_w1(random_points(3, 1, rng), random_points(4, 1, rng), W1Mode::kSorted1d),
                  std::invalid_argument);
  CHECK_THROWS_AS(exact_w1(random_points(3, 2, rng), random_points(3, 2, rng), W1Mode::kSorted1d),
                  std::invalid_argument);
  CHECK_THROWS_AS(exact_w1(random_points(3, 2, rng), random_points(3, 1, rng), W1Mode::kMatching),
                  ShapeError);
}

TEST_CASE("spectral_norm") {
  CHECK(spectral_norm(Tensor::matrix(2, 2, {3, 0, 0, 1})) == doctest::Approx(3.0).epsilon(1e-8));
  // Rank one: ||u v^T|| = |u| |v|.
  const double u[3] = {1, -2, 2}, v[2] = {3, 4};
  Tensor w({3, 2});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) w.at(i, j) = u[i] * v[j];
  }
  CHECK(spectral_norm(w) == doctest::Approx(15.0).epsilon(1e-8));
  CHECK(spectral_norm(Tensor({2, 3})) == 0.0);
}

TEST_CASE("lipschitz_bound dominates observed slopes") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ud(-3, 3);
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Hypothesis h = random_hypothesis(3, s);
    const double k = lipschitz_bound(h.spec, h.params);
    CHECK(k > 0.0);
    for (int t = 0; t < 200; ++t) {
      const Tensor x = Tensor::matrix(2, 3, {ud(rng), ud(rng), ud(rng), ud(rng), ud(rng), ud(rng)});
      const auto out = h.outputs(x);
      double dist = 0.0;
      for (int k2 = 0; k2 < 3; ++k2) dist += std::pow(x.at(0, k2) - x.at(1, k2), 2);
      CHECK(std::abs(out[0] - out[1]) <= k * std::sqrt(dist) + 1e-12);
    }
  }
  // Single linear layer with a sigmoid head: |w| / 4.
  MlpSpec lin{{2, 1}, {Activation::kIdentity}, Head::kSigmoidLogit};
  ParamSet p{{Tensor::matrix(2, 1, {3, 4}), Tensor({1, 1})}};
  CHECK(lipschitz_bound(lin, p) == doctest::Approx(1.25).epsilon(1e-8));
}

TEST_CASE("bound_check: slack is non-negative on random instances") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    DomainPair pair;
    pair.source.features = random_points(6, 2, rng);
    pair.target.features = random_points(6, 2, rng, 1.0);
    pair.source.labels.assign(6, -1);
    pair.target.labels.assign(6, -1);
    const Hypothesis h = random_hypothesis(2, 100 + trial);
    const Hypothesis hp = random_hypothesis(2, 200 + trial);
    const std::vector<Hypothesis> cands = {h, hp};
    const auto f = [](std::span<const double> x) { return x[0] > 0 ? 1.0 : 0.0; };
    const BoundReport r = bound_check(h, hp, pair, f, cands);
    CHECK(r.slack >= -1e-12);
    CHECK(r.w1 > 0.0);
    REQUIRE(r.ideal_error.has_value());
    CHECK(*r.ideal_error >= 0.0);
    CHECK(*r.ideal_error <= 2.0);
  }
}

TEST_CASE("hypothesis needs a sigmoid head") {
  Hypothesis h{MlpSpec::critic(2, 4), {}};
  h.params = init_params(h.spec, 1);
  CHECK_THROWS_AS(h.outputs(Tensor({3, 2})), std::invalid_argument);
}

TEST_CASE("fit_pca2: recovers the dominant direction with a fixed sign") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor x({500, 3});
  for (std::size_t i = 0; i < 500; ++i) {
    const double t = 5.0 * nd(rng), s = 2.0 * nd(rng);
    x.at(i, 0) = t + 0.01 * nd(rng) + 4.0;
    x.at(i, 1) = -t + 0.01 * nd(rng);
    x.at(i, 2) = s;
  }
  Pca p = fit_pca2(x);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(p.axes[0][0]) == doctest::Approx(r).epsilon(1e-3));
  CHECK(std::abs(p.axes[0][1]) == doctest::Approx(r).epsilon(1e-3));
  CHECK(std::abs(p.axes[1][2]) == doctest::Approx(1.0).epsilon(1e-3));
  for (const auto& axis : p.axes) {
    std::size_t top = 0;
    for (std::size_t k = 1; k < axis.size(); ++k) {
      if (std::abs(axis[k]) > std::abs(axis[top])) top = k;
    }
    CHECK(axis[top] > 0.0);
  }
  // Negating the data flips nothing in the axes.
  Tensor neg = x;
  for (auto& v : neg.storage()) v = -v;
  const Pca q = fit_pca2(neg);
  for (int a = 0; a < 2; ++a) {
    for (int k = 0; k < 3; ++k) CHECK(q.axes[a][k] == doctest::Approx(p.axes[a][k]));
  }
  const Tensor proj = p.project(x);
  CHECK(proj.cols() == 2);
  double mean0 = 0.0;
  for (std::size_t i = 0; i < 500; ++i) mean0 += proj.at(i, 0);
  CHECK(std::abs(mean0 / 500.0) < 1e-9);
  CHECK_THROWS_AS(fit_pca2(Tensor({1, 3})), std::invalid_argument);
}

TEST_CASE("export_embeddings and TSV layout") {
  DomainPair pair = make_synthetic(SyntheticKind::kDistantBlobs, 10, -1.0, 2);
  const MlpSpec spec = MlpSpec::feature_extractor(2, {5});
  const ParamSet params = init_params(spec, 3);

  const auto raw = export_embeddings(spec, params, pair, Projection::kNone);
  REQUIRE(raw.size() == 20);
  CHECK(raw[0].coords.size() == 5);
  CHECK(raw[0].domain == "source");
  CHECK(raw[19].domain == "target");
  CHECK(raw[19].id == 19);

  const auto pca = export_embeddings(spec, params, pair, Projection::kPca2);
  CHECK(pca[0].coords.size() == 2);

  std::ostringstream out;
  write_embeddings_tsv(out, pca);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "id\tdomain\tlabel\tc0\tc1");
  std::getline(in, line);
  CHECK(line.rfind("0\tsource\t", 0) == 0);
  CHECK(parse_projection("pca2") == Projection::kPca2);
  CHECK_THROWS_AS(parse_projection("tsne"), std::invalid_argument);
}
