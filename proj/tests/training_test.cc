#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "wdgrl/training.h"

using namespace wdgrl;

namespace {

TrainConfig small_config(DivergenceKind kind) {
  TrainConfig cfg;
  cfg.divergence = kind;
  cfg.extractor_hidden = {8};
  cfg.critic_hidden = 16;
  cfg.domain_hidden = 16;
  cfg.batch_size = 16;
  cfg.iterations = 30;
  cfg.eval_every = 10;
  cfg.lr = 1e-3;
  cfg.critic_lr = 1e-3;
  cfg.seed = 4;
  return cfg;
}

bool all_zero(const ParamSet& a, const ParamSet& b) { return a == b; }

}  // namespace

TEST_CASE("TrainConfig defaults and validation") {
  const TrainConfig cfg;
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.critic_steps == 5);
  CHECK(cfg.gamma == 10.0);
  CHECK(cfg.critic_lr == 1e-4);
  CHECK(cfg.lr == 1e-4);
  cfg.validate();
  TrainConfig bad = cfg;
  bad.batch_size = 63;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.critic_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("set_train_key / get_train_key round trip") {
  TrainConfig cfg;
  for (const auto& key : train_keys()) {
    TrainConfig copy;
    set_train_key(copy, key, get_train_key(cfg, key));
    CHECK(copy == cfg);
  }
  set_train_key(cfg, "extractor_hidden", "64x32");
  CHECK(cfg.extractor_hidden == std::vector<std::size_t>{64, 32});
  set_train_key(cfg, "classifier_hidden", "none");
  CHECK(cfg.classifier_hidden.empty());
  set_train_key(cfg, "lambda", "0.25");
  CHECK(cfg.lambda == 0.25);
  CHECK_THROWS_AS(set_train_key(cfg, "lambda", "abc"), std::invalid_argument);
  CHECK_THROWS_AS(set_train_key(cfg, "lambda", "1.0x"), std::invalid_argument);
  CHECK_THROWS_AS(set_train_key(cfg, "nope", "1"), std::invalid_argument);
}

TEST_CASE("evaluate_accuracy: exact cases") {
  const MlpSpec ext{{2, 2}, {Activation::kIdentity}, Head::kFeatures};
  ParamSet id;
  id.tensors = {Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor({1, 2})};
  const MlpSpec clf = MlpSpec::classifier(2, 2);
  ParamSet pass = id;
  LabeledSet data;
  data.features = Tensor::matrix(4, 2, {1, 0, 0, 1, 2, -1, -1, 3});
  data.labels = {0, 1, 0, 1};
  CHECK(evaluate_accuracy(ext, id, clf, pass, data) == 1.0);

  // All logits equal: every row goes to class 0.
  ParamSet zero = pass;
  for (auto& t : zero.tensors) std::fill(t.data().begin(), t.data().end(), 0.0);
  CHECK(evaluate_accuracy(ext, id, clf, zero, data) == 0.5);

  LabeledSet empty;
  empty.features = Tensor({0, 2});
  CHECK_THROWS_AS(evaluate_accuracy(ext, id, clf, pass, empty), std::invalid_argument);
  data.labels[0] = -1;
  CHECK_THROWS_AS(evaluate_accuracy(ext, id, clf, pass, data), std::invalid_argument);
}

TEST_CASE("evaluate_accuracy: zero network on synthetic data is exactly 0.5") {
  const DomainPair p = make_synthetic(SyntheticKind::kDistantBlobs, 200, -1, 1);
  const MlpSpec ext = MlpSpec::feature_extractor(2, {5});
  const MlpSpec clf = MlpSpec::classifier(5, 2);
  ParamSet e = init_params(ext, 1), c = init_params(clf, 2);
  for (auto& t : e.tensors) std::fill(t.data().begin(), t.data().end(), 0.0);
  CHECK(evaluate_accuracy(ext, e, clf, c, p.target) == 0.5);
}

TEST_CASE("WDGRL phases touch only their own parameters") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 2);
  Trainer t(p, small_config(DivergenceKind::kWasserstein));
  for (int i = 0; i < 3; ++i) {
    const Batch b = t.next_batch();
    const ParamSet g0 = t.extractor(), c0 = t.classifier(), w0 = t.critic().params;
    t.critic_phase(b);
    CHECK(all_zero(t.extractor(), g0));
    CHECK(all_zero(t.classifier(), c0));
    CHECK_FALSE(t.critic().params == w0);

    const ParamSet w1 = t.critic().params;
    t.main_phase(b);
    CHECK(t.critic().params == w1);
    CHECK_FALSE(t.extractor() == g0);
    CHECK_FALSE(t.classifier() == c0);
  }
}

TEST_CASE("lambda = 0 reproduces source-only exactly for every divergence") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 3);
  TrainConfig base = small_config(DivergenceKind::kNone);
  const ExperimentResult ref = train(p, base);
  for (auto kind : {DivergenceKind::kWasserstein, DivergenceKind::kMmd,
                    DivergenceKind::kCoral, DivergenceKind::kDann}) {
    TrainConfig cfg = base;
    cfg.divergence = kind;
    cfg.lambda = 0.0;
    const ExperimentResult r = train(p, cfg);
    CAPTURE(to_string(kind));
    CHECK(r.params[0].second == ref.params[0].second);
    CHECK(r.params[1].second == ref.params[1].second);
    REQUIRE(r.trace.size() == ref.trace.size());
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      CHECK(r.trace[i].loss_c == ref.trace[i].loss_c);
      CHECK(r.trace[i].acc_tgt == ref.trace[i].acc_tgt);
    }
  }
}

TEST_CASE("target labels never reach a gradient") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 5);
  DomainPair corrupted = p;
  for (auto& y : corrupted.target.labels) y = 1 - y;
  for (auto kind : {DivergenceKind::kWasserstein, DivergenceKind::kMmd,
                    DivergenceKind::kCoral, DivergenceKind::kDann, DivergenceKind::kNone}) {
    TrainConfig cfg = small_config(kind);
    cfg.iterations = 12;
    const ExperimentResult a = train(p, cfg);
    const ExperimentResult b = train(corrupted, cfg);
    CAPTURE(to_string(kind));
    for (std::size_t k = 0; k < a.params.size(); ++k) {
      CHECK(a.params[k].second == b.params[k].second);
    }
    CHECK(a.trace.back().acc_tgt + b.trace.back().acc_tgt == doctest::Approx(1.0));
  }
}

TEST_CASE("runs are bitwise reproducible and seed-sensitive") {
  const DomainPair p = make_synthetic(SyntheticKind::kDistantBlobs, 64, -1, 6);
  for (auto kind : {DivergenceKind::kWasserstein, DivergenceKind::kDann}) {
    TrainConfig cfg = small_config(kind);
    const ExperimentResult a = train(p, cfg);
    const ExperimentResult b = train(p, cfg);
    CHECK(a.trace == b.trace);
    std::ostringstream sa, sb;
    write_trace_csv(sa, a.trace);
    write_trace_csv(sb, b.trace);
    CHECK(sa.str() == sb.str());
    cfg.seed += 1;
    CHECK_FALSE(train(p, cfg).trace == a.trace);
  }
}

TEST_CASE("trace layout and bookkeeping") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 7);
  TrainConfig cfg = small_config(DivergenceKind::kWasserstein);
  cfg.iterations = 25;
  const ExperimentResult r = train(p, cfg);
  REQUIRE(r.trace.size() == 3);
  CHECK(r.trace[0].iter == 10);
  CHECK(r.trace[1].iter == 20);
  CHECK(r.trace[2].iter == 25);
  CHECK(r.gnorm_div_all.size() == 25);
  CHECK(r.div_all.size() == 25);
  CHECK(r.iterations == 25);
  CHECK(r.acc_tgt == r.trace.back().acc_tgt);
  for (const auto& rec : r.trace) {
    CHECK(r.best_acc_tgt >= rec.acc_tgt);
    CHECK(rec.gnorm_div > 0.0);
    CHECK(std::isfinite(rec.grad_penalty));
  }
  CHECK(r.params.size() == 3);
  CHECK(r.params[2].first == "critic");

  std::ostringstream out;
  write_trace_csv(out, r.trace);
  const std::string csv = out.str();
  CHECK(csv.rfind("iter,loss_c,div_value,grad_penalty,gnorm_cls,gnorm_div,acc_src,acc_tgt\n", 0) ==
        0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  std::ostringstream sum;
  write_summary_csv(sum, "blobs", r);
  CHECK(sum.str().rfind("task,approach,acc_src,acc_tgt,best_acc_tgt,iterations,seed,seconds\n"
                        "blobs,WDGRL,",
                        0) == 0);
}

TEST_CASE("MMD on identical domains stays at the estimator's bias floor") {
  // The V-statistic keeps the k(x, x) = 1 diagonal terms, so on identical
  // distributions its expectation is (2/n)(1 - E k(x, y)), not 0. With
  // n = 32 per domain that floor is about 0.03.
  const DomainPair p = make_synthetic(SyntheticKind::kIdentical, 256, -1, 8);
  TrainConfig cfg = small_config(DivergenceKind::kMmd);
  cfg.batch_size = 64;
  cfg.eval_every = 1;
  const ExperimentResult r = train(p, cfg);
  for (const auto& rec : r.trace) CHECK(rec.div_value < 2.0 / 32);
}

TEST_CASE("train entry points check the divergence kind") {
  const DomainPair p = make_synthetic(SyntheticKind::kIdentical, 16, -1, 1);
  CHECK_THROWS_AS(train_wdgrl(p, small_config(DivergenceKind::kMmd)), std::invalid_argument);
  CHECK_THROWS_AS(train_with_divergence(p, small_config(DivergenceKind::kWasserstein)),
                  std::invalid_argument);
  TrainConfig cfg = small_config(DivergenceKind::kNone);
  cfg.batch_size = 64;  // half-batch 32 > 16 rows
  CHECK_THROWS_AS(train(p, cfg), std::invalid_argument);
}

TEST_CASE("non-finite training aborts with the partial trace") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 9);
  TrainConfig cfg = small_config(DivergenceKind::kWasserstein);
  cfg.lr = 1e200;
  cfg.iterations = 50;
  cfg.eval_every = 1;
  try {
    train(p, cfg);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(std::string(e.what()).find("training aborted at iteration") != std::string::npos);
    CHECK(e.partial().iterations < 50);
  }
}

TEST_CASE("grid expansion order and cap") {
  const Grid grid = {{"lambda", {"0", "1"}}, {"gamma", {"1", "10", "100"}}};
  const auto points = expand_grid(grid, 6);
  REQUIRE(points.size() == 6);
  CHECK(points[0] == GridPoint{{"lambda", "0"}, {"gamma", "1"}});
  CHECK(points[1] == GridPoint{{"lambda", "0"}, {"gamma", "10"}});
  CHECK(points[5] == GridPoint{{"lambda", "1"}, {"gamma", "100"}});
  CHECK_THROWS_AS(expand_grid(grid, 5), std::invalid_argument);
  CHECK_THROWS_AS(expand_grid({}, 5), std::invalid_argument);
  CHECK_THROWS_AS(expand_grid({{"lambda", {}}}, 5), std::invalid_argument);
}

TEST_CASE("grid_search: single point equals train, workers do not change results") {
  const DomainPair p = make_synthetic(SyntheticKind::kOverlappingBlobs, 64, -1, 10);
  const TrainConfig base = small_config(DivergenceKind::kCoral);
  const GridResult one = grid_search(p, base, {{"lambda", {"0.5"}}});
  TrainConfig cfg = base;
  cfg.lambda = 0.5;
  CHECK(one.results[0].trace == train(p, cfg).trace);

  const Grid grid = {{"lambda", {"0", "0.1", "1"}}, {"divergence", {"coral", "mmd"}}};
  const GridResult serial = grid_search(p, base, grid, 64, 1);
  const GridResult parallel = grid_search(p, base, grid, 64, 3);
  REQUIRE(serial.results.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(serial.results[i].trace == parallel.results[i].trace);
    CHECK(serial.results[serial.best].acc_tgt >= serial.results[i].acc_tgt);
  }
  CHECK(serial.best == parallel.best);
  for (std::size_t i = 0; i < serial.best; ++i) {
    CHECK(serial.results[i].acc_tgt < serial.results[serial.best].acc_tgt);
  }
}
