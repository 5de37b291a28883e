#include "wdgrl/training.h"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace wdgrl {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (batch_size < 2 || batch_size % 2 != 0) fail("batch_size must be even and >= 2");
  if (critic_steps < 1) fail("critic_steps must be >= 1");
  if (!(gamma >= 0)) fail("gamma must be >= 0");
  if (!(lambda >= 0)) fail("lambda must be >= 0");
  if (!(critic_lr >= 0) || !(lr >= 0)) fail("learning rates must be >= 0");
  if (iterations < 1) fail("iterations must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (extractor_hidden.empty()) fail("extractor_hidden needs at least one layer");
  for (auto w : extractor_hidden) {
    if (w == 0) fail("extractor_hidden widths must be >= 1");
  }
  for (auto w : classifier_hidden) {
    if (w == 0) fail("classifier_hidden widths must be >= 1");
  }
  if (critic_hidden == 0 || domain_hidden == 0) fail("hidden widths must be >= 1");
}

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::invalid_argument("config: bad value '" + text + "' for " + key);
  }
  return v;
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find('x', start);
    out.push_back(parse_value<std::size_t>(key, text.substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string widths_str(const std::vector<std::size_t>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "x" : "") + std::to_string(w[i]);
  return s;
}

}  // namespace

const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys = {
      "divergence",   "lambda",           "gamma",         "batch_size",
      "critic_steps", "critic_lr",        "lr",            "iterations",
      "eval_every",   "seed",             "extractor_hidden", "classifier_hidden",
      "critic_hidden", "domain_hidden"};
  return keys;
}

void set_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "divergence") cfg.divergence = parse_divergence(value);
  else if (key == "lambda") cfg.lambda = parse_value<double>(key, value);
  else if (key == "gamma") cfg.gamma = parse_value<double>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_value<std::size_t>(key, value);
  else if (key == "critic_steps") cfg.critic_steps = parse_value<int>(key, value);
  else if (key == "critic_lr") cfg.critic_lr = parse_value<double>(key, value);
  else if (key == "lr") cfg.lr = parse_value<double>(key, value);
  else if (key == "iterations") cfg.iterations = parse_value<int>(key, value);
  else if (key == "eval_every") cfg.eval_every = parse_value<int>(key, value);
  else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "extractor_hidden") cfg.extractor_hidden = parse_widths(key, value);
  else if (key == "classifier_hidden") cfg.classifier_hidden = parse_widths(key, value);
  else if (key == "critic_hidden") cfg.critic_hidden = parse_value<std::size_t>(key, value);
  else if (key == "domain_hidden") cfg.domain_hidden = parse_value<std::size_t>(key, value);
  else throw std::invalid_argument("config: unknown train key '" + key + "'");
}

std::string get_train_key(const TrainConfig& cfg, const std::string& key) {
  if (key == "divergence") return to_string(cfg.divergence);
  if (key == "lambda") return format_double(cfg.lambda);
  if (key == "gamma") return format_double(cfg.gamma);
  if (key == "batch_size") return std::to_string(cfg.batch_size);
  if (key == "critic_steps") return std::to_string(cfg.critic_steps);
  if (key == "critic_lr") return format_double(cfg.critic_lr);
  if (key == "lr") return format_double(cfg.lr);
  if (key == "iterations") return std::to_string(cfg.iterations);
  if (key == "eval_every") return std::to_string(cfg.eval_every);
  if (key == "seed") return std::to_string(cfg.seed);
  if (key == "extractor_hidden") return widths_str(cfg.extractor_hidden);
  if (key == "classifier_hidden") return widths_str(cfg.classifier_hidden);
  if (key == "critic_hidden") return std::to_string(cfg.critic_hidden);
  if (key == "domain_hidden") return std::to_string(cfg.domain_hidden);
  throw std::invalid_argument("config: unknown train key '" + key + "'");
}

double evaluate_accuracy(const MlpSpec& extractor_spec, const ParamSet& extractor,
                         const MlpSpec& classifier_spec, const ParamSet& classifier,
                         const LabeledSet& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  if (!data.labeled()) throw std::invalid_argument("evaluate_accuracy: unlabeled rows");
  const Tensor logits = predict(classifier_spec, classifier,
                                predict(extractor_spec, extractor, data.features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[arg]) arg = k;
    }
    correct += static_cast<int>(arg) == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

double norm_of(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& t : grads) {
    for (double v : t.data()) s += v * v;
  }
  return std::sqrt(s);
}

void add_into(std::vector<Tensor>& acc, const std::vector<Tensor>& extra) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (std::size_t k = 0; k < acc[i].size(); ++k) acc[i][k] += extra[i][k];
  }
}

std::size_t feature_dim(const TrainConfig& cfg) { return cfg.extractor_hidden.back(); }

}  // namespace

Trainer::Trainer(const DomainPair& data, TrainConfig cfg)
    : data_(data),
      cfg_((cfg.validate(), data.validate(), std::move(cfg))),
      extractor_spec_(MlpSpec::feature_extractor(data.source.dim(), cfg_.extractor_hidden)),
      classifier_spec_(
          MlpSpec::classifier(feature_dim(cfg_), data.num_classes(), cfg_.classifier_hidden)),
      domain_spec_(MlpSpec::domain_classifier(feature_dim(cfg_), cfg_.domain_hidden)),
      extractor_(init_params(extractor_spec_, derive_seed(cfg_.seed, "init.extractor"))),
      classifier_(init_params(classifier_spec_, derive_seed(cfg_.seed, "init.classifier"))),
      domain_(init_params(domain_spec_, derive_seed(cfg_.seed, "init.domain"))),
      extractor_adam_(AdamState::for_params(extractor_, cfg_.lr)),
      classifier_adam_(AdamState::for_params(classifier_, cfg_.lr)),
      domain_adam_(AdamState::for_params(domain_, cfg_.critic_lr)),
      critic_(CriticNet::make(feature_dim(cfg_), cfg_.critic_hidden, cfg_.critic_lr,
                              derive_seed(cfg_.seed, "init.critic"))),
      sampler_(data.source.size(), data.target.size(), cfg_.batch_size / 2, cfg_.seed),
      interp_rng_(make_rng(cfg_.seed, "interpolates")),
      bank_(KernelBank::standard()) {}

void Trainer::step() {
  ++iter_;
  const Batch batch = next_batch();
  if (cfg_.divergence == DivergenceKind::kWasserstein) {
    critic_phase(batch);
    main_phase(batch);
  } else {
    joint_phase(batch);
  }
}

void Trainer::critic_phase(const Batch& batch) {
  const Tensor hs = predict(extractor_spec_, extractor_, batch.x_source);
  const Tensor ht = predict(extractor_spec_, extractor_, batch.x_target);
  for (int k = 0; k < cfg_.critic_steps; ++k) {
    last_.grad_penalty = critic_ascent_step(critic_, hs, ht, cfg_.gamma, interp_rng_).second;
  }
}

void Trainer::main_phase(const Batch& batch) {
  Graph g;
  const auto g_nodes = bind_params(g, extractor_, "extractor");
  const auto c_nodes = bind_params(g, classifier_, "classifier");
  const auto w_nodes = bind_params(g, critic_.params, "critic");
  const NodeId hs = apply(extractor_spec_, g, g_nodes, g.constant(batch.x_source));
  const NodeId ht = apply(extractor_spec_, g, g_nodes, g.constant(batch.x_target));
  const NodeId loss_c = softmax_xent(g, apply(classifier_spec_, g, c_nodes, hs),
                                     batch.y_source);
  // The penalty term is dropped here: only L_wd flows into theta_g.
  const NodeId wd = wasserstein_loss(g, critic_.spec, w_nodes, hs, ht);
  const NodeId div = scale(g, wd, cfg_.lambda);

  const std::vector<Tensor> c_grads = collect_grads(g.reverse_grad(loss_c, c_nodes), c_nodes);
  std::vector<Tensor> g_grads = collect_grads(g.reverse_grad(loss_c, g_nodes), g_nodes);
  const std::vector<Tensor> div_grads = collect_grads(g.reverse_grad(div, g_nodes), g_nodes);
  last_.loss_c = g.value(loss_c).item();
  last_.div_value = g.value(wd).item();
  last_.gnorm_cls = norm_of(g_grads);
  last_.gnorm_div = norm_of(div_grads);
  add_into(g_grads, div_grads);
  adam_step(classifier_adam_, classifier_, c_grads);
  adam_step(extractor_adam_, extractor_, g_grads);
}

void Trainer::joint_phase(const Batch& batch) {
  Graph g;
  const auto g_nodes = bind_params(g, extractor_, "extractor");
  const auto c_nodes = bind_params(g, classifier_, "classifier");
  const NodeId hs = apply(extractor_spec_, g, g_nodes, g.constant(batch.x_source));
  const NodeId ht = apply(extractor_spec_, g, g_nodes, g.constant(batch.x_target));
  const NodeId loss_c = softmax_xent(g, apply(classifier_spec_, g, c_nodes, hs),
                                     batch.y_source);

  std::vector<Tensor> g_grads = collect_grads(g.reverse_grad(loss_c, g_nodes), g_nodes);
  const std::vector<Tensor> c_grads = collect_grads(g.reverse_grad(loss_c, c_nodes), c_nodes);
  last_.loss_c = g.value(loss_c).item();
  last_.gnorm_cls = norm_of(g_grads);
  last_.grad_penalty = 0.0;
  last_.div_value = 0.0;
  last_.gnorm_div = 0.0;

  std::optional<NodeId> to_extractor;  // divergence term that theta_g descends
  std::optional<std::vector<Tensor>> d_grads;
  switch (cfg_.divergence) {
    case DivergenceKind::kMmd: {
      const NodeId d = mmd_loss(g, hs, ht, bank_);
      last_.div_value = g.value(d).item();
      to_extractor = d;
      break;
    }
    case DivergenceKind::kCoral: {
      const NodeId d = coral_loss(g, hs, ht);
      last_.div_value = g.value(d).item();
      to_extractor = d;
      break;
    }
    case DivergenceKind::kDann: {
      const auto d_nodes = bind_params(g, domain_, "domain");
      const DannLoss d = dann_loss(g, domain_spec_, d_nodes, hs, ht);
      last_.div_value = g.value(d.classifier).item();
      d_grads = collect_grads(g.reverse_grad(d.classifier, d_nodes), d_nodes);
      to_extractor = d.reversed;
      break;
    }
    case DivergenceKind::kNone:
      break;
    case DivergenceKind::kWasserstein:
      throw std::logic_error("joint_phase called for wasserstein");
  }
  if (to_extractor) {
    const NodeId scaled = scale(g, *to_extractor, cfg_.lambda);
    const std::vector<Tensor> div_grads =
        collect_grads(g.reverse_grad(scaled, g_nodes), g_nodes);
    last_.gnorm_div = norm_of(div_grads);
    add_into(g_grads, div_grads);
  }
  adam_step(classifier_adam_, classifier_, c_grads);
  adam_step(extractor_adam_, extractor_, g_grads);
  if (d_grads) adam_step(domain_adam_, domain_, *d_grads);
}

StepRecord Trainer::evaluate() const {
  StepRecord r = last_;
  r.iter = iter_;
  r.acc_src = evaluate_accuracy(extractor_spec_, extractor_, classifier_spec_, classifier_,
                                data_.source);
  const LabeledSet& tgt = data_.target_eval();
  r.acc_tgt = tgt.size() > 0 && tgt.labeled()
                  ? evaluate_accuracy(extractor_spec_, extractor_, classifier_spec_,
                                      classifier_, tgt)
                  : std::numeric_limits<double>::quiet_NaN();
  return r;
}

NamedParams Trainer::named_params() const {
  NamedParams out = {{"extractor", extractor_}, {"classifier", classifier_}};
  if (cfg_.divergence == DivergenceKind::kWasserstein) out.emplace_back("critic", critic_.params);
  if (cfg_.divergence == DivergenceKind::kDann) out.emplace_back("domain", domain_);
  return out;
}

namespace {

ExperimentResult run(const DomainPair& data, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  auto result = std::make_shared<ExperimentResult>();
  result->config = cfg;
  Trainer trainer(data, cfg);
  try {
    for (int it = 1; it <= cfg.iterations; ++it) {
      trainer.step();
      result->gnorm_cls_all.push_back(trainer.last_gnorm_cls());
      result->gnorm_div_all.push_back(trainer.last_gnorm_div());
      result->div_all.push_back(trainer.last().div_value);
      result->iterations = it;
      if (!std::isfinite(trainer.last().loss_c) || !std::isfinite(trainer.last().div_value)) {
        throw NumericError("non-finite loss");
      }
      if (it % cfg.eval_every == 0 || it == cfg.iterations) {
        const StepRecord rec = trainer.evaluate();
        result->trace.push_back(rec);
        if (!(rec.acc_tgt <= result->best_acc_tgt)) result->best_acc_tgt = rec.acc_tgt;
      }
    }
  } catch (const NumericError& e) {
    result->params = trainer.named_params();
    result->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    throw TrainingAborted("training aborted at iteration " +
                              std::to_string(trainer.iteration()) + ": " + e.what(),
                          result);
  }
  result->acc_src = result->trace.back().acc_src;
  result->acc_tgt = result->trace.back().acc_tgt;
  result->params = trainer.named_params();
  result->seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return std::move(*result);
}

}  // namespace

ExperimentResult train_wdgrl(const DomainPair& data, const TrainConfig& cfg) {
  if (cfg.divergence != DivergenceKind::kWasserstein) {
    throw std::invalid_argument("train_wdgrl: divergence must be wasserstein");
  }
  return run(data, cfg);
}

ExperimentResult train_with_divergence(const DomainPair& data, const TrainConfig& cfg) {
  if (cfg.divergence == DivergenceKind::kWasserstein) {
    throw std::invalid_argument("train_with_divergence: use train_wdgrl for wasserstein");
  }
  return run(data, cfg);
}

ExperimentResult train(const DomainPair& data, const TrainConfig& cfg) {
  return cfg.divergence == DivergenceKind::kWasserstein ? train_wdgrl(data, cfg)
                                                        : train_with_divergence(data, cfg);
}

std::vector<GridPoint> expand_grid(const Grid& grid, std::size_t cap) {
  if (grid.empty()) throw std::invalid_argument("grid: no keys");
  std::size_t total = 1;
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw std::invalid_argument("grid: key '" + key + "' has no values");
    if (total > cap / values.size() + 1) total = cap + 1;
    else total *= values.size();
  }
  if (total > cap) {
    throw std::invalid_argument("grid: " + std::to_string(total) +
                                " combinations exceed the cap of " + std::to_string(cap));
  }
  std::vector<GridPoint> points;
  std::vector<std::size_t> digit(grid.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    GridPoint p;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      p.emplace_back(grid[k].first, grid[k].second[digit[k]]);
    }
    points.push_back(std::move(p));
    // Last key varies fastest.
    for (std::size_t k = grid.size(); k-- > 0;) {
      if (++digit[k] < grid[k].second.size()) break;
      digit[k] = 0;
    }
  }
  return points;
}

GridResult grid_search(const DomainPair& data, const TrainConfig& base, const Grid& grid,
                       std::size_t cap, std::size_t workers) {
  GridResult out;
  out.points = expand_grid(grid, cap);
  std::vector<TrainConfig> configs;
  for (const auto& point : out.points) {
    TrainConfig cfg = base;
    for (const auto& [key, value] : point) set_train_key(cfg, key, value);
    cfg.validate();
    configs.push_back(std::move(cfg));
  }
  out.results.resize(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        out.results[i] = train(data, configs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, configs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (std::size_t i = 1; i < out.results.size(); ++i) {
    if (out.results[i].acc_tgt > out.results[out.best].acc_tgt) out.best = i;
  }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& trace) {
  out << "iter,loss_c,div_value,grad_penalty,gnorm_cls,gnorm_div,acc_src,acc_tgt\n";
  for (const auto& r : trace) {
    out << r.iter << ',' << format_double(r.loss_c) << ',' << format_double(r.div_value) << ','
        << format_double(r.grad_penalty) << ',' << format_double(r.gnorm_cls) << ','
        << format_double(r.gnorm_div) << ',' << format_double(r.acc_src) << ','
        << format_double(r.acc_tgt) << '\n';
  }
}

std::string approach_name(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::kNone: return "S-only";
    case DivergenceKind::kMmd: return "MMD";
    case DivergenceKind::kDann: return "DANN";
    case DivergenceKind::kCoral: return "CORAL";
    case DivergenceKind::kWasserstein: return "WDGRL";
  }
  return "?";
}

void write_summary_csv(std::ostream& out, const std::string& task,
                       const ExperimentResult& result, bool header) {
  if (header) out << "task,approach,acc_src,acc_tgt,best_acc_tgt,iterations,seed,seconds\n";
  out << task << ',' << approach_name(result.config.divergence) << ','
      << format_double(result.acc_src) << ',' << format_double(result.acc_tgt) << ','
      << format_double(result.best_acc_tgt) << ',' << result.iterations << ','
      << result.config.seed << ',' << format_double(result.seconds) << '\n';
}

}  // namespace wdgrl
