#include "wdgrl/divergence.h"

#include <cmath>
#include <stdexcept>

namespace wdgrl {

std::string to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::kWasserstein: return "wasserstein";
    case DivergenceKind::kMmd: return "mmd";
    case DivergenceKind::kCoral: return "coral";
    case DivergenceKind::kDann: return "dann";
    case DivergenceKind::kNone: return "none";
  }
  return "?";
}

DivergenceKind parse_divergence(const std::string& name) {
  if (name == "wasserstein" || name == "wdgrl") return DivergenceKind::kWasserstein;
  if (name == "mmd") return DivergenceKind::kMmd;
  if (name == "coral") return DivergenceKind::kCoral;
  if (name == "dann") return DivergenceKind::kDann;
  if (name == "none" || name == "source-only") return DivergenceKind::kNone;
  throw std::invalid_argument("unknown divergence '" + name + "'");
}

CriticNet CriticNet::make(std::size_t dim, std::size_t hidden, double lr,
                          std::uint64_t seed) {
  CriticNet c;
  c.spec = MlpSpec::critic(dim, hidden);
  c.params = init_params(c.spec, seed);
  c.adam = AdamState::for_params(c.params, lr);
  return c;
}

KernelBank KernelBank::standard() {
  KernelBank bank;
  constexpr int kCount = 19;
  for (int i = 0; i < kCount; ++i) {
    const double exponent = -6.0 + 12.0 * i / (kCount - 1);
    bank.sigmas.push_back(std::pow(10.0, exponent));
  }
  return bank;
}

Tensor sample_interpolation_weights(std::size_t rows, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor eps({rows, 1});
  for (auto& e : eps.data()) e = u(rng);
  return eps;
}

namespace {

void check_pair(const Graph& g, NodeId h_s, NodeId h_t, const char* what) {
  const Shape& s = g.node(h_s).shape;
  const Shape& t = g.node(h_t).shape;
  if (s.size() != 2 || t.size() != 2 || s[1] != t[1]) {
    throw ShapeError(std::string(what) + ": representation shapes " + shape_str(s) +
                     " and " + shape_str(t) + " differ in width");
  }
  if (s[0] == 0 || t[0] == 0) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
}

}  // namespace

NodeId wasserstein_loss(Graph& g, const MlpSpec& critic_spec,
                        std::span<const NodeId> critic_params, NodeId h_s,
                        NodeId h_t) {
  check_pair(g, h_s, h_t, "wasserstein_loss");
  const NodeId fs = apply(critic_spec, g, critic_params, h_s);
  const NodeId ft = apply(critic_spec, g, critic_params, h_t);
  return sub(g, mean(g, fs), mean(g, ft));
}

CriticObjective critic_objective(Graph& g, const CriticNet& critic, NodeId h_s,
                                 NodeId h_t, double gamma, const Tensor& eps) {
  check_pair(g, h_s, h_t, "critic_objective");
  const std::size_t n = g.node(h_s).shape[0];
  if (g.node(h_t).shape[0] != n) {
    throw std::invalid_argument("critic_objective: source and target batches need "
                                "equal sizes for paired interpolation (" +
                                std::to_string(n) + " vs " +
                                std::to_string(g.node(h_t).shape[0]) + ")");
  }
  if (g.node(h_s).shape[1] != critic.spec.input_dim()) {
    throw ShapeError("critic_objective: representation width " +
                     std::to_string(g.node(h_s).shape[1]) + " but critic expects " +
                     std::to_string(critic.spec.input_dim()));
  }
  if (gamma < 0) throw std::invalid_argument("critic_objective: gamma < 0");

  CriticObjective out;
  out.critic_params = bind_params(g, critic.params, "critic");
  const NodeId interp = lerp(g, h_s, h_t, eps);
  const NodeId h_hat = concat_rows(g, {h_s, h_t, interp});
  const NodeId scores = apply(critic.spec, g, out.critic_params, h_hat);

  // f_w on h_s and h_t are the first two blocks of the h_hat scores.
  const NodeId fs = slice_rows(g, scores, 0, n);
  const NodeId ft = slice_rows(g, scores, n, n);
  out.wasserstein = sub(g, mean(g, fs), mean(g, ft));

  // Rows of h_hat are independent, so d(sum scores)/d(h_hat) holds the
  // per-row input gradients.
  const NodeId wrt[] = {h_hat};
  const NodeId grads = g.grad_graph(sum(g, scores), wrt).front();
  const NodeId norms = row_l2_norm(g, grads);
  out.penalty = mean(g, square(g, add_scalar(g, norms, -1.0)));
  out.objective = sub(g, out.wasserstein, scale(g, out.penalty, gamma));
  return out;
}

std::pair<double, double> critic_ascent_step(CriticNet& critic, const Tensor& h_s,
                                             const Tensor& h_t, double gamma,
                                             Rng& rng) {
  Graph g;
  const NodeId s = g.constant(h_s);
  const NodeId t = g.constant(h_t);
  const Tensor eps = sample_interpolation_weights(h_s.rows(), rng);
  const CriticObjective obj = critic_objective(g, critic, s, t, gamma, eps);
  std::vector<Tensor> grads =
      collect_grads(g.reverse_grad(obj.objective, obj.critic_params), obj.critic_params);
  for (auto& t_grad : grads) {
    for (auto& v : t_grad.data()) v = -v;  // ascent
  }
  const double wd = g.value(obj.wasserstein).item();
  const double penalty = g.value(obj.penalty).item();
  adam_step(critic.adam, critic.params, grads);
  return {wd, penalty};
}

DivergenceEstimate wasserstein_estimate(CriticNet& critic, const Tensor& h_s,
                                        const Tensor& h_t, int steps, double gamma,
                                        Rng& rng) {
  if (steps < 1) throw std::invalid_argument("wasserstein_estimate: steps < 1");
  DivergenceEstimate est;
  est.kind = DivergenceKind::kWasserstein;
  for (int i = 0; i < steps; ++i) {
    try {
      est.grad_penalty = critic_ascent_step(critic, h_s, h_t, gamma, rng).second;
    } catch (const NumericError& e) {
      throw NumericError("critic diverged at step " + std::to_string(i + 1) + ": " +
                         e.what());
    }
  }
  Graph g;
  const auto params = bind_params(g, critic.params);
  est.value = g.value(wasserstein_loss(g, critic.spec, params, g.constant(h_s),
                                       g.constant(h_t)))
                  .item();
  return est;
}

NodeId mmd_loss(Graph& g, NodeId h_s, NodeId h_t, const KernelBank& bank) {
  check_pair(g, h_s, h_t, "mmd_loss");
  if (bank.sigmas.empty()) throw std::invalid_argument("mmd_loss: empty kernel bank");
  const double inv_k = 1.0 / static_cast<double>(bank.sigmas.size());
  auto kernel_mean = [&](NodeId a, NodeId b) {
    const NodeId d2 = pairwise_sq_dist(g, a, b);
    std::optional<NodeId> acc;
    for (double sigma : bank.sigmas) {
      const NodeId k = exp(g, scale(g, d2, -1.0 / (2.0 * sigma * sigma)));
      acc = acc ? add(g, *acc, k) : k;
    }
    return scale(g, mean(g, *acc), inv_k);
  };
  const NodeId kss = kernel_mean(h_s, h_s);
  const NodeId ktt = kernel_mean(h_t, h_t);
  const NodeId kst = kernel_mean(h_s, h_t);
  return sub(g, add(g, kss, ktt), scale(g, kst, 2.0));
}

DivergenceEstimate mmd_estimate(const Tensor& h_s, const Tensor& h_t,
                                const KernelBank& bank) {
  Graph g;
  DivergenceEstimate est;
  est.kind = DivergenceKind::kMmd;
  est.value = g.value(mmd_loss(g, g.constant(h_s), g.constant(h_t), bank)).item();
  return est;
}

namespace {

NodeId covariance(Graph& g, NodeId x) {
  const Shape s = g.node(x).shape;
  const double n = static_cast<double>(s[0]);
  const NodeId gram = matmul(g, transpose(g, x), x);
  const NodeId col_sums = sum_rows(g, x);
  const NodeId outer = matmul(g, transpose(g, col_sums), col_sums);
  return scale(g, sub(g, gram, scale(g, outer, 1.0 / n)), 1.0 / (n - 1.0));
}

}  // namespace

NodeId coral_loss(Graph& g, NodeId h_s, NodeId h_t) {
  check_pair(g, h_s, h_t, "coral_loss");
  if (g.node(h_s).shape[0] < 2 || g.node(h_t).shape[0] < 2) {
    throw std::invalid_argument("coral_loss: each batch needs at least 2 rows");
  }
  const double d = static_cast<double>(g.node(h_s).shape[1]);
  const NodeId diff = sub(g, covariance(g, h_s), covariance(g, h_t));
  return scale(g, sum(g, square(g, diff)), 1.0 / (4.0 * d * d));
}

DivergenceEstimate coral_estimate(const Tensor& h_s, const Tensor& h_t) {
  Graph g;
  DivergenceEstimate est;
  est.kind = DivergenceKind::kCoral;
  est.value = g.value(coral_loss(g, g.constant(h_s), g.constant(h_t))).item();
  return est;
}

DannLoss dann_loss(Graph& g, const MlpSpec& domain_spec,
                   std::span<const NodeId> domain_params, NodeId h_s, NodeId h_t) {
  check_pair(g, h_s, h_t, "dann_loss");
  const std::size_t ns = g.node(h_s).shape[0];
  const std::size_t nt = g.node(h_t).shape[0];
  Tensor targets({ns + nt, 1});
  for (std::size_t i = 0; i < ns; ++i) targets[i] = 1.0;

  const NodeId both = concat_rows(g, {h_s, h_t});
  DannLoss out;
  out.logits = apply(domain_spec, g, domain_params, both);
  out.classifier = sigmoid_xent(g, out.logits, targets);
  const NodeId reversed_logits =
      apply(domain_spec, g, domain_params, grad_reverse(g, both));
  out.reversed = sigmoid_xent(g, reversed_logits, std::move(targets));
  return out;
}

double domain_accuracy(const Tensor& logits, std::size_t source_rows) {
  if (logits.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool says_source = logits[i] > 0.0;
    if (says_source == (i < source_rows)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.size());
}

}  // namespace wdgrl
