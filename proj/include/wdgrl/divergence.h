#ifndef WDGRL_DIVERGENCE_H_
#define WDGRL_DIVERGENCE_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wdgrl/graph.h"
#include "wdgrl/nn.h"
#include "wdgrl/random.h"

namespace wdgrl {

enum class DivergenceKind { kWasserstein, kMmd, kCoral, kDann, kNone };

std::string to_string(DivergenceKind kind);
DivergenceKind parse_divergence(const std::string& name);

// Domain critic f_w: d -> hidden (relu) -> 1, with its own optimizer state.
struct CriticNet {
  MlpSpec spec;
  ParamSet params;
  AdamState adam;

  static CriticNet make(std::size_t dim, std::size_t hidden, double lr,
                        std::uint64_t seed);
};

// RBF mixture k(a, b) = mean_k exp(-||a - b||^2 / (2 sigma_k^2)).
struct KernelBank {
  std::vector<double> sigmas;

  // 19 bandwidths log-uniformly spaced over [1e-6, 1e6], inclusive.
  static KernelBank standard();
};

struct DivergenceEstimate {
  double value = 0.0;
  DivergenceKind kind = DivergenceKind::kNone;
  double grad_penalty = 0.0;                  // wasserstein only
  std::optional<double> domain_accuracy;      // dann only
};

// Nodes of the critic's training objective inside one graph.
struct CriticObjective {
  NodeId objective;     // L_wd - gamma * L_grad
  NodeId wasserstein;   // L_wd
  NodeId penalty;       // L_grad
  std::vector<NodeId> critic_params;
};

// Per-row interpolation weights eps_i ~ U(0, 1), as an (n x 1) column.
Tensor sample_interpolation_weights(std::size_t rows, Rng& rng);

// L_wd = mean f_w(h_s) - mean f_w(h_t), with
// L_grad = mean over rows of h_hat = {h_s, h_t, eps*h_s + (1-eps)*h_t} of
// (||grad f_w(h_hat)||_2 - 1)^2. The penalty gradient is built with
// grad_graph so the objective can be differentiated w.r.t. the critic.
// Requires equal row counts; `eps` is an (n x 1) column.
CriticObjective critic_objective(Graph& g, const CriticNet& critic, NodeId h_s,
                                 NodeId h_t, double gamma, const Tensor& eps);

// L_wd alone, with the critic parameters bound as nodes in `critic_params`.
NodeId wasserstein_loss(Graph& g, const MlpSpec& critic_spec,
                        std::span<const NodeId> critic_params, NodeId h_s,
                        NodeId h_t);

// One Adam ascent step of the critic on L_wd - gamma * L_grad for fixed
// representations. Returns (L_wd, L_grad) evaluated before the step.
std::pair<double, double> critic_ascent_step(CriticNet& critic, const Tensor& h_s,
                                             const Tensor& h_t, double gamma,
                                             Rng& rng);

// Runs `steps` ascent steps and reports L_wd after the last one.
DivergenceEstimate wasserstein_estimate(CriticNet& critic, const Tensor& h_s,
                                        const Tensor& h_t, int steps, double gamma,
                                        Rng& rng);

// Biased (V-statistic) squared MMD with the kernel bank.
NodeId mmd_loss(Graph& g, NodeId h_s, NodeId h_t, const KernelBank& bank);
DivergenceEstimate mmd_estimate(const Tensor& h_s, const Tensor& h_t,
                                const KernelBank& bank);

// ||C_s - C_t||_F^2 / (4 d^2) with unbiased (n - 1) covariances.
NodeId coral_loss(Graph& g, NodeId h_s, NodeId h_t);
DivergenceEstimate coral_estimate(const Tensor& h_s, const Tensor& h_t);

struct DannLoss {
  NodeId classifier;  // BCE of f_d on source (label 1) and target (label 0)
  NodeId reversed;    // same loss behind a gradient reversal on the features
  NodeId logits;      // (n_s + n_t) x 1, for accuracy
};

DannLoss dann_loss(Graph& g, const MlpSpec& domain_spec,
                   std::span<const NodeId> domain_params, NodeId h_s, NodeId h_t);

// Fraction of rows the domain classifier assigns to the right domain.
double domain_accuracy(const Tensor& logits, std::size_t source_rows);

}  // namespace wdgrl

#endif  // WDGRL_DIVERGENCE_H_
