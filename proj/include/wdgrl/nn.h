#ifndef WDGRL_NN_H_
#define WDGRL_NN_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wdgrl/graph.h"
#include "wdgrl/tensor.h"

namespace wdgrl {

enum class Activation { kRelu, kSigmoid, kIdentity };

// How the last layer's output is read. kFeatures is a representation
// (feature extractor), kSoftmax yields class logits, kScalar a critic value,
// kSigmoidLogit a binary logit.
enum class Head { kFeatures, kSoftmax, kScalar, kSigmoidLogit };

std::string to_string(Activation a);
std::string to_string(Head h);

struct MlpSpec {
  std::vector<std::size_t> widths;      // input, hidden..., output
  std::vector<Activation> activations;  // one per layer
  Head head = Head::kFeatures;

  std::size_t num_layers() const { return activations.size(); }
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }

  // Throws std::invalid_argument describing the first problem found.
  void validate() const;

  // input -> hidden (relu)... The last hidden width is the representation.
  static MlpSpec feature_extractor(std::size_t input_dim,
                                   std::vector<std::size_t> hidden);
  // dim -> hidden (relu)... -> classes, softmax head.
  static MlpSpec classifier(std::size_t dim, std::size_t classes,
                            std::vector<std::size_t> hidden = {});
  // dim -> hidden (relu) -> 1, scalar head.
  static MlpSpec critic(std::size_t dim, std::size_t hidden = 100);
  // dim -> hidden (relu) -> 1, sigmoid-logit head.
  static MlpSpec domain_classifier(std::size_t dim, std::size_t hidden = 100);
};

// Weights and biases, stored W0, b0, W1, b1, ... Weight l is
// (widths[l] x widths[l+1]); bias l is (1 x widths[l+1]).
struct ParamSet {
  std::vector<Tensor> tensors;

  std::size_t num_layers() const { return tensors.size() / 2; }
  Tensor& weight(std::size_t layer) { return tensors[2 * layer]; }
  const Tensor& weight(std::size_t layer) const { return tensors[2 * layer]; }
  Tensor& bias(std::size_t layer) { return tensors[2 * layer + 1]; }
  const Tensor& bias(std::size_t layer) const { return tensors[2 * layer + 1]; }
  std::size_t num_values() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

// Glorot-uniform weights, zero biases.
ParamSet init_params(const MlpSpec& spec, std::uint64_t seed);

// Adds the parameters to a graph as parameter nodes.
std::vector<NodeId> bind_params(Graph& g, const ParamSet& params,
                                const std::string& prefix = {});

// Builds the forward pass and returns the output node: logits for softmax
// and sigmoid-logit heads, an (n x 1) column for the scalar head.
NodeId apply(const MlpSpec& spec, Graph& g, std::span<const NodeId> param_nodes,
             NodeId input);

// Forward pass without keeping the graph around.
Tensor predict(const MlpSpec& spec, const ParamSet& params, const Tensor& input);

// Mean softmax cross-entropy of `logits` against integer labels in [0, classes).
NodeId softmax_xent(Graph& g, NodeId logits, std::span<const int> labels);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

std::vector<Tensor> collect_grads(const GradMap& grads,
                                  std::span<const NodeId> nodes);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState for_params(const ParamSet& params, double lr);
};

// One bias-corrected Adam descent step. Pass negated gradients to ascend.
// Rejects non-finite gradients (NumericError naming the step) without
// touching params or state.
void adam_step(AdamState& state, ParamSet& params, std::span<const Tensor> grads);

// Checkpoint: one ASCII header line
//   wdgrl-checkpoint 1 <name>:<r>x<c>,<r>x<c>,... <name>:...
// followed by every tensor's values as little-endian IEEE-754 doubles, in
// header order.
using NamedParams = std::vector<std::pair<std::string, ParamSet>>;
void save_checkpoint(const std::filesystem::path& path, const NamedParams& nets);
NamedParams load_checkpoint(const std::filesystem::path& path);

}  // namespace wdgrl

#endif  // WDGRL_NN_H_
