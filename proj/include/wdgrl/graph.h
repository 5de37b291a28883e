#ifndef WDGRL_GRAPH_H_
#define WDGRL_GRAPH_H_

// Define-by-run computation graph over dense double tensors.
//
// Nodes are appended in topological order (every parent id is smaller than
// the child id). Values are computed eagerly whenever all parents already
// have values, so a graph built from bound inputs and parameters can be read
// right away; forward() re-evaluates everything after inputs or parameters
// change. reverse_grad() computes numeric reverse-mode gradients, and
// grad_graph() appends the gradient computation itself as new nodes, which
// can then be differentiated again (double backprop).

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wdgrl/tensor.h"

namespace wdgrl {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

enum class OpKind {
  kInput,
  kParameter,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddBias,         // (n x k) + broadcast (1 x k)
  kSumRows,         // (n x k) -> (1 x k)
  kBroadcastRows,   // (1 x k) -> (n x k)
  kRowSum,          // (n x k) -> (n x 1)
  kBroadcastCols,   // (n x 1) -> (n x k)
  kSum,             // any -> (1 x 1)
  kMean,            // any -> (1 x 1)
  kBroadcastScalar, // (1 x 1) -> any
  kScale,
  kAddScalar,
  kRelu,
  kReluMask,        // 1 where x > 0, else 0; not differentiable
  kSigmoid,
  kLog,
  kExp,
  kSquare,
  kSqrt,
  kReciprocal,
  kSoftmaxRows,
  kRowL2Norm,       // (n x k) -> (n x 1), sqrt(sum x^2 + 1e-12)
  kSoftmaxXent,     // logits (n x l), one-hot constant -> (1 x 1) mean loss
  kSigmoidXent,     // logits (n x 1), 0/1 targets constant -> (1 x 1)
  kConcatRows,
  kSliceRows,
  kPadRows,
  kScaleRows,       // row i multiplied by constant c_i
  kLerp,            // eps_i * a_i + (1 - eps_i) * b_i
  kPairwiseSqDist,  // a (n x d), b (m x d) -> (n x m), ||a_i - b_j||^2
  kGradReverse,     // identity forward, negated gradient
  kStopGradient,    // identity forward, no gradient
};

std::string_view op_name(OpKind op);

enum class NodeRole { kInput, kParameter, kIntermediate, kOutput };

// Op-specific constants. Only the fields an op reads are meaningful.
struct NodeAttr {
  double scalar = 0.0;
  std::size_t offset = 0;
  std::size_t count = 0;
  Shape shape;          // target shape for broadcasts / pads
  Tensor constant;      // labels, interpolation weights, row scales
};

struct Node {
  OpKind op = OpKind::kInput;
  std::vector<NodeId> parents;
  NodeAttr attr;
  Shape shape;
  Tensor value;
  bool has_value = false;
  NodeRole role = NodeRole::kIntermediate;
  std::string name;
};

inline constexpr double kRowNormEpsilon = 1e-12;

// Gradient of one scalar output with respect to every node in a graph.
// Nodes that do not lie on a path to the output read back as zeros.
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  Tensor at(NodeId id) const;
  bool reached(NodeId id) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

using Bindings = std::map<NodeId, Tensor>;

class Graph {
 public:
  Graph() = default;

  // Unbound input placeholder; must be bound in forward().
  NodeId input(Shape shape, std::string name = {});
  // Input with a fixed value.
  NodeId constant(Tensor value, std::string name = {});
  NodeId parameter(Tensor value, std::string name = {});

  // Appends a primitive. Shapes are checked and computed eagerly; the value
  // is computed too when every parent already has one.
  NodeId add(OpKind op, std::vector<NodeId> parents, NodeAttr attr = {});

  void mark_output(NodeId id);

  // Re-evaluates every node in order. Bindings replace input values.
  void forward(const Bindings& bindings = {});

  void set_value(NodeId id, Tensor value);
  const Tensor& value(NodeId id) const;
  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Numeric reverse mode from a scalar output. With `wrt` given, only the
  // paths into those nodes are propagated.
  GradMap reverse_grad(NodeId output) const;
  GradMap reverse_grad(NodeId output, std::span<const NodeId> wrt) const;

  // Appends nodes computing d(output)/d(wrt[i]) and returns their ids.
  std::vector<NodeId> grad_graph(NodeId output, std::span<const NodeId> wrt);

 private:
  Shape infer_shape(OpKind op, const std::vector<NodeId>& parents,
                    const NodeAttr& attr) const;
  void evaluate(std::size_t index);
  std::vector<bool> reachable_from(std::span<const NodeId> wrt,
                                   std::size_t limit) const;
  void check_scalar_output(NodeId output) const;

  std::vector<Node> nodes_;
};

// Builders. All return the new node's id.
NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId transpose(Graph& g, NodeId a);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId add_bias(Graph& g, NodeId x, NodeId bias);
NodeId sum_rows(Graph& g, NodeId x);
NodeId broadcast_rows(Graph& g, NodeId x, std::size_t rows);
NodeId row_sum(Graph& g, NodeId x);
NodeId broadcast_cols(Graph& g, NodeId x, std::size_t cols);
NodeId sum(Graph& g, NodeId x);
NodeId mean(Graph& g, NodeId x);
NodeId broadcast_scalar(Graph& g, NodeId x, Shape shape);
NodeId scale(Graph& g, NodeId x, double c);
NodeId add_scalar(Graph& g, NodeId x, double c);
NodeId relu(Graph& g, NodeId x);
NodeId relu_mask(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);
NodeId log(Graph& g, NodeId x);
NodeId exp(Graph& g, NodeId x);
NodeId square(Graph& g, NodeId x);
NodeId sqrt(Graph& g, NodeId x);
NodeId reciprocal(Graph& g, NodeId x);
NodeId softmax_rows(Graph& g, NodeId x);
NodeId row_l2_norm(Graph& g, NodeId x);
NodeId softmax_xent(Graph& g, NodeId logits, Tensor one_hot);
NodeId sigmoid_xent(Graph& g, NodeId logits, Tensor targets);
NodeId concat_rows(Graph& g, std::vector<NodeId> parts);
NodeId slice_rows(Graph& g, NodeId x, std::size_t offset, std::size_t count);
NodeId pad_rows(Graph& g, NodeId x, std::size_t offset, std::size_t total);
NodeId scale_rows(Graph& g, NodeId x, Tensor column);
NodeId lerp(Graph& g, NodeId a, NodeId b, Tensor eps_column);
NodeId pairwise_sq_dist(Graph& g, NodeId a, NodeId b);
NodeId grad_reverse(Graph& g, NodeId x);
NodeId stop_gradient(Graph& g, NodeId x);

// Central finite-difference check of d(output)/d(params). Perturbs every
// coordinate of every listed parameter, re-running forward() each time, and
// returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Leaves the graph evaluated at the original parameter values.
double fd_check(Graph& g, NodeId output, std::span<const NodeId> params,
                double step);

}  // namespace wdgrl

#endif  // WDGRL_GRAPH_H_
