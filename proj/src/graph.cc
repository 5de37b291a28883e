#include "wdgrl/graph.h"

#include <algorithm>
#include <cmath>
#include <utility>

namespace wdgrl {

namespace {

[[noreturn]] void shape_fail(OpKind op, const std::vector<Shape>& shapes,
                             std::string_view what) {
  std::string msg = "op ";
  msg += op_name(op);
  msg += ": ";
  msg += what;
  msg += "; parent shapes";
  for (const auto& s : shapes) msg += " " + shape_str(s);
  throw ShapeError(msg);
}

bool is_matrix(const Shape& s) { return s.size() == 2; }

// out(n x m) = a(n x k) * b(k x m)
void matmul_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::fill(out.data().begin(), out.data().end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// out(n x k) = g(n x m) * b(k x m)^T
Tensor matmul_nt(const Tensor& g, const Tensor& b) {
  const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data().data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      out[i * k + p] = s;
    }
  }
  return out;
}

// out(k x m) = a(n x k)^T * g(n x m)
Tensor matmul_tn(const Tensor& a, const Tensor& g) {
  const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
  Tensor out({k, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
    }
  }
  return out;
}

Tensor transposed(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax_of(const Tensor& x) {
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto xr = x.row(i);
    auto orow = out.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < k; ++j) orow[j] /= z;
  }
  return out;
}

Tensor sum_rows_of(const Tensor& x) {
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out({1, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[j] += x[i * k + j];
  return out;
}

Tensor row_sum_of(const Tensor& x) {
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += x[i * k + j];
    out[i] = s;
  }
  return out;
}

Tensor broadcast_rows_of(const Tensor& x, std::size_t n) {
  const std::size_t k = x.cols();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.data().begin(), k, out.data().begin() + i * k);
  return out;
}

Tensor broadcast_cols_of(const Tensor& x, std::size_t k) {
  const std::size_t n = x.rows();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    std::fill_n(out.data().begin() + i * k, k, x[i]);
  return out;
}

double sum_of(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

Tensor scale_rows_of(const Tensor& x, const Tensor& c) {
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * k + j] * c[i];
  return out;
}

Tensor slice_rows_of(const Tensor& x, std::size_t offset, std::size_t count) {
  const std::size_t k = x.cols();
  Tensor out({count, k});
  std::copy_n(x.data().begin() + offset * k, count * k, out.data().begin());
  return out;
}

Tensor pad_rows_of(const Tensor& x, std::size_t offset, std::size_t total) {
  const std::size_t k = x.cols();
  Tensor out({total, k});
  std::copy(x.data().begin(), x.data().end(), out.data().begin() + offset * k);
  return out;
}

// Direct differences; the expanded |a|^2 + |b|^2 - 2ab form loses the
// diagonal to cancellation, which tiny kernel bandwidths amplify.
Tensor pairwise_sq_dist_of(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data().data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ar[k] - br[k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  }
  return out;
}

void accumulate(std::optional<Tensor>& slot, Tensor contribution) {
  if (!slot) {
    slot = std::move(contribution);
    return;
  }
  for (std::size_t i = 0; i < slot->size(); ++i) (*slot)[i] += contribution[i];
}

}  // namespace

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kBroadcastRows: return "broadcast_rows";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kBroadcastCols: return "broadcast_cols";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kBroadcastScalar: return "broadcast_scalar";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kRelu: return "relu";
    case OpKind::kReluMask: return "relu_mask";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kReciprocal: return "reciprocal";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kRowL2Norm: return "row_l2_norm";
    case OpKind::kSoftmaxXent: return "softmax_xent";
    case OpKind::kSigmoidXent: return "sigmoid_xent";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kPadRows: return "pad_rows";
    case OpKind::kScaleRows: return "scale_rows";
    case OpKind::kLerp: return "lerp";
    case OpKind::kPairwiseSqDist: return "pairwise_sq_dist";
    case OpKind::kGradReverse: return "grad_reverse";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

Tensor GradMap::at(NodeId id) const {
  if (id.index < grads_.size() && grads_[id.index]) return *grads_[id.index];
  if (id.index >= shapes_.size()) {
    throw std::out_of_range("GradMap: node " + std::to_string(id.index) +
                            " not in graph");
  }
  return Tensor(shapes_[id.index]);
}

bool GradMap::reached(NodeId id) const {
  return id.index < grads_.size() && grads_[id.index].has_value();
}

NodeId Graph::input(Shape shape, std::string name) {
  Node n;
  n.op = OpKind::kInput;
  n.shape = std::move(shape);
  n.role = NodeRole::kInput;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::constant(Tensor value, std::string name) {
  NodeId id = input(value.shape(), std::move(name));
  set_value(id, std::move(value));
  return id;
}

NodeId Graph::parameter(Tensor value, std::string name) {
  if (!value.all_finite()) {
    throw NumericError("parameter '" + name + "' holds non-finite values");
  }
  Node n;
  n.op = OpKind::kParameter;
  n.shape = value.shape();
  n.value = std::move(value);
  n.has_value = true;
  n.role = NodeRole::kParameter;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::set_value(NodeId id, Tensor value) {
  Node& n = nodes_.at(id.index);
  if (n.op != OpKind::kInput && n.op != OpKind::kParameter) {
    throw std::logic_error("set_value on computed node " +
                           std::to_string(id.index));
  }
  if (value.shape() != n.shape) {
    throw ShapeError("binding for node " + std::to_string(id.index) +
                     " has shape " + shape_str(value.shape()) + ", expected " +
                     shape_str(n.shape));
  }
  if (!value.all_finite()) {
    throw NumericError("non-finite value bound to node " +
                       std::to_string(id.index));
  }
  n.value = std::move(value);
  n.has_value = true;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = nodes_.at(id.index);
  if (!n.has_value) {
    throw std::logic_error("node " + std::to_string(id.index) + " (" +
                           std::string(op_name(n.op)) + ") has no value yet");
  }
  return n.value;
}

const Node& Graph::node(NodeId id) const { return nodes_.at(id.index); }

void Graph::mark_output(NodeId id) { nodes_.at(id.index).role = NodeRole::kOutput; }

Shape Graph::infer_shape(OpKind op, const std::vector<NodeId>& parents,
                         const NodeAttr& attr) const {
  std::vector<Shape> ps;
  for (NodeId p : parents) {
    if (p.index >= nodes_.size()) {
      throw std::out_of_range("parent node " + std::to_string(p.index) +
                              " does not exist");
    }
    ps.push_back(nodes_[p.index].shape);
  }
  auto need = [&](std::size_t count) {
    if (ps.size() != count) shape_fail(op, ps, "wrong number of parents");
  };
  auto need_matrix = [&](std::size_t i) {
    if (!is_matrix(ps[i])) shape_fail(op, ps, "expected rank-2 parent");
  };
  auto need_column_const = [&](std::size_t rows) {
    if (attr.constant.shape() != Shape{rows, 1}) {
      shape_fail(op, ps, "constant column has shape " +
                             shape_str(attr.constant.shape()));
    }
  };

  switch (op) {
    case OpKind::kInput:
    case OpKind::kParameter:
      throw std::logic_error("use Graph::input/parameter for leaf nodes");
    case OpKind::kMatMul:
      need(2);
      need_matrix(0);
      need_matrix(1);
      if (ps[0][1] != ps[1][0]) shape_fail(op, ps, "inner dimensions differ");
      return {ps[0][0], ps[1][1]};
    case OpKind::kTranspose:
      need(1);
      need_matrix(0);
      return {ps[0][1], ps[0][0]};
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
      need(2);
      if (ps[0] != ps[1]) shape_fail(op, ps, "shapes differ");
      return ps[0];
    case OpKind::kAddBias:
      need(2);
      need_matrix(0);
      need_matrix(1);
      if (ps[1][0] != 1 || ps[1][1] != ps[0][1]) {
        shape_fail(op, ps, "bias must be 1 x cols");
      }
      return ps[0];
    case OpKind::kSumRows:
      need(1);
      need_matrix(0);
      return {1, ps[0][1]};
    case OpKind::kBroadcastRows:
      need(1);
      need_matrix(0);
      if (ps[0][0] != 1) shape_fail(op, ps, "expected a single row");
      return {attr.count, ps[0][1]};
    case OpKind::kRowSum:
      need(1);
      need_matrix(0);
      return {ps[0][0], 1};
    case OpKind::kBroadcastCols:
      need(1);
      need_matrix(0);
      if (ps[0][1] != 1) shape_fail(op, ps, "expected a single column");
      return {ps[0][0], attr.count};
    case OpKind::kSum:
    case OpKind::kMean:
      need(1);
      if (op == OpKind::kMean && shape_size(ps[0]) == 0) {
        shape_fail(op, ps, "mean of empty tensor");
      }
      return {1, 1};
    case OpKind::kBroadcastScalar:
      need(1);
      if (shape_size(ps[0]) != 1) shape_fail(op, ps, "expected a scalar");
      return attr.shape;
    case OpKind::kScale:
    case OpKind::kAddScalar:
    case OpKind::kRelu:
    case OpKind::kReluMask:
    case OpKind::kSigmoid:
    case OpKind::kLog:
    case OpKind::kExp:
    case OpKind::kSquare:
    case OpKind::kSqrt:
    case OpKind::kReciprocal:
    case OpKind::kGradReverse:
    case OpKind::kStopGradient:
      need(1);
      return ps[0];
    case OpKind::kSoftmaxRows:
      need(1);
      need_matrix(0);
      return ps[0];
    case OpKind::kRowL2Norm:
      need(1);
      need_matrix(0);
      return {ps[0][0], 1};
    case OpKind::kSoftmaxXent:
      need(1);
      need_matrix(0);
      if (attr.constant.shape() != ps[0]) {
        shape_fail(op, ps, "label matrix has shape " +
                               shape_str(attr.constant.shape()));
      }
      if (ps[0][0] == 0) shape_fail(op, ps, "empty batch");
      return {1, 1};
    case OpKind::kSigmoidXent:
      need(1);
      need_matrix(0);
      if (ps[0][1] != 1) shape_fail(op, ps, "expected a logit column");
      need_column_const(ps[0][0]);
      if (ps[0][0] == 0) shape_fail(op, ps, "empty batch");
      return {1, 1};
    case OpKind::kConcatRows: {
      if (ps.empty()) shape_fail(op, ps, "no parents");
      std::size_t rows = 0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        need_matrix(i);
        if (ps[i][1] != ps[0][1]) shape_fail(op, ps, "column counts differ");
        rows += ps[i][0];
      }
      return {rows, ps[0][1]};
    }
    case OpKind::kSliceRows:
      need(1);
      need_matrix(0);
      if (attr.offset + attr.count > ps[0][0]) {
        shape_fail(op, ps, "slice out of range");
      }
      return {attr.count, ps[0][1]};
    case OpKind::kPadRows:
      need(1);
      need_matrix(0);
      if (attr.offset + ps[0][0] > attr.count) {
        shape_fail(op, ps, "pad target too small");
      }
      return {attr.count, ps[0][1]};
    case OpKind::kScaleRows:
      need(1);
      need_matrix(0);
      need_column_const(ps[0][0]);
      return ps[0];
    case OpKind::kLerp:
      need(2);
      need_matrix(0);
      if (ps[0] != ps[1]) shape_fail(op, ps, "shapes differ");
      need_column_const(ps[0][0]);
      return ps[0];
    case OpKind::kPairwiseSqDist:
      need(2);
      need_matrix(0);
      need_matrix(1);
      if (ps[0][1] != ps[1][1]) shape_fail(op, ps, "column counts differ");
      return {ps[0][0], ps[1][0]};
  }
  shape_fail(op, ps, "unknown op");
}

NodeId Graph::add(OpKind op, std::vector<NodeId> parents, NodeAttr attr) {
  Node n;
  n.shape = infer_shape(op, parents, attr);
  n.op = op;
  n.parents = std::move(parents);
  n.attr = std::move(attr);
  const bool ready = std::all_of(n.parents.begin(), n.parents.end(), [&](NodeId p) {
    return nodes_[p.index].has_value;
  });
  nodes_.push_back(std::move(n));
  if (ready) evaluate(nodes_.size() - 1);
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::evaluate(std::size_t index) {
  Node& n = nodes_[index];
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[n.parents[i].index].value;
  };
  Tensor out;
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kParameter:
      return;
    case OpKind::kMatMul:
      out = Tensor(n.shape);
      matmul_nn(in(0), in(1), out);
      break;
    case OpKind::kTranspose: out = transposed(in(0)); break;
    case OpKind::kAdd: out = zip(in(0), in(1), std::plus<>()); break;
    case OpKind::kSub: out = zip(in(0), in(1), std::minus<>()); break;
    case OpKind::kMul: out = zip(in(0), in(1), std::multiplies<>()); break;
    case OpKind::kAddBias: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      const std::size_t k = x.cols();
      out = x;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % k];
      break;
    }
    case OpKind::kSumRows: out = sum_rows_of(in(0)); break;
    case OpKind::kBroadcastRows: out = broadcast_rows_of(in(0), n.attr.count); break;
    case OpKind::kRowSum: out = row_sum_of(in(0)); break;
    case OpKind::kBroadcastCols: out = broadcast_cols_of(in(0), n.attr.count); break;
    case OpKind::kSum: out = Tensor::scalar(sum_of(in(0))); break;
    case OpKind::kMean:
      out = Tensor::scalar(sum_of(in(0)) / static_cast<double>(in(0).size()));
      break;
    case OpKind::kBroadcastScalar: out = Tensor(n.shape, in(0)[0]); break;
    case OpKind::kScale: {
      const double c = n.attr.scalar;
      out = map(in(0), [c](double v) { return v * c; });
      break;
    }
    case OpKind::kAddScalar: {
      const double c = n.attr.scalar;
      out = map(in(0), [c](double v) { return v + c; });
      break;
    }
    case OpKind::kRelu: out = map(in(0), [](double v) { return v > 0 ? v : 0.0; }); break;
    case OpKind::kReluMask: out = map(in(0), [](double v) { return v > 0 ? 1.0 : 0.0; }); break;
    case OpKind::kSigmoid: out = map(in(0), stable_sigmoid); break;
    case OpKind::kLog: out = map(in(0), [](double v) { return std::log(v); }); break;
    case OpKind::kExp: out = map(in(0), [](double v) { return std::exp(v); }); break;
    case OpKind::kSquare: out = map(in(0), [](double v) { return v * v; }); break;
    case OpKind::kSqrt: out = map(in(0), [](double v) { return std::sqrt(v); }); break;
    case OpKind::kReciprocal: out = map(in(0), [](double v) { return 1.0 / v; }); break;
    case OpKind::kSoftmaxRows: out = softmax_of(in(0)); break;
    case OpKind::kRowL2Norm: {
      const Tensor& x = in(0);
      const std::size_t rows = x.rows(), k = x.cols();
      out = Tensor({rows, 1});
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += x[i * k + j] * x[i * k + j];
        out[i] = std::sqrt(s + kRowNormEpsilon);
      }
      break;
    }
    case OpKind::kSoftmaxXent: {
      const Tensor& x = in(0);
      const Tensor& y = n.attr.constant;
      const std::size_t rows = x.rows(), k = x.cols();
      double total = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        auto xr = x.row(i);
        const double mx = *std::max_element(xr.begin(), xr.end());
        double z = 0.0;
        for (double v : xr) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < k; ++j) total += y[i * k + j] * (lse - xr[j]);
      }
      out = Tensor::scalar(total / static_cast<double>(rows));
      break;
    }
    case OpKind::kSigmoidXent: {
      const Tensor& z = in(0);
      const Tensor& t = n.attr.constant;
      double total = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double softplus =
            std::max(z[i], 0.0) + std::log1p(std::exp(-std::abs(z[i])));
        total += softplus - t[i] * z[i];
      }
      out = Tensor::scalar(total / static_cast<double>(z.size()));
      break;
    }
    case OpKind::kConcatRows: {
      std::vector<Tensor> parts;
      for (std::size_t i = 0; i < n.parents.size(); ++i) parts.push_back(in(i));
      out = concat_rows(parts);
      break;
    }
    case OpKind::kSliceRows: out = slice_rows_of(in(0), n.attr.offset, n.attr.count); break;
    case OpKind::kPadRows: out = pad_rows_of(in(0), n.attr.offset, n.attr.count); break;
    case OpKind::kScaleRows: out = scale_rows_of(in(0), n.attr.constant); break;
    case OpKind::kLerp: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Tensor& eps = n.attr.constant;
      const std::size_t k = a.cols();
      out = Tensor(a.shape());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j)
          out[i * k + j] = eps[i] * a[i * k + j] + (1.0 - eps[i]) * b[i * k + j];
      break;
    }
    case OpKind::kPairwiseSqDist: out = pairwise_sq_dist_of(in(0), in(1)); break;
    case OpKind::kGradReverse:
    case OpKind::kStopGradient:
      out = in(0);
      break;
  }
  if (!out.all_finite()) {
    throw NumericError("non-finite value produced by node " +
                       std::to_string(index) + " (" +
                       std::string(op_name(n.op)) + ")");
  }
  n.value = std::move(out);
  n.has_value = true;
}

void Graph::forward(const Bindings& bindings) {
  for (const auto& [id, t] : bindings) {
    if (id.index >= nodes_.size() || nodes_[id.index].op != OpKind::kInput) {
      throw std::invalid_argument("binding for non-input node " +
                                  std::to_string(id.index));
    }
    set_value(id, t);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == OpKind::kInput && !n.has_value) {
      throw std::invalid_argument(
          "unbound input node " + std::to_string(i) +
          (n.name.empty() ? std::string() : " '" + n.name + "'"));
    }
    evaluate(i);
  }
}

void Graph::check_scalar_output(NodeId output) const {
  const Node& n = nodes_.at(output.index);
  if (shape_size(n.shape) != 1) {
    throw ShapeError("gradient requested of non-scalar node " +
                     std::to_string(output.index) + " with shape " +
                     shape_str(n.shape));
  }
  if (!n.has_value) {
    throw std::logic_error("gradient requested before forward evaluation");
  }
}

std::vector<bool> Graph::reachable_from(std::span<const NodeId> wrt,
                                        std::size_t limit) const {
  std::vector<bool> mark(limit, false);
  for (NodeId w : wrt) {
    if (w.index < limit) mark[w.index] = true;
  }
  for (std::size_t i = 0; i < limit; ++i) {
    if (mark[i]) continue;
    for (NodeId p : nodes_[i].parents) {
      if (mark[p.index]) {
        mark[i] = true;
        break;
      }
    }
  }
  return mark;
}

GradMap Graph::reverse_grad(NodeId output) const {
  std::vector<NodeId> all;
  for (std::size_t i = 0; i <= output.index && i < nodes_.size(); ++i) {
    all.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return reverse_grad(output, all);
}

GradMap Graph::reverse_grad(NodeId output, std::span<const NodeId> wrt) const {
  check_scalar_output(output);
  const std::size_t limit = output.index + 1;
  const std::vector<bool> live = reachable_from(wrt, limit);
  std::vector<std::optional<Tensor>> grads(limit);
  grads[output.index] = Tensor(nodes_[output.index].shape, 1.0);

  for (std::size_t idx = limit; idx-- > 0;) {
    if (!grads[idx]) continue;
    const Node& n = nodes_[idx];
    const Tensor& g = *grads[idx];
    auto in = [&](std::size_t i) -> const Tensor& {
      return nodes_[n.parents[i].index].value;
    };
    auto want = [&](std::size_t i) { return live[n.parents[i].index]; };
    auto give = [&](std::size_t i, Tensor contribution) {
      accumulate(grads[n.parents[i].index], std::move(contribution));
    };

    switch (n.op) {
      case OpKind::kInput:
      case OpKind::kParameter:
      case OpKind::kReluMask:
      case OpKind::kStopGradient:
        break;
      case OpKind::kMatMul:
        if (want(0)) give(0, matmul_nt(g, in(1)));
        if (want(1)) give(1, matmul_tn(in(0), g));
        break;
      case OpKind::kTranspose:
        if (want(0)) give(0, transposed(g));
        break;
      case OpKind::kAdd:
        if (want(0)) give(0, g);
        if (want(1)) give(1, g);
        break;
      case OpKind::kSub:
        if (want(0)) give(0, g);
        if (want(1)) give(1, map(g, [](double v) { return -v; }));
        break;
      case OpKind::kMul:
        if (want(0)) give(0, zip(g, in(1), std::multiplies<>()));
        if (want(1)) give(1, zip(in(0), g, std::multiplies<>()));
        break;
      case OpKind::kAddBias:
        if (want(0)) give(0, g);
        if (want(1)) give(1, sum_rows_of(g));
        break;
      case OpKind::kSumRows:
        if (want(0)) give(0, broadcast_rows_of(g, in(0).rows()));
        break;
      case OpKind::kBroadcastRows:
        if (want(0)) give(0, sum_rows_of(g));
        break;
      case OpKind::kRowSum:
        if (want(0)) give(0, broadcast_cols_of(g, in(0).cols()));
        break;
      case OpKind::kBroadcastCols:
        if (want(0)) give(0, row_sum_of(g));
        break;
      case OpKind::kSum:
        if (want(0)) give(0, Tensor(in(0).shape(), g[0]));
        break;
      case OpKind::kMean:
        if (want(0)) {
          give(0, Tensor(in(0).shape(), g[0] / static_cast<double>(in(0).size())));
        }
        break;
      case OpKind::kBroadcastScalar:
        if (want(0)) give(0, Tensor(in(0).shape(), sum_of(g)));
        break;
      case OpKind::kScale: {
        const double c = n.attr.scalar;
        if (want(0)) give(0, map(g, [c](double v) { return v * c; }));
        break;
      }
      case OpKind::kAddScalar:
        if (want(0)) give(0, g);
        break;
      case OpKind::kRelu:
        if (want(0)) {
          give(0, zip(g, in(0), [](double gv, double x) { return x > 0 ? gv : 0.0; }));
        }
        break;
      case OpKind::kSigmoid:
        if (want(0)) {
          give(0, zip(g, n.value, [](double gv, double y) { return gv * y * (1.0 - y); }));
        }
        break;
      case OpKind::kLog:
        if (want(0)) give(0, zip(g, in(0), [](double gv, double x) { return gv * (1.0 / x); }));
        break;
      case OpKind::kExp:
        if (want(0)) give(0, zip(g, n.value, std::multiplies<>()));
        break;
      case OpKind::kSquare:
        if (want(0)) give(0, zip(g, in(0), [](double gv, double x) { return gv * (x * 2.0); }));
        break;
      case OpKind::kSqrt:
        if (want(0)) {
          give(0, zip(g, n.value, [](double gv, double y) { return gv * ((1.0 / y) * 0.5); }));
        }
        break;
      case OpKind::kReciprocal:
        if (want(0)) {
          give(0, zip(g, n.value, [](double gv, double y) { return gv * ((y * y) * -1.0); }));
        }
        break;
      case OpKind::kSoftmaxRows:
        if (want(0)) {
          const Tensor& y = n.value;
          const Tensor dot = row_sum_of(zip(g, y, std::multiplies<>()));
          const std::size_t k = y.cols();
          Tensor d(y.shape());
          for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < k; ++j)
              d[i * k + j] = y[i * k + j] * (g[i * k + j] - dot[i]);
          give(0, std::move(d));
        }
        break;
      case OpKind::kRowL2Norm:
        if (want(0)) {
          const Tensor& x = in(0);
          const std::size_t k = x.cols();
          Tensor d(x.shape());
          for (std::size_t i = 0; i < x.rows(); ++i) {
            const double s = g[i] * (1.0 / n.value[i]);
            for (std::size_t j = 0; j < k; ++j) d[i * k + j] = s * x[i * k + j];
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::kSoftmaxXent:
        if (want(0)) {
          const Tensor p = softmax_of(in(0));
          const double inv_n = 1.0 / static_cast<double>(p.rows());
          const Tensor& y = n.attr.constant;
          Tensor d(p.shape());
          for (std::size_t i = 0; i < p.size(); ++i) d[i] = g[0] * ((p[i] - y[i]) * inv_n);
          give(0, std::move(d));
        }
        break;
      case OpKind::kSigmoidXent:
        if (want(0)) {
          const Tensor& z = in(0);
          const double inv_n = 1.0 / static_cast<double>(z.size());
          const Tensor& t = n.attr.constant;
          Tensor d(z.shape());
          for (std::size_t i = 0; i < z.size(); ++i) {
            d[i] = g[0] * ((stable_sigmoid(z[i]) - t[i]) * inv_n);
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::kConcatRows: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
          const std::size_t rows = in(i).rows();
          if (want(i)) give(i, slice_rows_of(g, offset, rows));
          offset += rows;
        }
        break;
      }
      case OpKind::kSliceRows:
        if (want(0)) give(0, pad_rows_of(g, n.attr.offset, in(0).rows()));
        break;
      case OpKind::kPadRows:
        if (want(0)) give(0, slice_rows_of(g, n.attr.offset, in(0).rows()));
        break;
      case OpKind::kScaleRows:
        if (want(0)) give(0, scale_rows_of(g, n.attr.constant));
        break;
      case OpKind::kLerp: {
        const Tensor& eps = n.attr.constant;
        if (want(0)) give(0, scale_rows_of(g, eps));
        if (want(1)) give(1, scale_rows_of(g, map(eps, [](double e) { return 1.0 - e; })));
        break;
      }
      case OpKind::kPairwiseSqDist: {
        // d/da_i = 2 (rowsum(G)_i a_i - (G b)_i), d/db_j = 2 (colsum(G)_j b_j - (G^T a)_j)
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (want(0)) {
          const Tensor rs = broadcast_cols_of(row_sum_of(g), a.cols());
          Tensor gb(a.shape());
          matmul_nn(g, b, gb);
          give(0, zip(zip(rs, a, std::multiplies<>()), gb,
                      [](double u, double v) { return (u - v) * 2.0; }));
        }
        if (want(1)) {
          const Tensor cs = broadcast_cols_of(transposed(sum_rows_of(g)), b.cols());
          const Tensor gta = matmul_tn(g, a);
          give(1, zip(zip(cs, b, std::multiplies<>()), gta,
                      [](double u, double v) { return (u - v) * 2.0; }));
        }
        break;
      }
      case OpKind::kGradReverse:
        if (want(0)) give(0, map(g, [](double v) { return v * -1.0; }));
        break;
    }
  }

  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.shape);
  return GradMap(std::move(grads), std::move(shapes));
}

std::vector<NodeId> Graph::grad_graph(NodeId output, std::span<const NodeId> wrt) {
  check_scalar_output(output);
  const std::size_t limit = output.index + 1;
  const std::vector<bool> live = reachable_from(wrt, limit);
  std::vector<std::optional<NodeId>> grads(limit);
  grads[output.index] = constant(Tensor(nodes_[output.index].shape, 1.0));

  auto give = [&](NodeId parent, NodeId contribution) {
    auto& slot = grads[parent.index];
    slot = slot ? wdgrl::add(*this, *slot, contribution) : contribution;
  };

  for (std::size_t idx = limit; idx-- > 0;) {
    if (!grads[idx] || !live[idx]) continue;
    // Copy what we need: add() may reallocate nodes_.
    const OpKind op = nodes_[idx].op;
    const std::vector<NodeId> parents = nodes_[idx].parents;
    const NodeAttr attr = nodes_[idx].attr;
    const NodeId self{static_cast<std::uint32_t>(idx)};
    const NodeId g = *grads[idx];
    auto want = [&](std::size_t i) { return live[parents[i].index]; };
    auto rows_of = [&](std::size_t i) { return nodes_[parents[i].index].shape[0]; };
    auto cols_of = [&](std::size_t i) { return nodes_[parents[i].index].shape[1]; };

    switch (op) {
      case OpKind::kInput:
      case OpKind::kParameter:
      case OpKind::kReluMask:
      case OpKind::kStopGradient:
        break;
      case OpKind::kMatMul:
        if (want(0)) give(parents[0], matmul(*this, g, transpose(*this, parents[1])));
        if (want(1)) give(parents[1], matmul(*this, transpose(*this, parents[0]), g));
        break;
      case OpKind::kTranspose:
        if (want(0)) give(parents[0], transpose(*this, g));
        break;
      case OpKind::kAdd:
        if (want(0)) give(parents[0], g);
        if (want(1)) give(parents[1], g);
        break;
      case OpKind::kSub:
        if (want(0)) give(parents[0], g);
        if (want(1)) give(parents[1], scale(*this, g, -1.0));
        break;
      case OpKind::kMul:
        if (want(0)) give(parents[0], mul(*this, g, parents[1]));
        if (want(1)) give(parents[1], mul(*this, parents[0], g));
        break;
      case OpKind::kAddBias:
        if (want(0)) give(parents[0], g);
        if (want(1)) give(parents[1], sum_rows(*this, g));
        break;
      case OpKind::kSumRows:
        if (want(0)) give(parents[0], broadcast_rows(*this, g, rows_of(0)));
        break;
      case OpKind::kBroadcastRows:
        if (want(0)) give(parents[0], sum_rows(*this, g));
        break;
      case OpKind::kRowSum:
        if (want(0)) give(parents[0], broadcast_cols(*this, g, cols_of(0)));
        break;
      case OpKind::kBroadcastCols:
        if (want(0)) give(parents[0], row_sum(*this, g));
        break;
      case OpKind::kSum:
        if (want(0)) {
          give(parents[0], broadcast_scalar(*this, g, nodes_[parents[0].index].shape));
        }
        break;
      case OpKind::kMean:
        if (want(0)) {
          const Shape s = nodes_[parents[0].index].shape;
          give(parents[0], scale(*this, broadcast_scalar(*this, g, s),
                                 1.0 / static_cast<double>(shape_size(s))));
        }
        break;
      case OpKind::kBroadcastScalar:
        if (want(0)) give(parents[0], sum(*this, g));
        break;
      case OpKind::kScale:
        if (want(0)) give(parents[0], scale(*this, g, attr.scalar));
        break;
      case OpKind::kAddScalar:
        if (want(0)) give(parents[0], g);
        break;
      case OpKind::kRelu:
        if (want(0)) give(parents[0], mul(*this, g, relu_mask(*this, parents[0])));
        break;
      case OpKind::kSigmoid:
        if (want(0)) {
          const NodeId one_minus = add_scalar(*this, scale(*this, self, -1.0), 1.0);
          give(parents[0], mul(*this, g, mul(*this, self, one_minus)));
        }
        break;
      case OpKind::kLog:
        if (want(0)) give(parents[0], mul(*this, g, reciprocal(*this, parents[0])));
        break;
      case OpKind::kExp:
        if (want(0)) give(parents[0], mul(*this, g, self));
        break;
      case OpKind::kSquare:
        if (want(0)) give(parents[0], mul(*this, g, scale(*this, parents[0], 2.0)));
        break;
      case OpKind::kSqrt:
        if (want(0)) {
          give(parents[0], mul(*this, g, scale(*this, reciprocal(*this, self), 0.5)));
        }
        break;
      case OpKind::kReciprocal:
        if (want(0)) {
          give(parents[0], mul(*this, g, scale(*this, square(*this, self), -1.0)));
        }
        break;
      case OpKind::kSoftmaxRows:
        if (want(0)) {
          const std::size_t k = cols_of(0);
          const NodeId dot = broadcast_cols(*this, row_sum(*this, mul(*this, g, self)), k);
          give(parents[0], mul(*this, self, sub(*this, g, dot)));
        }
        break;
      case OpKind::kRowL2Norm:
        if (want(0)) {
          const NodeId s = mul(*this, g, reciprocal(*this, self));
          give(parents[0], mul(*this, broadcast_cols(*this, s, cols_of(0)), parents[0]));
        }
        break;
      case OpKind::kSoftmaxXent:
        if (want(0)) {
          const Shape s = nodes_[parents[0].index].shape;
          const NodeId labels = constant(attr.constant);
          const NodeId diff = sub(*this, softmax_rows(*this, parents[0]), labels);
          const NodeId scaled = scale(*this, diff, 1.0 / static_cast<double>(s[0]));
          give(parents[0], mul(*this, broadcast_scalar(*this, g, s), scaled));
        }
        break;
      case OpKind::kSigmoidXent:
        if (want(0)) {
          const Shape s = nodes_[parents[0].index].shape;
          const NodeId targets = constant(attr.constant);
          const NodeId diff = sub(*this, sigmoid(*this, parents[0]), targets);
          const NodeId scaled = scale(*this, diff, 1.0 / static_cast<double>(s[0]));
          give(parents[0], mul(*this, broadcast_scalar(*this, g, s), scaled));
        }
        break;
      case OpKind::kConcatRows: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < parents.size(); ++i) {
          const std::size_t rows = rows_of(i);
          if (want(i)) give(parents[i], slice_rows(*this, g, offset, rows));
          offset += rows;
        }
        break;
      }
      case OpKind::kSliceRows:
        if (want(0)) give(parents[0], pad_rows(*this, g, attr.offset, rows_of(0)));
        break;
      case OpKind::kPadRows:
        if (want(0)) give(parents[0], slice_rows(*this, g, attr.offset, rows_of(0)));
        break;
      case OpKind::kScaleRows:
        if (want(0)) give(parents[0], scale_rows(*this, g, attr.constant));
        break;
      case OpKind::kLerp:
        if (want(0)) give(parents[0], scale_rows(*this, g, attr.constant));
        if (want(1)) {
          give(parents[1], scale_rows(*this, g, map(attr.constant,
                                                    [](double e) { return 1.0 - e; })));
        }
        break;
      case OpKind::kPairwiseSqDist: {
        const NodeId a = parents[0];
        const NodeId b = parents[1];
        if (want(0)) {
          const NodeId rs = broadcast_cols(*this, row_sum(*this, g), cols_of(0));
          give(a, scale(*this, sub(*this, mul(*this, rs, a), matmul(*this, g, b)), 2.0));
        }
        if (want(1)) {
          const NodeId cs =
              broadcast_cols(*this, transpose(*this, sum_rows(*this, g)), cols_of(1));
          give(b, scale(*this, sub(*this, mul(*this, cs, b), matmul(*this, transpose(*this, g), a)),
                        2.0));
        }
        break;
      }
      case OpKind::kGradReverse:
        if (want(0)) give(parents[0], scale(*this, g, -1.0));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w.index < limit && grads[w.index]) {
      out.push_back(*grads[w.index]);
    } else {
      out.push_back(constant(Tensor(nodes_.at(w.index).shape)));
    }
  }
  return out;
}

NodeId matmul(Graph& g, NodeId a, NodeId b) { return g.add(OpKind::kMatMul, {a, b}); }
NodeId transpose(Graph& g, NodeId a) { return g.add(OpKind::kTranspose, {a}); }
NodeId add(Graph& g, NodeId a, NodeId b) { return g.add(OpKind::kAdd, {a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return g.add(OpKind::kSub, {a, b}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.add(OpKind::kMul, {a, b}); }
NodeId add_bias(Graph& g, NodeId x, NodeId bias) { return g.add(OpKind::kAddBias, {x, bias}); }
NodeId sum_rows(Graph& g, NodeId x) { return g.add(OpKind::kSumRows, {x}); }

NodeId broadcast_rows(Graph& g, NodeId x, std::size_t rows) {
  NodeAttr a;
  a.count = rows;
  return g.add(OpKind::kBroadcastRows, {x}, std::move(a));
}

NodeId row_sum(Graph& g, NodeId x) { return g.add(OpKind::kRowSum, {x}); }

NodeId broadcast_cols(Graph& g, NodeId x, std::size_t cols) {
  NodeAttr a;
  a.count = cols;
  return g.add(OpKind::kBroadcastCols, {x}, std::move(a));
}

NodeId sum(Graph& g, NodeId x) { return g.add(OpKind::kSum, {x}); }
NodeId mean(Graph& g, NodeId x) { return g.add(OpKind::kMean, {x}); }

NodeId broadcast_scalar(Graph& g, NodeId x, Shape shape) {
  NodeAttr a;
  a.shape = std::move(shape);
  return g.add(OpKind::kBroadcastScalar, {x}, std::move(a));
}

NodeId scale(Graph& g, NodeId x, double c) {
  NodeAttr a;
  a.scalar = c;
  return g.add(OpKind::kScale, {x}, std::move(a));
}

NodeId add_scalar(Graph& g, NodeId x, double c) {
  NodeAttr a;
  a.scalar = c;
  return g.add(OpKind::kAddScalar, {x}, std::move(a));
}

NodeId relu(Graph& g, NodeId x) { return g.add(OpKind::kRelu, {x}); }
NodeId relu_mask(Graph& g, NodeId x) { return g.add(OpKind::kReluMask, {x}); }
NodeId sigmoid(Graph& g, NodeId x) { return g.add(OpKind::kSigmoid, {x}); }
NodeId log(Graph& g, NodeId x) { return g.add(OpKind::kLog, {x}); }
NodeId exp(Graph& g, NodeId x) { return g.add(OpKind::kExp, {x}); }
NodeId square(Graph& g, NodeId x) { return g.add(OpKind::kSquare, {x}); }
NodeId sqrt(Graph& g, NodeId x) { return g.add(OpKind::kSqrt, {x}); }
NodeId reciprocal(Graph& g, NodeId x) { return g.add(OpKind::kReciprocal, {x}); }
NodeId softmax_rows(Graph& g, NodeId x) { return g.add(OpKind::kSoftmaxRows, {x}); }
NodeId row_l2_norm(Graph& g, NodeId x) { return g.add(OpKind::kRowL2Norm, {x}); }

NodeId softmax_xent(Graph& g, NodeId logits, Tensor one_hot) {
  NodeAttr a;
  a.constant = std::move(one_hot);
  return g.add(OpKind::kSoftmaxXent, {logits}, std::move(a));
}

NodeId sigmoid_xent(Graph& g, NodeId logits, Tensor targets) {
  NodeAttr a;
  a.constant = std::move(targets);
  return g.add(OpKind::kSigmoidXent, {logits}, std::move(a));
}

NodeId concat_rows(Graph& g, std::vector<NodeId> parts) {
  return g.add(OpKind::kConcatRows, std::move(parts));
}

NodeId slice_rows(Graph& g, NodeId x, std::size_t offset, std::size_t count) {
  NodeAttr a;
  a.offset = offset;
  a.count = count;
  return g.add(OpKind::kSliceRows, {x}, std::move(a));
}

NodeId pad_rows(Graph& g, NodeId x, std::size_t offset, std::size_t total) {
  NodeAttr a;
  a.offset = offset;
  a.count = total;
  return g.add(OpKind::kPadRows, {x}, std::move(a));
}

NodeId scale_rows(Graph& g, NodeId x, Tensor column) {
  NodeAttr a;
  a.constant = std::move(column);
  return g.add(OpKind::kScaleRows, {x}, std::move(a));
}

NodeId lerp(Graph& g, NodeId a, NodeId b, Tensor eps_column) {
  NodeAttr attr;
  attr.constant = std::move(eps_column);
  return g.add(OpKind::kLerp, {a, b}, std::move(attr));
}

NodeId pairwise_sq_dist(Graph& g, NodeId a, NodeId b) {
  return g.add(OpKind::kPairwiseSqDist, {a, b});
}

NodeId grad_reverse(Graph& g, NodeId x) { return g.add(OpKind::kGradReverse, {x}); }
NodeId stop_gradient(Graph& g, NodeId x) { return g.add(OpKind::kStopGradient, {x}); }

double fd_check(Graph& g, NodeId output, std::span<const NodeId> params,
                double step) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_check: step must be > 0");
  g.forward();
  const GradMap analytic = g.reverse_grad(output, params);
  double worst = 0.0;
  for (NodeId p : params) {
    const Tensor original = g.value(p);
    const Tensor grad = analytic.at(p);
    Tensor probe = original;
    for (std::size_t i = 0; i < original.size(); ++i) {
      probe[i] = original[i] + step;
      g.set_value(p, probe);
      g.forward();
      const double up = g.value(output).item();
      probe[i] = original[i] - step;
      g.set_value(p, probe);
      g.forward();
      const double down = g.value(output).item();
      probe[i] = original[i];
      const double numeric = (up - down) / (2.0 * step);
      const double denom =
          std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
    }
    g.set_value(p, original);
  }
  g.forward();
  return worst;
}

}  // namespace wdgrl
