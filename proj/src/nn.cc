#include "wdgrl/nn.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wdgrl/random.h"

namespace wdgrl {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

std::string to_string(Head h) {
  switch (h) {
    case Head::kFeatures: return "features";
    case Head::kSoftmax: return "softmax";
    case Head::kScalar: return "scalar";
    case Head::kSigmoidLogit: return "sigmoid-logit";
  }
  return "?";
}

void MlpSpec::validate() const {
  if (activations.empty()) throw std::invalid_argument("MlpSpec: no layers");
  if (widths.size() != activations.size() + 1) {
    throw std::invalid_argument("MlpSpec: need one more width than layers");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec: zero width");
  }
  if ((head == Head::kScalar || head == Head::kSigmoidLogit) && output_dim() != 1) {
    throw std::invalid_argument("MlpSpec: " + to_string(head) +
                                " head needs output width 1");
  }
  if (head == Head::kSoftmax && output_dim() < 2) {
    throw std::invalid_argument("MlpSpec: softmax head needs >= 2 classes");
  }
}

MlpSpec MlpSpec::feature_extractor(std::size_t input_dim,
                                   std::vector<std::size_t> hidden) {
  MlpSpec s;
  s.widths.push_back(input_dim);
  for (std::size_t h : hidden) {
    s.widths.push_back(h);
    s.activations.push_back(Activation::kRelu);
  }
  s.head = Head::kFeatures;
  s.validate();
  return s;
}

MlpSpec MlpSpec::classifier(std::size_t dim, std::size_t classes,
                            std::vector<std::size_t> hidden) {
  MlpSpec s;
  s.widths.push_back(dim);
  for (std::size_t h : hidden) {
    s.widths.push_back(h);
    s.activations.push_back(Activation::kRelu);
  }
  s.widths.push_back(classes);
  s.activations.push_back(Activation::kIdentity);
  s.head = Head::kSoftmax;
  s.validate();
  return s;
}

MlpSpec MlpSpec::critic(std::size_t dim, std::size_t hidden) {
  MlpSpec s{{dim, hidden, 1}, {Activation::kRelu, Activation::kIdentity}, Head::kScalar};
  s.validate();
  return s;
}

MlpSpec MlpSpec::domain_classifier(std::size_t dim, std::size_t hidden) {
  MlpSpec s{{dim, hidden, 1},
            {Activation::kRelu, Activation::kIdentity},
            Head::kSigmoidLogit};
  s.validate();
  return s;
}

std::size_t ParamSet::num_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ParamSet init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamSet p;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.widths[l];
    const std::size_t fan_out = spec.widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor w({fan_in, fan_out});
    for (auto& v : w.data()) v = u(rng);
    p.tensors.push_back(std::move(w));
    p.tensors.emplace_back(Shape{1, fan_out});
  }
  return p;
}

std::vector<NodeId> bind_params(Graph& g, const ParamSet& params,
                                const std::string& prefix) {
  std::vector<NodeId> ids;
  ids.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    ids.push_back(g.parameter(params.tensors[i],
                              prefix + (i % 2 == 0 ? ".w" : ".b") + std::to_string(i / 2)));
  }
  return ids;
}

NodeId apply(const MlpSpec& spec, Graph& g, std::span<const NodeId> param_nodes,
             NodeId input) {
  if (param_nodes.size() != 2 * spec.num_layers()) {
    throw std::invalid_argument("apply: expected " +
                                std::to_string(2 * spec.num_layers()) +
                                " parameter nodes, got " +
                                std::to_string(param_nodes.size()));
  }
  const Shape& in_shape = g.node(input).shape;
  if (in_shape.size() != 2 || in_shape[1] != spec.input_dim()) {
    throw ShapeError("apply: input shape " + shape_str(in_shape) +
                     " does not match network input width " +
                     std::to_string(spec.input_dim()));
  }
  NodeId h = input;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    h = add_bias(g, matmul(g, h, param_nodes[2 * l]), param_nodes[2 * l + 1]);
    switch (spec.activations[l]) {
      case Activation::kRelu: h = relu(g, h); break;
      case Activation::kSigmoid: h = sigmoid(g, h); break;
      case Activation::kIdentity: break;
    }
  }
  return h;
}

Tensor predict(const MlpSpec& spec, const ParamSet& params, const Tensor& input) {
  Graph g;
  const auto nodes = bind_params(g, params);
  const NodeId x = g.constant(input);
  return g.value(apply(spec, g, nodes, x));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[i]) +
                              " at row " + std::to_string(i) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

NodeId softmax_xent(Graph& g, NodeId logits, std::span<const int> labels) {
  const Shape& s = g.node(logits).shape;
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("softmax_xent: logits " + shape_str(s) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  return softmax_xent(g, logits, one_hot(labels, s[1]));
}

std::vector<Tensor> collect_grads(const GradMap& grads,
                                  std::span<const NodeId> nodes) {
  std::vector<Tensor> out;
  out.reserve(nodes.size());
  for (NodeId n : nodes) out.push_back(grads.at(n));
  return out;
}

AdamState AdamState::for_params(const ParamSet& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& t : params.tensors) {
    s.first_moment.push_back(Tensor::zeros_like(t));
    s.second_moment.push_back(Tensor::zeros_like(t));
  }
  return s;
}

void adam_step(AdamState& state, ParamSet& params, std::span<const Tensor> grads) {
  if (grads.size() != params.tensors.size() ||
      state.first_moment.size() != params.tensors.size()) {
    throw std::invalid_argument("adam_step: gradient/parameter count mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params.tensors[i])) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has shape " +
                       shape_str(grads[i].shape()) + ", parameter has " +
                       shape_str(params.tensors[i].shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient at step " +
                         std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.tensors[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

namespace {

void write_le_double(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double read_le_double(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw std::runtime_error("checkpoint: truncated data");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedParams& nets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << "wdgrl-checkpoint 1";
  for (const auto& [name, params] : nets) {
    if (name.empty() || name.find_first_of(" :,\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: bad network name '" + name + "'");
    }
    out << ' ' << name << ':';
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      const Shape& s = params.tensors[i].shape();
      out << (i ? "," : "") << s.at(0) << 'x' << s.at(1);
    }
  }
  out << '\n';
  for (const auto& [name, params] : nets) {
    for (const auto& t : params.tensors) {
      for (double v : t.data()) write_le_double(out, v);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

NamedParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != "wdgrl-checkpoint" || version != "1") {
    throw std::runtime_error("checkpoint: bad header in " + path.string());
  }
  NamedParams nets;
  std::string block;
  while (hs >> block) {
    const auto colon = block.find(':');
    if (colon == std::string::npos) throw std::runtime_error("checkpoint: bad block " + block);
    ParamSet params;
    std::istringstream shapes(block.substr(colon + 1));
    std::string dims;
    while (std::getline(shapes, dims, ',')) {
      const auto x = dims.find('x');
      if (x == std::string::npos) throw std::runtime_error("checkpoint: bad shape " + dims);
      params.tensors.emplace_back(
          Shape{std::stoul(dims.substr(0, x)), std::stoul(dims.substr(x + 1))});
    }
    nets.emplace_back(block.substr(0, colon), std::move(params));
  }
  for (auto& [name, params] : nets) {
    for (auto& t : params.tensors) {
      for (auto& v : t.data()) v = read_le_double(in);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  }
  return nets;
}

}  // namespace wdgrl
