#include "wdgrl/diagnostics.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace wdgrl {

namespace {

double distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double d = a.at(i, k) - b.at(j, k);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double exact_w1(const Tensor& a, const Tensor& b, W1Mode mode) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("exact_w1: point sets " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not comparable");
  }
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("exact_w1: sizes differ (" + std::to_string(a.rows()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  const std::size_t n = a.rows();
  if (n == 0) throw std::invalid_argument("exact_w1: empty point sets");
  if (mode == W1Mode::kSorted1d) {
    if (a.cols() != 1) throw std::invalid_argument("exact_w1: sorted mode needs 1-d points");
    std::vector<double> x(a.data().begin(), a.data().end());
    std::vector<double> y(b.data().begin(), b.data().end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::abs(x[i] - y[i]);
    return total / static_cast<double>(n);
  }
  if (n > 10) throw std::invalid_argument("exact_w1: matching mode is limited to 10 points");
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = distance(a, i, b, j);
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n && total < best; ++i) total += cost[i][perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

double spectral_norm(const Tensor& w, double tol, int max_iter) {
  const std::size_t r = w.rows(), c = w.cols();
  // Deterministic, non-degenerate start.
  std::vector<double> v(c);
  for (std::size_t j = 0; j < c; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j % 7);
  std::vector<double> u(r);
  double prev = 0.0, sigma = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    double vn = 0.0;
    for (double x : v) vn += x * x;
    vn = std::sqrt(vn);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += w.at(i, j) * v[j];
      u[i] = s;
    }
    double un = 0.0;
    for (double x : u) un += x * x;
    sigma = std::sqrt(un);
    if (it > 0 && std::abs(sigma - prev) <= tol * sigma) break;
    prev = sigma;
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) v[j] += w.at(i, j) * u[i];
    }
  }
  return sigma;
}

double lipschitz_bound(const MlpSpec& spec, const ParamSet& params) {
  spec.validate();
  double k = 1.0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    k *= spectral_norm(params.weight(l));
    if (spec.activations[l] == Activation::kSigmoid) k *= 0.25;
  }
  if (spec.head == Head::kSigmoidLogit) k *= 0.25;
  return k;
}

std::vector<double> Hypothesis::outputs(const Tensor& x) const {
  if (spec.head != Head::kSigmoidLogit) {
    throw std::invalid_argument("hypothesis needs a sigmoid head to output values in [0, 1]");
  }
  const Tensor logits = predict(spec, params, x);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    if (!(out[i] >= 0.0 && out[i] <= 1.0)) {
      throw std::domain_error("hypothesis output outside [0, 1]");
    }
  }
  return out;
}

namespace {

double mean_abs_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<double> label_values(const Tensor& x, const LabelingFn& f) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = f(x.row(i));
  return out;
}

}  // namespace

BoundReport bound_check(const Hypothesis& h, const Hypothesis& h_prime,
                        const DomainPair& pair, const LabelingFn& labeling,
                        std::span<const Hypothesis> candidates) {
  const Tensor& xs = pair.source.features;
  const Tensor& xt = pair.target.features;
  const W1Mode mode = xs.cols() == 1 ? W1Mode::kSorted1d : W1Mode::kMatching;

  BoundReport r;
  r.eps_s = mean_abs_gap(h.outputs(xs), h_prime.outputs(xs));
  r.eps_t = mean_abs_gap(h.outputs(xt), h_prime.outputs(xt));
  r.w1 = exact_w1(xs, xt, mode);
  r.k = std::max(lipschitz_bound(h.spec, h.params), lipschitz_bound(h_prime.spec, h_prime.params));
  r.slack = r.eps_s + 2.0 * r.k * r.w1 - r.eps_t;
  if (labeling && !candidates.empty()) {
    const auto fs = label_values(xs, labeling);
    const auto ft = label_values(xt, labeling);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      best = std::min(best, mean_abs_gap(c.outputs(xs), fs) + mean_abs_gap(c.outputs(xt), ft));
    }
    r.ideal_error = best;
  }
  return r;
}

Projection parse_projection(const std::string& name) {
  if (name == "none") return Projection::kNone;
  if (name == "pca2") return Projection::kPca2;
  throw std::invalid_argument("unknown projection '" + name + "'");
}

Tensor Pca::project(const Tensor& x) const {
  Tensor out({x.rows(), axes.size()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t a = 0; a < axes.size(); ++a) {
      double s = 0.0;
      for (std::size_t k = 0; k < mean.size(); ++k) s += (x.at(i, k) - mean[k]) * axes[a][k];
      out.at(i, a) = s;
    }
  }
  return out;
}

Pca fit_pca2(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2 || d < 2) throw std::invalid_argument("fit_pca2: need >= 2 rows and >= 2 columns");
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) m(i, k) = x.at(i, k);
  }
  const Eigen::RowVectorXd mu = m.colwise().mean();
  m.rowwise() -= mu;
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("fit_pca2: eigen-decomposition failed");

  Pca p;
  p.mean.assign(mu.data(), mu.data() + d);
  for (int a = 0; a < 2; ++a) {
    // Eigenvalues come in increasing order.
    Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - a);
    Eigen::Index top = 0;
    v.cwiseAbs().maxCoeff(&top);
    if (v(top) < 0) v = -v;
    p.axes.emplace_back(v.data(), v.data() + d);
  }
  return p;
}

std::vector<EmbeddingRow> export_embeddings(const MlpSpec& extractor_spec,
                                            const ParamSet& extractor,
                                            const DomainPair& pair, Projection projection) {
  std::vector<const LabeledSet*> parts = {&pair.source, &pair.target};
  std::vector<std::string> names = {"source", "target"};
  if (pair.target_test && pair.target_test->size() > 0) {
    parts.push_back(&*pair.target_test);
    names.push_back("target_test");
  }
  std::vector<Tensor> embedded;
  for (const auto* part : parts) embedded.push_back(predict(extractor_spec, extractor, part->features));
  Tensor coords = concat_rows(embedded);
  if (projection == Projection::kPca2) coords = fit_pca2(coords).project(coords);

  std::vector<EmbeddingRow> rows;
  std::size_t id = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t i = 0; i < parts[p]->size(); ++i, ++id) {
      EmbeddingRow row;
      row.id = id;
      row.domain = names[p];
      row.label = parts[p]->labels[i];
      const auto c = coords.row(id);
      row.coords.assign(c.begin(), c.end());
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_embeddings_tsv(std::ostream& out, const std::vector<EmbeddingRow>& rows) {
  out << "id\tdomain\tlabel";
  const std::size_t width = rows.empty() ? 0 : rows.front().coords.size();
  for (std::size_t k = 0; k < width; ++k) out << "\tc" << k;
  out << '\n';
  for (const auto& r : rows) {
    out << r.id << '\t' << r.domain << '\t' << r.label;
    for (double v : r.coords) out << '\t' << format_double(v);
    out << '\n';
  }
}

}  // namespace wdgrl
