#ifndef WDGRL_DIAGNOSTICS_H_
#define WDGRL_DIAGNOSTICS_H_

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wdgrl/data.h"
#include "wdgrl/nn.h"

namespace wdgrl {

enum class W1Mode { kSorted1d, kMatching };

// Exact W1 between two equal-size empirical measures with uniform weights
// and Euclidean ground cost. Rows are points. kMatching enumerates all
// permutations and is limited to 10 points.
double exact_w1(const Tensor& a, const Tensor& b, W1Mode mode);

// Largest singular value by power iteration on W^T W.
double spectral_norm(const Tensor& w, double tol = 1e-8, int max_iter = 100000);

// Product over layers of ||W_l||_2 times the activation's Lipschitz constant
// (relu 1, sigmoid 1/4, identity 1). A sigmoid-logit head contributes its
// sigmoid as well, so the bound covers the probability output.
double lipschitz_bound(const MlpSpec& spec, const ParamSet& params);

// A hypothesis with outputs in [0, 1]: an MLP with a sigmoid-logit head.
struct Hypothesis {
  MlpSpec spec;
  ParamSet params;

  std::vector<double> outputs(const Tensor& x) const;
};

using LabelingFn = std::function<double(std::span<const double>)>;

struct BoundReport {
  double eps_s = 0.0;  // mean |h - h'| on source points
  double eps_t = 0.0;  // mean |h - h'| on target points
  double w1 = 0.0;     // exact W1 between source and target inputs
  double k = 0.0;      // max of the two Lipschitz bounds
  double slack = 0.0;  // eps_s + 2 k w1 - eps_t
  std::optional<double> ideal_error;  // min over candidates of eps_s(h,f) + eps_t(h,f)
};

// Source and target rows are taken from pair.source / pair.target features.
// 1-d inputs use the sorted oracle, otherwise both sides need <= 10 rows.
BoundReport bound_check(const Hypothesis& h, const Hypothesis& h_prime,
                        const DomainPair& pair, const LabelingFn& labeling = {},
                        std::span<const Hypothesis> candidates = {});

enum class Projection { kNone, kPca2 };

Projection parse_projection(const std::string& name);

struct Pca {
  std::vector<double> mean;              // d
  std::vector<std::vector<double>> axes;  // 2 unit vectors of length d
  Tensor project(const Tensor& x) const;  // n x 2
};

// Top two principal axes of the rows of x. Each axis is oriented so its
// largest-magnitude coordinate is positive.
Pca fit_pca2(const Tensor& x);

struct EmbeddingRow {
  std::size_t id = 0;
  std::string domain;
  int label = -1;
  std::vector<double> coords;
};

std::vector<EmbeddingRow> export_embeddings(const MlpSpec& extractor_spec,
                                            const ParamSet& extractor,
                                            const DomainPair& pair, Projection projection);
void write_embeddings_tsv(std::ostream& out, const std::vector<EmbeddingRow>& rows);

}  // namespace wdgrl

#endif  // WDGRL_DIAGNOSTICS_H_
