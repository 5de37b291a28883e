#ifndef WDGRL_DATA_H_
#define WDGRL_DATA_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdgrl/random.h"
#include "wdgrl/tensor.h"

namespace wdgrl {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rows of features with per-row labels; -1 marks an unlabeled row.
struct LabeledSet {
  Tensor features;
  std::vector<int> labels;
  std::string domain;

  std::size_t size() const { return features.empty() ? 0 : features.rows(); }
  std::size_t dim() const { return features.empty() ? 0 : features.cols(); }
  // True when every row carries a label >= 0.
  bool labeled() const;
  // 1 + largest label (0 if none).
  int num_classes() const;

  LabeledSet subset(std::span<const std::size_t> rows) const;
};

struct DomainPair {
  LabeledSet source;
  LabeledSet target;
  std::optional<LabeledSet> target_test;

  // Target rows used for reported accuracy: the held-out split if present.
  const LabeledSet& target_eval() const { return target_test ? *target_test : target; }
  std::size_t num_classes() const;
  void validate() const;
};

enum class DataFormat { kSparseBow, kDenseCsv };

DataFormat parse_format(const std::string& name);
std::string to_string(DataFormat f);

// Sparse files are "<label> <idx>:<value> ..." with 0-based indices and a
// sidecar "<path>.dim" holding the feature dimension. Dense files are CSV
// with a header whose first column is "label".
LabeledSet load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::string& domain = {});
void save_dataset(const LabeledSet& set, const std::filesystem::path& path,
                  DataFormat format);

struct Split {
  LabeledSet train;
  LabeledSet test;
};

// Seeded shuffle, then the first round(fraction * n) rows become the test set.
Split split_dataset(const LabeledSet& set, double test_fraction, std::uint64_t seed);

enum class SyntheticKind { kDistantBlobs, kOverlappingBlobs, kIdentical };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind k);
double default_shift(SyntheticKind k);

// Two classes in R^2, N((0,0), 0.25 I) and N((0,2), 0.25 I), n/2 rows each
// per domain; the target is translated by (shift, 0). A negative shift means
// the kind's default.
DomainPair make_synthetic(SyntheticKind kind, std::size_t n_per_domain, double shift,
                          std::uint64_t seed);

struct Batch {
  Tensor x_source;
  std::vector<int> y_source;
  Tensor x_target;
};

// Draws balanced batches: `half` source rows and `half` target rows. Each
// domain walks its own shuffled order; when fewer than `half` rows remain the
// remainder is dropped and the domain is reshuffled.
class BatchSampler {
 public:
  BatchSampler(std::size_t n_source, std::size_t n_target, std::size_t half,
               std::uint64_t seed);

  struct Indices {
    std::vector<std::size_t> source;
    std::vector<std::size_t> target;
  };
  Indices next_indices();
  Batch next(const DomainPair& pair);

  std::size_t half() const { return half_; }

 private:
  struct Stream {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };
  std::vector<std::size_t> take(Stream& s);

  std::size_t half_;
  Rng rng_;
  Stream source_, target_;
};

// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace wdgrl

#endif  // WDGRL_DATA_H_
