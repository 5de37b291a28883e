#ifndef WDGRL_TRAINING_H_
#define WDGRL_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wdgrl/data.h"
#include "wdgrl/divergence.h"
#include "wdgrl/nn.h"

namespace wdgrl {

struct TrainConfig {
  std::size_t batch_size = 64;  // total; half from each domain
  int critic_steps = 5;
  double gamma = 10.0;
  double lambda = 1.0;
  double critic_lr = 1e-4;  // critic and DANN domain classifier
  double lr = 1e-4;         // feature extractor and classifier
  int iterations = 5000;
  int eval_every = 50;
  std::uint64_t seed = 1;
  DivergenceKind divergence = DivergenceKind::kWasserstein;
  std::vector<std::size_t> extractor_hidden = {500};
  std::vector<std::size_t> classifier_hidden = {};
  std::size_t critic_hidden = 100;
  std::size_t domain_hidden = 100;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Sets a TrainConfig field from its text form. Keys are the names listed by
// train_keys(); throws std::invalid_argument on an unknown key or bad value.
void set_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string get_train_key(const TrainConfig& cfg, const std::string& key);
const std::vector<std::string>& train_keys();

struct StepRecord {
  int iter = 0;
  double loss_c = 0.0;
  double div_value = 0.0;
  double grad_penalty = 0.0;
  double gnorm_cls = 0.0;  // ||d L_c / d theta_g||
  double gnorm_div = 0.0;  // ||d (lambda * divergence) / d theta_g||
  double acc_src = 0.0;
  double acc_tgt = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct ExperimentResult {
  TrainConfig config;
  std::vector<StepRecord> trace;
  // Per-iteration gradient norms into theta_g and divergence values.
  std::vector<double> gnorm_cls_all;
  std::vector<double> gnorm_div_all;
  std::vector<double> div_all;
  double acc_src = 0.0;
  double acc_tgt = 0.0;
  double best_acc_tgt = 0.0;
  int iterations = 0;
  double seconds = 0.0;
  NamedParams params;
};

// Thrown when a loss or gradient turns non-finite. Carries the run so far.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::shared_ptr<ExperimentResult> partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const ExperimentResult& partial() const { return *partial_; }

 private:
  std::shared_ptr<ExperimentResult> partial_;
};

// Fraction of rows whose argmax prediction equals the label; ties go to the
// lowest class index.
double evaluate_accuracy(const MlpSpec& extractor_spec, const ParamSet& extractor,
                         const MlpSpec& classifier_spec, const ParamSet& classifier,
                         const LabeledSet& data);

// Owns every network and optimizer of one run and advances it one outer
// iteration at a time.
class Trainer {
 public:
  Trainer(const DomainPair& data, TrainConfig cfg);

  // One outer iteration: sample a batch, then the divergence-specific steps.
  void step();
  int iteration() const { return iter_; }

  // WDGRL phases, exposed for tests. critic_phase touches only the critic;
  // main_phase touches only the extractor and classifier.
  void critic_phase(const Batch& batch);
  void main_phase(const Batch& batch);
  Batch next_batch() { return sampler_.next(data_); }

  StepRecord evaluate() const;
  const StepRecord& last() const { return last_; }
  double last_gnorm_cls() const { return last_.gnorm_cls; }
  double last_gnorm_div() const { return last_.gnorm_div; }

  const TrainConfig& config() const { return cfg_; }
  const MlpSpec& extractor_spec() const { return extractor_spec_; }
  const MlpSpec& classifier_spec() const { return classifier_spec_; }
  const ParamSet& extractor() const { return extractor_; }
  const ParamSet& classifier() const { return classifier_; }
  const CriticNet& critic() const { return critic_; }
  const ParamSet& domain_classifier() const { return domain_; }
  NamedParams named_params() const;

 private:
  void joint_phase(const Batch& batch);

  const DomainPair& data_;
  TrainConfig cfg_;
  MlpSpec extractor_spec_, classifier_spec_, domain_spec_;
  ParamSet extractor_, classifier_, domain_;
  AdamState extractor_adam_, classifier_adam_, domain_adam_;
  CriticNet critic_;
  BatchSampler sampler_;
  Rng interp_rng_;
  KernelBank bank_;
  int iter_ = 0;
  StepRecord last_;  // loss and gradient fields of the latest iteration
};

// Algorithm-level entry points. train() dispatches on cfg.divergence.
ExperimentResult train_wdgrl(const DomainPair& data, const TrainConfig& cfg);
ExperimentResult train_with_divergence(const DomainPair& data, const TrainConfig& cfg);
ExperimentResult train(const DomainPair& data, const TrainConfig& cfg);

// Ordered key -> candidate values; keys use set_train_key names.
using Grid = std::vector<std::pair<std::string, std::vector<std::string>>>;
using GridPoint = std::vector<std::pair<std::string, std::string>>;

std::vector<GridPoint> expand_grid(const Grid& grid, std::size_t cap);

struct GridResult {
  std::vector<GridPoint> points;
  std::vector<ExperimentResult> results;  // same order as points
  std::size_t best = 0;                   // first point with the top final acc_tgt
};

GridResult grid_search(const DomainPair& data, const TrainConfig& base, const Grid& grid,
                       std::size_t cap = 64, std::size_t workers = 1);

// CSV writers. Numbers use shortest round-trip formatting.
void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& trace);
void write_summary_csv(std::ostream& out, const std::string& task,
                       const ExperimentResult& result, bool header = true);
std::string approach_name(DivergenceKind kind);

}  // namespace wdgrl

#endif  // WDGRL_TRAINING_H_
