#ifndef WDGRL_CONFIG_H_
#define WDGRL_CONFIG_H_

#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdgrl/data.h"
#include "wdgrl/diagnostics.h"
#include "wdgrl/training.h"

namespace wdgrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Where the domains come from: a synthetic generator, or files on disk.
struct DataSpec {
  std::optional<SyntheticKind> synthetic = SyntheticKind::kDistantBlobs;
  std::size_t n_per_domain = 2000;
  double shift = -1.0;  // negative: the kind's default
  std::filesystem::path source, target, target_test;
  DataFormat format = DataFormat::kSparseBow;
  double test_fraction = 0.0;  // held out from the target when no target_test file
  std::string task;            // summary label; derived when empty

  std::string task_name() const;
  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct ExperimentConfig {
  DataSpec data;
  TrainConfig train;
  Projection embeddings = Projection::kPca2;
  bool write_embeddings = true;
  Grid grid;
  std::size_t grid_cap = 64;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Line-oriented "key = value" under [data], [model], [train], [grid].
// '#' starts a comment. Relative paths resolve against base_dir.
ExperimentConfig parse_config(std::istream& in, const std::string& origin,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// "section.key=value", or "key=value" when the key names exactly one
// section. Grid values are comma separated.
void apply_override(ExperimentConfig& cfg, const std::string& assignment,
                    const std::filesystem::path& base_dir = {});

// Every key with its effective value; parse_config of this text gives back cfg.
std::string format_config(const ExperimentConfig& cfg);

DomainPair load_domains(const DataSpec& spec, std::uint64_t seed);

}  // namespace wdgrl

#endif  // WDGRL_CONFIG_H_
