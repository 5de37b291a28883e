#ifndef WDGRL_EXPERIMENT_H_
#define WDGRL_EXPERIMENT_H_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "wdgrl/config.h"

namespace wdgrl {

// Output directory layout:
//   config.resolved  effective config; running it again reproduces the run
//   trace.csv        evaluation records
//   summary.csv      one row (header included)
//   checkpoint.bin   trained networks
//   embeddings.tsv   extractor outputs, unless embeddings = off
// A grid run also writes grid.csv and grid/<index>/ with the same files per
// point; the top-level trace, summary, checkpoint and embeddings are the
// selected point's.
struct RunOutput {
  ExperimentResult result;
  std::string task;
  std::vector<std::filesystem::path> files;
};

// Throws TrainingAborted after writing config.resolved and the partial trace.
RunOutput run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                         std::size_t workers = 1);

// Recomputes embeddings from a finished run directory.
void export_run_embeddings(const std::filesystem::path& run_dir, Projection projection,
                           std::ostream& out);

// Reads summary CSVs (as written by run) into one results table.
struct SummaryRow {
  std::string task;
  std::string approach;
  double acc_tgt = 0.0;
};

std::vector<SummaryRow> read_summaries(const std::vector<std::filesystem::path>& paths);

// Markdown table: one row per task in first-seen order, approach columns in
// the fixed order S-only, MMD, DANN, CORAL, WDGRL (absent ones omitted), an
// AVG row, accuracies x100 with two decimals, the row maximum in bold (all
// tied cells). A repeated (task, approach) pair keeps the last value.
std::string emit_report(const std::vector<SummaryRow>& rows);

}  // namespace wdgrl

#endif  // WDGRL_EXPERIMENT_H_
