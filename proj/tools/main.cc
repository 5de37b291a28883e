// wdgrl: run experiments, generate synthetic data, verify, report.
//
// Errors go to stderr as one line, "error: <category>: <message>", with exit
// status 2 for usage/config problems, 1 for data or I/O failures and 3 for a
// numeric training abort.
#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include "suites.h"
#include "wdgrl/experiment.h"

namespace fs = std::filesystem;
using namespace wdgrl;

namespace {

struct Failure {
  int code;
  std::string category;
  std::string message;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

fs::path default_out_dir() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = fs::path("runs") / buf;
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path("runs") / (std::string(buf) + "-" + std::to_string(k));
  return dir;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets,
            const std::optional<std::uint64_t>& seed, const std::string& out, std::size_t workers) {
  ExperimentConfig cfg;
  try {
    cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.train.seed = *seed;
    for (const auto& s : sets) apply_override(cfg, s);
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw Failure{2, "config", e.what()};
  }
  const fs::path dir = out.empty() ? default_out_dir() : fs::path(out);
  RunOutput result;
  try {
    result = run_experiment(cfg, dir, workers);
  } catch (const TrainingAborted& e) {
    throw Failure{3, "numeric", std::string(e.what()) + " (partial trace in " + dir.string() + ")"};
  } catch (const ConfigError& e) {
    throw Failure{2, "config", e.what()};
  } catch (const std::invalid_argument& e) {
    throw Failure{2, "config", e.what()};
  } catch (const DataError& e) {
    throw Failure{1, "data", e.what()};
  }
  write_summary_csv(std::cout, result.task, result.result, true);
  std::cerr << "wrote " << dir.string() << '\n';
  return 0;
}

int cmd_gen_data(const std::string& kind, std::size_t n, double shift, std::uint64_t seed,
                 const std::string& out, const std::string& format) {
  SyntheticKind k;
  DataFormat f;
  try {
    k = parse_synthetic_kind(kind);
    f = parse_format(format);
  } catch (const std::exception& e) {
    throw Failure{2, "usage", e.what()};
  }
  const DomainPair pair = make_synthetic(k, n, shift, seed);
  const fs::path dir(out);
  fs::create_directories(dir);
  const std::string ext = f == DataFormat::kDenseCsv ? ".csv" : ".svm";
  save_dataset(pair.source, dir / ("source" + ext), f);
  save_dataset(pair.target, dir / ("target" + ext), f);
  std::cout << (dir / ("source" + ext)).string() << '\n' << (dir / ("target" + ext)).string() << '\n';
  return 0;
}

int cmd_verify(const std::vector<int>& ids, bool all, const std::string& scratch, bool quiet,
               const char* argv0) {
  std::vector<int> selected = ids;
  if (selected.empty() && !all) {
    for (const auto& s : suites::all()) {
      if (!s.slow) selected.push_back(s.id);
    }
  }
  suites::Options opts;
  std::error_code ec;
  opts.cli = fs::read_symlink("/proc/self/exe", ec);
  if (ec) opts.cli = fs::absolute(argv0);
  opts.scratch = fs::absolute(scratch);
  if (!quiet) opts.log = &std::cout;
  return suites::run(selected, opts, std::cout) == 0 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  std::string table;
  try {
    table = emit_report(read_summaries(paths));
  } catch (const std::exception& e) {
    throw Failure{1, "report", e.what()};
  }
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(out);
    f << table;
    if (!f) throw Failure{1, "io", "cannot write " + out};
  }
  return 0;
}

int cmd_export(const std::string& run_dir, const std::string& projection, const std::string& out) {
  Projection p;
  try {
    p = parse_projection(projection);
  } catch (const std::exception& e) {
    throw Failure{2, "usage", e.what()};
  }
  if (out.empty()) {
    export_run_embeddings(run_dir, p, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw Failure{1, "io", "cannot write " + out};
    export_run_embeddings(run_dir, p, f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein distance guided representation learning"};
  app.require_subcommand(1);

  std::string config, out, scratch = "verify_scratch", kind = "distant-blobs", format = "dense-csv",
                           projection = "pca2";
  std::vector<std::string> sets, inputs;
  std::size_t workers = 1, n = 2000;
  std::uint64_t seed_value = 1;
  double shift = -1.0;
  std::vector<int> ids;
  bool all = false, quiet = false;

  auto* run = app.add_subcommand("run", "train one configuration or a grid");
  run->add_option("--config", config, "config file")->check(CLI::ExistingFile);
  run->add_option("--set", sets, "override, section.key=value or key=value (repeatable)");
  auto* seed_opt = run->add_option("--seed", seed_value, "seed for every random stream");
  run->add_option("--out", out, "output directory (default runs/<UTC timestamp>)");
  run->add_option("--workers", workers, "parallel grid points")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic domain pair");
  gen->add_option("--kind", kind, "distant-blobs, overlapping-blobs or identical");
  gen->add_option("--n", n, "rows per domain")->check(CLI::PositiveNumber);
  gen->add_option("--shift", shift, "target translation (negative: kind default)");
  gen->add_option("--seed", seed_value, "seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--format", format, "dense-csv or sparse-bow");

  auto* verify = app.add_subcommand("verify", "gradient, oracle and reproduction suites");
  verify->add_option("--only", ids, "criterion ids")->delimiter(',');
  verify->add_flag("--all", all, "include the slow training suites");
  verify->add_option("--out", scratch, "scratch directory");
  verify->add_flag("--quiet", quiet, "only the PASS/FAIL lines");

  auto* report = app.add_subcommand("report", "markdown table from summary CSVs");
  report->add_option("summaries", inputs, "summary.csv files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "write the table here instead of stdout");

  auto* exp = app.add_subcommand("export-embeddings", "embeddings TSV from a run directory");
  std::string run_dir;
  exp->add_option("run_dir", run_dir, "directory written by run")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--projection", projection, "none or pca2");
  exp->add_option("--out", out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*run) {
      std::optional<std::uint64_t> seed;
      if (*seed_opt) seed = seed_value;
      return cmd_run(config, sets, seed, out, workers);
    }
    if (*gen) return cmd_gen_data(kind, n, shift, seed_value, out, format);
    if (*verify) return cmd_verify(ids, all, scratch, quiet, argv[0]);
    if (*report) return cmd_report(inputs, out);
    if (*exp) return cmd_export(run_dir, projection, out);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.category << ": " << one_line(f.message) << '\n';
    return f.code;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << one_line(e.what()) << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: io: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}
