#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "wdgrl/experiment.h"

using namespace wdgrl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg", "/base");
}

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wdgrl_config_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig tiny(DivergenceKind kind) {
  ExperimentConfig cfg;
  cfg.data.n_per_domain = 64;
  cfg.train.divergence = kind;
  cfg.train.extractor_hidden = {4};
  cfg.train.critic_hidden = 4;
  cfg.train.domain_hidden = 4;
  cfg.train.batch_size = 16;
  cfg.train.iterations = 12;
  cfg.train.eval_every = 4;
  return cfg;
}

struct Cli {
  int status;
  std::string out, err;
};

Cli cli(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + WDGRL_CLI_PATH + "\" " + args + " > \"" + o.string() +
                          "\" 2> \"" + e.string() + "\"";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(o), slurp(e)};
}

}  // namespace

TEST_CASE("config: defaults, sections and comments") {
  const ExperimentConfig cfg = parse(
      "# comment\n[train]\nlambda = 0.5   # trailing\ndivergence = dann\n\n[model]\n"
      "extractor_hidden = 32x16\n[data]\nsynthetic = overlapping-blobs\nn_per_domain = 100\n");
  CHECK(cfg.train.lambda == 0.5);
  CHECK(cfg.train.divergence == DivergenceKind::kDann);
  CHECK(cfg.train.extractor_hidden == std::vector<std::size_t>{32, 16});
  CHECK(cfg.data.synthetic == SyntheticKind::kOverlappingBlobs);
  CHECK(cfg.data.n_per_domain == 100);
  CHECK(cfg.train.gamma == 10.0);
  CHECK(cfg.train.critic_steps == 5);
  CHECK(cfg.grid.empty());
}

TEST_CASE("config: order inside a section does not matter") {
  CHECK(parse("[train]\nlambda = 2\ngamma = 3\n") == parse("[train]\ngamma = 3\nlambda = 2\n"));
}

TEST_CASE("config: errors name the file and line") {
  CHECK(config_error("[train]\nbogus = 1\n") == "test.cfg:2: unknown key 'bogus' in [train]");
  CHECK(config_error("[train]\nextractor_hidden = 5\n") == "test.cfg:2: unknown key 'extractor_hidden' in [train]");
  CHECK(config_error("[nope]\n") == "test.cfg:1: unknown section [nope]");
  CHECK(config_error("lambda = 1\n") == "test.cfg:1: key outside of a section");
  CHECK(config_error("[train]\nlambda\n") == "test.cfg:2: expected 'key = value'");
  CHECK(config_error("[train]\nlambda = 1\nlambda = 2\n") == "test.cfg:3: duplicate key train.lambda");
  CHECK(config_error("[train]\nbatch_size = 6x\n").rfind("test.cfg:2: ", 0) == 0);
  CHECK(config_error("[data]\ntest_fraction = 1\n").rfind("test.cfg:2: ", 0) == 0);
  CHECK(config_error("[grid]\nlambda = 1,,2\n").rfind("test.cfg:2: ", 0) == 0);
  CHECK(config_error("[grid]\nlambda = 1, x\n").rfind("test.cfg:2: ", 0) == 0);
}

TEST_CASE("config: overrides") {
  ExperimentConfig cfg;
  apply_override(cfg, "train.lambda=0.25");
  apply_override(cfg, "divergence=coral");
  apply_override(cfg, "extractor_hidden=8x8");
  apply_override(cfg, "grid.lambda=0,1");
  CHECK(cfg.train.lambda == 0.25);
  CHECK(cfg.train.divergence == DivergenceKind::kCoral);
  CHECK(cfg.train.extractor_hidden == std::vector<std::size_t>{8, 8});
  REQUIRE(cfg.grid.size() == 1);
  CHECK(cfg.grid[0].second == std::vector<std::string>{"0", "1"});
  CHECK_THROWS_AS(apply_override(cfg, "nokey=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "lambda"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.lambda=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "model.lambda=1"), ConfigError);
}

TEST_CASE("config: relative paths resolve against the config directory") {
  const ExperimentConfig cfg = parse("[data]\nsynthetic = none\nsource = a/s.svm\ntarget = /abs/t.svm\n");
  CHECK(cfg.data.source == fs::path("/base/a/s.svm"));
  CHECK(cfg.data.target == fs::path("/abs/t.svm"));
  CHECK(cfg.data.task_name() == "s->t");
}

TEST_CASE("config: format_config round trip") {
  ExperimentConfig cfg;
  apply_override(cfg, "lambda=0.1");
  apply_override(cfg, "lr=3e-4");
  apply_override(cfg, "classifier_hidden=none");
  apply_override(cfg, "embeddings=off");
  apply_override(cfg, "grid.gamma=1,10");
  apply_override(cfg, "grid.cap=8");
  apply_override(cfg, "task=blobs");
  CHECK(parse(format_config(cfg)) == cfg);
  ExperimentConfig files;
  apply_override(files, "synthetic=none");
  apply_override(files, "source=/d/s.csv");
  apply_override(files, "target=/d/t.csv");
  apply_override(files, "format=dense-csv");
  apply_override(files, "test_fraction=0.2");
  CHECK(parse(format_config(files)) == files);
}

TEST_CASE("report: layout, ties and AVG") {
  const std::vector<SummaryRow> one = {{"B->D", "WDGRL", 0.8305}};
  CHECK(emit_report(one) ==
        "| Task | WDGRL |\n|---|---|\n| B->D | **83.05** |\n| AVG | **83.05** |\n");

  const std::vector<SummaryRow> rows = {
      {"t1", "WDGRL", 0.9}, {"t1", "S-only", 0.5}, {"t1", "DANN", 0.9},
      {"t2", "CORAL", 0.7}, {"t2", "MMD", 0.6},    {"t2", "WDGRL", 0.65}};
  const std::string table = emit_report(rows);
  std::istringstream in(table);
  std::string header, rule, r1, r2, avg;
  std::getline(in, header);
  std::getline(in, rule);
  std::getline(in, r1);
  std::getline(in, r2);
  std::getline(in, avg);
  CHECK(header == "| Task | S-only | MMD | DANN | CORAL | WDGRL |");
  CHECK(r1 == "| t1 | 50.00 | - | **90.00** | - | **90.00** |");
  CHECK(r2 == "| t2 | - | 60.00 | - | **70.00** | 65.00 |");
  CHECK(avg == "| AVG | 50.00 | 60.00 | **90.00** | 70.00 | 77.50 |");
  CHECK_THROWS(emit_report({{"t", "Other", 0.5}}));
}

TEST_CASE("report: summary schema is checked") {
  const fs::path dir = scratch("schema");
  std::ofstream(dir / "bad.csv") << "task,approach\nx,WDGRL\n";
  CHECK_THROWS(read_summaries({dir / "bad.csv"}));
  std::ofstream(dir / "good.csv") << "task,approach,acc_src,acc_tgt,best_acc_tgt,iterations,seed,seconds\n"
                                  << "x,MMD,1,0.75,0.8,10,1,0.5\n";
  const auto rows = read_summaries({dir / "good.csv"});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].approach == "MMD");
  CHECK(rows[0].acc_tgt == 0.75);
}

TEST_CASE("run_experiment writes the documented layout") {
  const fs::path dir = scratch("layout");
  const ExperimentConfig cfg = tiny(DivergenceKind::kWasserstein);
  const RunOutput out = run_experiment(cfg, dir);
  for (const char* f : {"config.resolved", "trace.csv", "summary.csv", "checkpoint.bin", "embeddings.tsv"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(load_config(dir / "config.resolved") == cfg);
  const NamedParams nets = load_checkpoint(dir / "checkpoint.bin");
  CHECK(nets == out.result.params);
  std::ostringstream emb;
  export_run_embeddings(dir, Projection::kPca2, emb);
  CHECK(emb.str() == slurp(dir / "embeddings.tsv"));
  CHECK(slurp(dir / "summary.csv").rfind("task,approach,", 0) == 0);
}

TEST_CASE("run_experiment with a grid") {
  const fs::path dir = scratch("grid");
  ExperimentConfig cfg = tiny(DivergenceKind::kMmd);
  apply_override(cfg, "grid.lambda=0,1");
  const RunOutput out = run_experiment(cfg, dir, 2);
  CHECK(fs::exists(dir / "grid.csv"));
  CHECK(fs::exists(dir / "grid" / "0" / "trace.csv"));
  CHECK(fs::exists(dir / "grid" / "1" / "trace.csv"));
  CHECK(load_config(dir / "config.resolved") == cfg);
  const ExperimentConfig point = load_config(dir / "grid" / "1" / "config.resolved");
  CHECK(point.grid.empty());
  CHECK(point.train.lambda == 1.0);
  const std::string grid = slurp(dir / "grid.csv");
  CHECK(grid.rfind("index,lambda,acc_src,acc_tgt,best_acc_tgt\n0,0,", 0) == 0);
}

TEST_CASE("cli: run, report and errors") {
  const fs::path dir = scratch("cli");
  {
    std::ofstream cfg(dir / "id.cfg");
    cfg << "[data]\nsynthetic = identical\nn_per_domain = 400\n[model]\nextractor_hidden = 8\n"
        << "[train]\ndivergence = none\niterations = 300\neval_every = 100\nlr = 1e-2\n";
  }
  const Cli ok = cli("run --config \"" + (dir / "id.cfg").string() + "\" --out \"" + (dir / "out").string() + "\"", dir);
  REQUIRE(ok.status == 0);
  CHECK(ok.out.rfind("task,approach,acc_src,acc_tgt", 0) == 0);
  std::istringstream rows(ok.out);
  std::string line;
  std::getline(rows, line);
  std::getline(rows, line);
  CHECK(line.rfind("identical,S-only,", 0) == 0);
  const auto summary = read_summaries({dir / "out" / "summary.csv"});
  REQUIRE(summary.size() == 1);
  CHECK(fs::exists(dir / "out" / "embeddings.tsv"));

  const Cli rep = cli("report \"" + (dir / "out" / "summary.csv").string() + "\"", dir);
  CHECK(rep.status == 0);
  CHECK(rep.out.find("| identical | **") != std::string::npos);

  const Cli bad_key = cli("run --config \"" + (dir / "id.cfg").string() + "\" --set nokey=1", dir);
  CHECK(bad_key.status == 2);
  CHECK(bad_key.err == "error: config: override: unknown key 'nokey'\n");

  const Cli missing = cli("run --set synthetic=none --set source=/nonexistent/s.svm --set target=/nonexistent/t.svm --out \"" +
                              (dir / "missing").string() + "\"",
                          dir);
  CHECK(missing.status == 1);
  CHECK(missing.err.rfind("error: data: ", 0) == 0);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);

  const Cli abort = cli("run --config \"" + (dir / "id.cfg").string() + "\" --set lr=1e200 --out \"" +
                            (dir / "abort").string() + "\"",
                        dir);
  CHECK(abort.status == 3);
  CHECK(abort.err.rfind("error: numeric: ", 0) == 0);
  CHECK(fs::exists(dir / "abort" / "trace.csv"));
  CHECK_FALSE(fs::exists(dir / "abort" / "summary.csv"));

  const Cli usage = cli("run --workers 0", dir);
  CHECK(usage.status == 2);
  CHECK(usage.err.rfind("error: usage: ", 0) == 0);
}

TEST_CASE("cli: gen-data output loads back") {
  const fs::path dir = scratch("gen");
  const Cli r = cli("gen-data --kind overlapping-blobs --n 50 --seed 3 --out \"" + dir.string() + "\"", dir);
  REQUIRE(r.status == 0);
  const LabeledSet s = load_dataset(dir / "source.csv", DataFormat::kDenseCsv);
  const DomainPair ref = make_synthetic(SyntheticKind::kOverlappingBlobs, 50, -1.0, 3);
  CHECK(s.features == ref.source.features);
  CHECK(s.labels == ref.source.labels);
}
