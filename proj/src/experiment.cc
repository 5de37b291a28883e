#include "wdgrl/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace wdgrl {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void check_written(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

const ParamSet& find_net(const NamedParams& nets, const std::string& name) {
  for (const auto& [n, p] : nets) {
    if (n == name) return p;
  }
  throw std::runtime_error("checkpoint has no '" + name + "' network");
}

void write_text(const fs::path& path, const std::string& text, std::vector<fs::path>& files) {
  auto out = open_out(path);
  out << text;
  check_written(out, path);
  files.push_back(path);
}

void write_trace(const fs::path& dir, const ExperimentResult& r, std::vector<fs::path>& files) {
  std::ostringstream s;
  write_trace_csv(s, r.trace);
  write_text(dir / "trace.csv", s.str(), files);
}

// Everything except config.resolved.
void write_run_files(const fs::path& dir, const ExperimentConfig& cfg, const DomainPair& pair,
                     const ExperimentResult& r, std::vector<fs::path>& files) {
  write_trace(dir, r, files);
  std::ostringstream summary;
  write_summary_csv(summary, cfg.data.task_name(), r, true);
  write_text(dir / "summary.csv", summary.str(), files);
  save_checkpoint(dir / "checkpoint.bin", r.params);
  files.push_back(dir / "checkpoint.bin");
  if (cfg.write_embeddings) {
    const auto spec = MlpSpec::feature_extractor(pair.source.dim(), r.config.extractor_hidden);
    std::ostringstream emb;
    write_embeddings_tsv(emb, export_embeddings(spec, find_net(r.params, "extractor"), pair,
                                                cfg.embeddings));
    write_text(dir / "embeddings.tsv", emb.str(), files);
  }
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

RunOutput run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                         std::size_t workers) {
  cfg.train.validate();
  const DomainPair pair = load_domains(cfg.data, cfg.train.seed);
  fs::create_directories(out_dir);

  RunOutput out;
  out.task = cfg.data.task_name();
  write_text(out_dir / "config.resolved", format_config(cfg), out.files);

  if (cfg.grid.empty()) {
    try {
      out.result = train(pair, cfg.train);
    } catch (const TrainingAborted& e) {
      std::vector<fs::path> ignored;
      write_trace(out_dir, e.partial(), ignored);
      throw;
    }
    write_run_files(out_dir, cfg, pair, out.result, out.files);
    return out;
  }

  const GridResult grid = grid_search(pair, cfg.train, cfg.grid, cfg.grid_cap, workers);
  std::ostringstream table;
  table << "index";
  for (const auto& [key, values] : cfg.grid) table << ',' << key;
  table << ",acc_src,acc_tgt,best_acc_tgt\n";
  for (std::size_t i = 0; i < grid.points.size(); ++i) {
    ExperimentConfig point = cfg;
    point.grid.clear();
    for (const auto& [key, value] : grid.points[i]) set_train_key(point.train, key, value);
    const fs::path dir = out_dir / "grid" / std::to_string(i);
    fs::create_directories(dir);
    write_text(dir / "config.resolved", format_config(point), out.files);
    write_run_files(dir, point, pair, grid.results[i], out.files);

    table << i;
    for (const auto& kv : grid.points[i]) table << ',' << kv.second;
    const auto& r = grid.results[i];
    table << ',' << format_double(r.acc_src) << ',' << format_double(r.acc_tgt) << ','
          << format_double(r.best_acc_tgt) << '\n';
  }
  write_text(out_dir / "grid.csv", table.str(), out.files);
  out.result = grid.results[grid.best];
  write_run_files(out_dir, cfg, pair, out.result, out.files);
  return out;
}

void export_run_embeddings(const fs::path& run_dir, Projection projection, std::ostream& out) {
  const ExperimentConfig cfg = load_config(run_dir / "config.resolved");
  const NamedParams nets = load_checkpoint(run_dir / "checkpoint.bin");
  const DomainPair pair = load_domains(cfg.data, cfg.train.seed);
  const ParamSet& extractor = find_net(nets, "extractor");
  const auto spec = MlpSpec::feature_extractor(pair.source.dim(), cfg.train.extractor_hidden);
  if (extractor.num_layers() != spec.num_layers() ||
      extractor.weight(0).rows() != spec.input_dim()) {
    throw std::runtime_error("checkpoint does not match config.resolved in " + run_dir.string());
  }
  write_embeddings_tsv(out, export_embeddings(spec, extractor, pair, projection));
}

std::vector<SummaryRow> read_summaries(const std::vector<fs::path>& paths) {
  static const std::string kHeader = "task,approach,acc_src,acc_tgt,best_acc_tgt,iterations,seed,seconds";
  std::vector<SummaryRow> rows;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
      throw std::runtime_error(path.string() + ": summary schema mismatch");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 8) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": expected 8 columns");
      }
      SummaryRow row{cells[0], cells[1], 0.0};
      try {
        std::size_t used = 0;
        row.acc_tgt = std::stod(cells[3], &used);
        if (used != cells[3].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        if (cells[3] != "nan") {
          throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                   ": bad acc_tgt '" + cells[3] + "'");
        }
        row.acc_tgt = std::nan("");
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string emit_report(const std::vector<SummaryRow>& rows) {
  static const std::vector<std::string> kOrder = {"S-only", "MMD", "DANN", "CORAL", "WDGRL"};
  std::vector<std::string> tasks;
  std::map<std::pair<std::string, std::string>, double> cell;
  std::vector<bool> present(kOrder.size(), false);
  for (const auto& r : rows) {
    const auto it = std::find(kOrder.begin(), kOrder.end(), r.approach);
    if (it == kOrder.end()) throw std::runtime_error("unknown approach '" + r.approach + "'");
    present[it - kOrder.begin()] = true;
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    cell[{r.task, r.approach}] = r.acc_tgt;
  }
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < kOrder.size(); ++i) {
    if (present[i]) cols.push_back(kOrder[i]);
  }

  std::ostringstream out;
  out << "| Task |";
  for (const auto& c : cols) out << ' ' << c << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
  out << '\n';

  // Bolding compares the printed values so visually equal cells tie.
  auto emit_row = [&](const std::string& label, const std::vector<std::optional<double>>& vals) {
    std::vector<std::string> text(vals.size());
    double best = -1.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!vals[i] || std::isnan(*vals[i])) continue;
      text[i] = percent(*vals[i]);
      best = std::max(best, std::stod(text[i]));
    }
    out << "| " << label << " |";
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!vals[i]) out << " - |";
      else if (text[i].empty()) out << " nan |";
      else if (std::stod(text[i]) == best) out << " **" << text[i] << "** |";
      else out << ' ' << text[i] << " |";
    }
    out << '\n';
  };

  std::vector<double> sum(cols.size(), 0.0);
  std::vector<int> count(cols.size(), 0);
  for (const auto& t : tasks) {
    std::vector<std::optional<double>> vals(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto it = cell.find({t, cols[c]});
      if (it == cell.end()) continue;
      vals[c] = it->second;
      sum[c] += it->second;
      ++count[c];
    }
    emit_row(t, vals);
  }
  std::vector<std::optional<double>> avg(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (count[c] > 0) avg[c] = sum[c] / count[c];
  }
  emit_row("AVG", avg);
  return out.str();
}

}  // namespace wdgrl
