#include "wdgrl/config.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace wdgrl {

namespace {

const std::vector<std::string> kDataKeys = {"synthetic", "n_per_domain", "shift",        "source",
                                            "target",    "target_test",  "format",       "test_fraction",
                                            "task"};
const std::vector<std::string> kModelKeys = {"extractor_hidden", "classifier_hidden", "critic_hidden",
                                             "domain_hidden",    "embeddings"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> train_section_keys() {
  std::vector<std::string> keys;
  for (const auto& k : train_keys()) {
    if (!contains(kModelKeys, k)) keys.push_back(k);
  }
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
  return out;
}

std::filesystem::path resolve(const std::string& value, const std::filesystem::path& base) {
  if (value.empty()) return {};
  std::filesystem::path p(value);
  if (p.is_relative() && !base.empty()) p = base / p;
  return std::filesystem::absolute(p).lexically_normal();
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty entry in list '" + value + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

void set_data_key(DataSpec& d, const std::string& key, const std::string& value,
                  const std::filesystem::path& base) {
  if (key == "synthetic") {
    if (value == "none") d.synthetic.reset();
    else d.synthetic = parse_synthetic_kind(value);
  } else if (key == "n_per_domain") {
    d.n_per_domain = parse_number<std::size_t>(key, value);
  } else if (key == "shift") {
    d.shift = parse_number<double>(key, value);
  } else if (key == "source") {
    d.source = resolve(value, base);
  } else if (key == "target") {
    d.target = resolve(value, base);
  } else if (key == "target_test") {
    d.target_test = resolve(value, base);
  } else if (key == "format") {
    d.format = parse_format(value);
  } else if (key == "test_fraction") {
    d.test_fraction = parse_number<double>(key, value);
    if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) {
      throw ConfigError("test_fraction must be in [0, 1)");
    }
  } else if (key == "task") {
    d.task = value;
  } else {
    throw ConfigError("unknown key '" + key + "' in [data]");
  }
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value, const std::filesystem::path& base) {
  try {
    if (section == "data") {
      set_data_key(cfg.data, key, value, base);
    } else if (section == "model") {
      if (key == "embeddings") {
        cfg.write_embeddings = value != "off";
        if (cfg.write_embeddings) cfg.embeddings = parse_projection(value);
      } else if (contains(kModelKeys, key)) {
        set_train_key(cfg.train, key, value);
      } else {
        throw ConfigError("unknown key '" + key + "' in [model]");
      }
    } else if (section == "train") {
      if (!contains(train_section_keys(), key)) {
        throw ConfigError("unknown key '" + key + "' in [train]");
      }
      set_train_key(cfg.train, key, value);
    } else if (section == "grid") {
      if (key == "cap") {
        cfg.grid_cap = parse_number<std::size_t>(key, value);
        return;
      }
      if (!contains(train_keys(), key)) throw ConfigError("unknown grid key '" + key + "'");
      auto values = split_list(value);
      // Validate each candidate up front.
      for (const auto& v : values) {
        TrainConfig probe = cfg.train;
        set_train_key(probe, key, v);
      }
      auto it = std::find_if(cfg.grid.begin(), cfg.grid.end(),
                             [&](const auto& kv) { return kv.first == key; });
      if (it != cfg.grid.end()) it->second = std::move(values);
      else cfg.grid.emplace_back(key, std::move(values));
    } else {
      throw ConfigError("unknown section [" + section + "]");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string join_widths(const std::vector<std::size_t>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "x" : "") + std::to_string(w[i]);
  return s;
}

}  // namespace

std::string DataSpec::task_name() const {
  if (!task.empty()) return task;
  if (synthetic) return to_string(*synthetic);
  return source.stem().string() + "->" + target.stem().string();
}

ExperimentConfig parse_config(std::istream& in, const std::string& origin,
                              const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  std::string section;
  std::vector<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" && section != "grid") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qualified = section + "." + key;
    if (contains(seen, qualified)) throw ConfigError(where + "duplicate key " + qualified);
    seen.push_back(qualified);
    try {
      set_key(cfg, section, key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string(), std::filesystem::absolute(path).parent_path());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment,
                    const std::filesystem::path& base_dir) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' needs key=value");
  std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  std::string section;
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    key = key.substr(dot + 1);
  } else {
    std::vector<std::string> owners;
    if (contains(kDataKeys, key)) owners.push_back("data");
    if (contains(kModelKeys, key)) owners.push_back("model");
    if (contains(train_section_keys(), key)) owners.push_back("train");
    if (owners.empty()) throw ConfigError("override: unknown key '" + key + "'");
    if (owners.size() > 1) throw ConfigError("override: key '" + key + "' is ambiguous");
    section = owners.front();
  }
  try {
    set_key(cfg, section, key, value, base_dir.empty() ? std::filesystem::current_path() : base_dir);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("override: ") + e.what());
  }
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const DataSpec& d = cfg.data;
  out << "[data]\n";
  out << "synthetic = " << (d.synthetic ? to_string(*d.synthetic) : "none") << '\n';
  out << "n_per_domain = " << d.n_per_domain << '\n';
  out << "shift = " << format_double(d.shift) << '\n';
  if (!d.source.empty()) out << "source = " << d.source.string() << '\n';
  if (!d.target.empty()) out << "target = " << d.target.string() << '\n';
  if (!d.target_test.empty()) out << "target_test = " << d.target_test.string() << '\n';
  out << "format = " << to_string(d.format) << '\n';
  out << "test_fraction = " << format_double(d.test_fraction) << '\n';
  if (!d.task.empty()) out << "task = " << d.task << '\n';

  out << "\n[model]\n";
  out << "extractor_hidden = " << join_widths(cfg.train.extractor_hidden) << '\n';
  out << "classifier_hidden = " << join_widths(cfg.train.classifier_hidden) << '\n';
  out << "critic_hidden = " << cfg.train.critic_hidden << '\n';
  out << "domain_hidden = " << cfg.train.domain_hidden << '\n';
  out << "embeddings = "
      << (!cfg.write_embeddings ? "off" : cfg.embeddings == Projection::kPca2 ? "pca2" : "none")
      << '\n';

  out << "\n[train]\n";
  for (const auto& key : train_section_keys()) {
    out << key << " = " << get_train_key(cfg.train, key) << '\n';
  }
  if (!cfg.grid.empty()) {
    out << "\n[grid]\n";
    out << "cap = " << cfg.grid_cap << '\n';
    for (const auto& [key, values] : cfg.grid) {
      out << key << " = ";
      for (std::size_t i = 0; i < values.size(); ++i) out << (i ? ", " : "") << values[i];
      out << '\n';
    }
  }
  return out.str();
}

DomainPair load_domains(const DataSpec& spec, std::uint64_t seed) {
  DomainPair pair;
  if (spec.synthetic) {
    if (!spec.source.empty() || !spec.target.empty()) {
      throw ConfigError("data: set synthetic = none to read source/target files");
    }
    pair = make_synthetic(*spec.synthetic, spec.n_per_domain, spec.shift, seed);
  } else {
    if (spec.source.empty() || spec.target.empty()) {
      throw ConfigError("data: source and target paths are required");
    }
    pair.source = load_dataset(spec.source, spec.format, "source");
    pair.target = load_dataset(spec.target, spec.format, "target");
    if (!spec.target_test.empty()) {
      pair.target_test = load_dataset(spec.target_test, spec.format, "target_test");
    }
  }
  if (spec.test_fraction > 0.0) {
    if (pair.target_test) throw ConfigError("data: test_fraction conflicts with target_test");
    Split s = split_dataset(pair.target, spec.test_fraction, seed);
    pair.target = std::move(s.train);
    pair.target_test = std::move(s.test);
    pair.target_test->domain = "target_test";
  }
  pair.validate();
  return pair;
}

}  // namespace wdgrl
