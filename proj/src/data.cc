#include "wdgrl/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wdgrl {

bool LabeledSet::labeled() const {
  return labels.size() == size() &&
         std::all_of(labels.begin(), labels.end(), [](int y) { return y >= 0; });
}

int LabeledSet::num_classes() const {
  int top = -1;
  for (int y : labels) top = std::max(top, y);
  return top + 1;
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> rows) const {
  LabeledSet out;
  out.domain = domain;
  out.features = rows.empty() ? Tensor({0, dim()}) : gather_rows(features, rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  return out;
}

std::size_t DomainPair::num_classes() const {
  int k = source.num_classes();
  k = std::max(k, target.num_classes());
  if (target_test) k = std::max(k, target_test->num_classes());
  return static_cast<std::size_t>(std::max(k, 2));
}

void DomainPair::validate() const {
  if (source.size() == 0) throw DataError("source domain is empty");
  if (target.size() == 0) throw DataError("target domain is empty");
  if (!source.labeled()) throw DataError("source domain has unlabeled rows");
  if (source.dim() != target.dim()) {
    throw DataError("feature dims differ: source " + std::to_string(source.dim()) +
                    ", target " + std::to_string(target.dim()));
  }
  if (target_test && target_test->size() > 0 && target_test->dim() != source.dim()) {
    throw DataError("target test split has dim " + std::to_string(target_test->dim()) +
                    ", expected " + std::to_string(source.dim()));
  }
}

DataFormat parse_format(const std::string& name) {
  if (name == "sparse-bow" || name == "sparse") return DataFormat::kSparseBow;
  if (name == "dense-csv" || name == "csv") return DataFormat::kDenseCsv;
  throw std::invalid_argument("unknown data format '" + name + "'");
}

std::string to_string(DataFormat f) {
  return f == DataFormat::kSparseBow ? "sparse-bow" : "dense-csv";
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

int parse_label(std::string_view tok, const std::filesystem::path& path, std::size_t line) {
  int y = 0;
  if (!parse_number(trim(tok), y) || y < -1) {
    throw DataError(where(path, line) + "bad label '" + std::string(tok) + "'");
  }
  return y;
}

std::filesystem::path dim_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".dim");
}

LabeledSet load_sparse(const std::filesystem::path& path) {
  std::ifstream dim_in(dim_path(path));
  if (!dim_in) throw DataError("missing dimension file " + dim_path(path).string());
  std::string dim_text;
  std::getline(dim_in, dim_text);
  std::size_t dim = 0;
  if (!parse_number(trim(dim_text), dim) || dim == 0) {
    throw DataError(dim_path(path).string() + ": bad dimension '" + dim_text + "'");
  }

  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::vector<int> labels;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto tokens = split_ws(text);
    if (tokens.empty()) continue;
    labels.push_back(parse_label(tokens[0], path, line));
    const std::size_t base = values.size();
    values.resize(base + dim, 0.0);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const std::size_t colon = tokens[i].find(':');
      std::size_t idx = 0;
      double v = 0.0;
      if (colon == std::string_view::npos || !parse_number(tokens[i].substr(0, colon), idx) ||
          !parse_number(tokens[i].substr(colon + 1), v)) {
        throw DataError(where(path, line) + "malformed entry '" + std::string(tokens[i]) +
                        "'");
      }
      if (idx >= dim) {
        throw DataError(where(path, line) + "index " + std::to_string(idx) +
                        " exceeds dimension " + std::to_string(dim));
      }
      if (!std::isfinite(v)) throw DataError(where(path, line) + "non-finite value");
      values[base + idx] = v;
    }
  }
  LabeledSet set;
  set.features = Tensor({labels.size(), dim}, std::move(values));
  set.labels = std::move(labels);
  return set;
}

LabeledSet load_dense(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  std::size_t columns = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    const auto header = split_on(trim(text), ',');
    if (trim(header[0]) != "label") {
      throw DataError(where(path, line) + "header must start with 'label'");
    }
    columns = header.size();
    break;
  }
  if (columns < 2) throw DataError(path.string() + ": header has no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, text)) {
    ++line;
    const std::string_view row = trim(text);
    if (row.empty()) continue;
    const auto cells = split_on(row, ',');
    if (cells.size() != columns) {
      throw DataError(where(path, line) + "expected " + std::to_string(columns) +
                      " columns, found " + std::to_string(cells.size()));
    }
    labels.push_back(parse_label(cells[0], path, line));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_number(trim(cells[c]), v) || !std::isfinite(v)) {
        throw DataError(where(path, line) + "bad value '" + std::string(cells[c]) +
                        "' in column " + std::to_string(c));
      }
      values.push_back(v);
    }
  }
  LabeledSet set;
  set.features = Tensor({labels.size(), columns - 1}, std::move(values));
  set.labels = std::move(labels);
  return set;
}

}  // namespace

LabeledSet load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::string& domain) {
  LabeledSet set =
      format == DataFormat::kSparseBow ? load_sparse(path) : load_dense(path);
  set.domain = domain;
  return set;
}

void save_dataset(const LabeledSet& set, const std::filesystem::path& path,
                  DataFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t n = set.size(), d = set.dim();
  if (format == DataFormat::kSparseBow) {
    for (std::size_t i = 0; i < n; ++i) {
      out << set.labels.at(i);
      for (std::size_t k = 0; k < d; ++k) {
        const double v = set.features.at(i, k);
        // Negative zero is written so it survives the round trip.
        if (v != 0.0 || std::signbit(v)) out << ' ' << k << ':' << format_double(v);
      }
      out << '\n';
    }
    std::ofstream dim_out(dim_path(path));
    dim_out << d << '\n';
    if (!dim_out) throw DataError("cannot write " + dim_path(path).string());
  } else {
    out << "label";
    for (std::size_t k = 0; k < d; ++k) out << ",f" << k;
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      out << set.labels.at(i);
      for (std::size_t k = 0; k < d; ++k) out << ',' << format_double(set.features.at(i, k));
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Split split_dataset(const LabeledSet& set, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw std::invalid_argument("split fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(set.size())));
  const std::span<const std::size_t> all(order);
  return {set.subset(all.subspan(n_test)), set.subset(all.first(n_test))};
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "distant-blobs") return SyntheticKind::kDistantBlobs;
  if (name == "overlapping-blobs") return SyntheticKind::kOverlappingBlobs;
  if (name == "identical") return SyntheticKind::kIdentical;
  throw std::invalid_argument("unknown synthetic kind '" + name + "'");
}

std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::kDistantBlobs: return "distant-blobs";
    case SyntheticKind::kOverlappingBlobs: return "overlapping-blobs";
    case SyntheticKind::kIdentical: return "identical";
  }
  return "?";
}

double default_shift(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::kDistantBlobs: return 10.0;
    case SyntheticKind::kOverlappingBlobs: return 1.0;
    case SyntheticKind::kIdentical: return 0.0;
  }
  return 0.0;
}

namespace {

LabeledSet blobs(std::size_t n, double shift, const std::string& domain, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.5);  // variance 0.25
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  std::shuffle(labels.begin(), labels.end(), rng);
  LabeledSet set;
  set.domain = domain;
  set.features = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    set.features.at(i, 0) = shift + noise(rng);
    set.features.at(i, 1) = 2.0 * labels[i] + noise(rng);
  }
  set.labels = std::move(labels);
  return set;
}

}  // namespace

DomainPair make_synthetic(SyntheticKind kind, std::size_t n_per_domain, double shift,
                          std::uint64_t seed) {
  if (n_per_domain < 4) throw std::invalid_argument("make_synthetic: n must be >= 4");
  if (shift < 0) shift = default_shift(kind);
  Rng source_rng = make_rng(seed, "synthetic.source");
  Rng target_rng = make_rng(seed, "synthetic.target");
  DomainPair pair;
  pair.source = blobs(n_per_domain, 0.0, "source", source_rng);
  pair.target = blobs(n_per_domain, shift, "target", target_rng);
  return pair;
}

BatchSampler::BatchSampler(std::size_t n_source, std::size_t n_target, std::size_t half,
                           std::uint64_t seed)
    : half_(half), rng_(make_rng(seed, "batching")) {
  if (half == 0) throw std::invalid_argument("BatchSampler: half-batch must be >= 1");
  if (half > n_source || half > n_target) {
    throw std::invalid_argument("BatchSampler: half-batch " + std::to_string(half) +
                                " exceeds domain size (source " + std::to_string(n_source) +
                                ", target " + std::to_string(n_target) + ")");
  }
  for (auto [stream, n] : {std::pair{&source_, n_source}, std::pair{&target_, n_target}}) {
    stream->order.resize(n);
    std::iota(stream->order.begin(), stream->order.end(), 0);
    std::shuffle(stream->order.begin(), stream->order.end(), rng_);
  }
}

std::vector<std::size_t> BatchSampler::take(Stream& s) {
  if (s.pos + half_ > s.order.size()) {
    std::shuffle(s.order.begin(), s.order.end(), rng_);
    s.pos = 0;
  }
  std::vector<std::size_t> out(s.order.begin() + static_cast<std::ptrdiff_t>(s.pos),
                               s.order.begin() + static_cast<std::ptrdiff_t>(s.pos + half_));
  s.pos += half_;
  return out;
}

BatchSampler::Indices BatchSampler::next_indices() {
  Indices idx;
  idx.source = take(source_);
  idx.target = take(target_);
  return idx;
}

Batch BatchSampler::next(const DomainPair& pair) {
  const Indices idx = next_indices();
  Batch b;
  b.x_source = gather_rows(pair.source.features, idx.source);
  b.x_target = gather_rows(pair.target.features, idx.target);
  b.y_source.reserve(idx.source.size());
  for (std::size_t i : idx.source) b.y_source.push_back(pair.source.labels[i]);
  return b;
}

}  // namespace wdgrl
