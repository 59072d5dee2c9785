#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "dro/data.hpp"
#include "dro/error.hpp"

namespace dro::data {
namespace {

constexpr std::string_view kVocabMagic = "# dro-vocabulary";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

bool needs_quotes(std::string_view field) {
  return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view field) {
  if (!needs_quotes(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

// RFC 4180 record splitter.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
      records.push_back(std::move(record));
      record.clear();
      ++line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted CSV field near line " + std::to_string(line));
  if (field_started || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

double parse_binary_cell(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell == "0") return 0.0;
  if (cell == "1") return 1.0;
  throw DataError("row " + std::to_string(row) + ", column '" + column + "': value '" + cell +
                  "' is not binary");
}

} // namespace

std::string fingerprint(const std::vector<std::string>& entries) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& e : entries) {
    for (unsigned char c : e) feed(c);
    feed('\n');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

IntentVocabulary::IntentVocabulary(std::vector<std::string> entries, std::string version)
    : entries_(std::move(entries)), version_(std::move(version)) {
  std::sort(entries_.begin(), entries_.end());
  entries_.erase(std::unique(entries_.begin(), entries_.end()), entries_.end());
  fingerprint_ = data::fingerprint(entries_);
}

std::optional<std::size_t> IntentVocabulary::index_of(std::string_view entry) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), entry);
  if (it == entries_.end() || *it != entry) return std::nullopt;
  return static_cast<std::size_t>(it - entries_.begin());
}

IntentVocabulary build_vocabulary(const std::vector<std::set<std::string>>& corpora) {
  std::set<std::string> all;
  for (const auto& s : corpora) all.insert(s.begin(), s.end());
  return IntentVocabulary({all.begin(), all.end()});
}

void save_vocabulary(const std::filesystem::path& path, const IntentVocabulary& vocab) {
  std::string text = std::string(kVocabMagic) + " " + vocab.version() +
                     " fingerprint=" + vocab.fingerprint() + " size=" + std::to_string(vocab.size()) + "\n";
  for (const auto& e : vocab.entries()) {
    if (e.find('\n') != std::string::npos) throw DataError("vocabulary entry contains a newline");
    text += e;
    text += '\n';
  }
  write_file(path, text);
}

IntentVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string header;
  if (!std::getline(in, header) || header.rfind(kVocabMagic, 0) != 0)
    throw DataError(path.string() + ": missing vocabulary header");
  std::istringstream hs(header.substr(kVocabMagic.size()));
  std::string version, fp_field;
  hs >> version >> fp_field;
  const std::string fp_prefix = "fingerprint=";
  if (fp_field.rfind(fp_prefix, 0) != 0) throw DataError(path.string() + ": header lacks fingerprint");
  std::vector<std::string> entries;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) entries.push_back(line);
  }
  if (!std::is_sorted(entries.begin(), entries.end()))
    throw DataError(path.string() + ": vocabulary entries are not sorted");
  IntentVocabulary vocab(entries, version);
  if (vocab.size() != entries.size()) throw DataError(path.string() + ": duplicate vocabulary entries");
  if (vocab.fingerprint() != fp_field.substr(fp_prefix.size()))
    throw DataError(path.string() + ": fingerprint mismatch (file says " +
                    fp_field.substr(fp_prefix.size()) + ", entries hash to " + vocab.fingerprint() + ")");
  return vocab;
}

Vectorized vectorize(const std::set<std::string>& intents, const IntentVocabulary& vocab) {
  Vectorized out{std::vector<double>(vocab.size(), 0.0), 0};
  for (const auto& s : intents) {
    if (auto idx = vocab.index_of(s))
      out.features[*idx] = 1.0;
    else
      ++out.oov_count;
  }
  return out;
}

const std::vector<int>& Dataset::require_labels() const {
  if (!labels) throw DataError("dataset has no label column");
  return *labels;
}

void Dataset::validate() const {
  if (ids.size() != features.rows()) throw DataError("id count does not match feature rows");
  if (columns.size() != features.cols()) throw DataError("column names do not match feature width");
  if (labels && labels->size() != features.rows()) throw DataError("label count does not match rows");
  std::unordered_set<std::string> seen;
  for (const auto& c : columns) {
    if (!seen.insert(c).second) throw DataError("duplicate column '" + c + "'");
    if (c == "id" || c == "label") throw DataError("column name '" + c + "' is reserved");
  }
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (std::size_t c = 0; c < features.cols(); ++c) {
      const double v = features(r, c);
      if (v != 0.0 && v != 1.0)
        throw DataError("row " + std::to_string(r) + ", column '" + columns[c] + "' is not binary");
    }
  if (labels)
    for (std::size_t r = 0; r < labels->size(); ++r)
      if ((*labels)[r] != 0 && (*labels)[r] != 1)
        throw DataError("row " + std::to_string(r) + ": label is not 0/1");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.columns = columns;
  out.features = features.select_rows(rows);
  out.ids.reserve(rows.size());
  for (auto r : rows) out.ids.push_back(ids.at(r));
  if (labels) {
    out.labels.emplace();
    for (auto r : rows) out.labels->push_back(labels->at(r));
  }
  return out;
}

std::string to_csv(const Dataset& ds) {
  ds.validate();
  std::string out;
  out.reserve((ds.dims() * 2 + 16) * (ds.size() + 1));
  out += "id";
  for (const auto& c : ds.columns) {
    out += ',';
    append_field(out, c);
  }
  if (ds.labels) out += ",label";
  out += '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    append_field(out, ds.ids[r]);
    for (double v : ds.features.row(r)) {
      out += ',';
      out += v != 0.0 ? '1' : '0';
    }
    if (ds.labels) {
      out += ',';
      out += (*ds.labels)[r] != 0 ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

Dataset from_csv(std::string_view text) {
  auto records = parse_csv(text);
  if (records.empty()) throw DataError("CSV has no header row");
  const auto& header = records.front();
  if (header.empty() || header.front() != "id") throw DataError("CSV header must start with 'id'");
  const bool has_label = header.size() >= 2 && header.back() == "label";
  Dataset ds;
  ds.columns.assign(header.begin() + 1, header.end() - (has_label ? 1 : 0));
  const std::size_t width = header.size();
  std::size_t n_rows = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (!(records[i].size() == 1 && records[i][0].empty())) ++n_rows;
  ds.features = Matrix(n_rows, ds.columns.size());
  if (has_label) ds.labels.emplace();
  std::size_t r = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != width)
      throw DataError("row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                      " fields, header has " + std::to_string(width));
    ds.ids.push_back(rec[0]);
    for (std::size_t c = 0; c < ds.columns.size(); ++c)
      ds.features(r, c) = parse_binary_cell(rec[c + 1], r + 1, ds.columns[c]);
    if (has_label) ds.labels->push_back(static_cast<int>(parse_binary_cell(rec.back(), r + 1, "label")));
    ++r;
  }
  ds.validate();
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) { write_file(path, to_csv(ds)); }

Dataset load_dataset(const std::filesystem::path& path, const std::optional<std::string>& expected_fingerprint) {
  Dataset ds;
  try {
    ds = from_csv(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (expected_fingerprint && ds.fingerprint() != *expected_fingerprint)
    throw DataError(path.string() + ": header fingerprint " + ds.fingerprint() +
                    " does not match expected " + *expected_fingerprint);
  return ds;
}

} // namespace dro::data
