#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dro/matrix.hpp"

namespace dro::data {

// ---------------------------------------------------------------------------
// Manifest intent extraction

inline constexpr std::string_view kAndroidNamespace = "http://schemas.android.com/apk/res/android";

// Intent strings declared inside <intent-filter> elements of activity,
// activity-alias, service and receiver components. Actions and categories are
// kept apart so callers can select either view.
struct ManifestIntents {
  std::set<std::string> actions;
  std::set<std::string> categories;

  [[nodiscard]] std::set<std::string> all() const;
};

enum class IntentClasses { both, actions, categories };

std::string to_string(IntentClasses c);
IntentClasses intent_classes_from_string(const std::string& name);

[[nodiscard]] std::set<std::string> select(const ManifestIntents& intents, IntentClasses classes);

// Parses decoded (text) AndroidManifest.xml. Throws DataError carrying the
// line and column for malformed XML. Manifests without intent filters yield
// empty sets.
ManifestIntents parse_manifest(std::string_view xml);

// ---------------------------------------------------------------------------
// Vocabulary

// 16 hex digits of FNV-1a/64 over the newline-joined entries.
std::string fingerprint(const std::vector<std::string>& entries);

class IntentVocabulary {
public:
  IntentVocabulary() = default;
  // Sorts and deduplicates.
  explicit IntentVocabulary(std::vector<std::string> entries, std::string version = "v1");

  [[nodiscard]] const std::vector<std::string>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] const std::string& version() const noexcept { return version_; }
  [[nodiscard]] const std::string& fingerprint() const noexcept { return fingerprint_; }
  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view entry) const;

  friend bool operator==(const IntentVocabulary&, const IntentVocabulary&) = default;

private:
  std::vector<std::string> entries_;
  std::string version_ = "v1";
  std::string fingerprint_ = data::fingerprint({});
};

// Sorted union of all intent strings; empty sets are ignored.
IntentVocabulary build_vocabulary(const std::vector<std::set<std::string>>& corpora);

// Header comment "# dro-vocabulary <version> fingerprint=<hex> size=<n>" then
// one entry per line.
void save_vocabulary(const std::filesystem::path& path, const IntentVocabulary& vocab);
IntentVocabulary load_vocabulary(const std::filesystem::path& path);

struct Vectorized {
  std::vector<double> features;
  std::size_t oov_count = 0;
};

// Binary indicator vector in vocabulary order. Unknown intents are counted,
// not encoded.
Vectorized vectorize(const std::set<std::string>& intents, const IntentVocabulary& vocab);

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::string> columns;
  Matrix features;
  // 1 = malware, 0 = benign.
  std::optional<std::vector<int>> labels;

  [[nodiscard]] std::size_t size() const noexcept { return features.rows(); }
  [[nodiscard]] std::size_t dims() const noexcept { return features.cols(); }
  [[nodiscard]] bool has_labels() const noexcept { return labels.has_value(); }
  [[nodiscard]] std::string fingerprint() const { return data::fingerprint(columns); }
  [[nodiscard]] const std::vector<int>& require_labels() const;

  // Row-count consistency, binary cells, binary labels, unique column names.
  void validate() const;

  [[nodiscard]] Dataset subset(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// CSV: header "id,<columns...>[,label]"; cells 0/1.
std::string to_csv(const Dataset& ds);
Dataset from_csv(std::string_view text);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
// When expected_fingerprint is set the header must reproduce it.
Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<std::string>& expected_fingerprint = std::nullopt);

// ---------------------------------------------------------------------------
// Synthetic planted-subpopulation generator

// Two planted subpopulations. Unambiguous rows switch signal features on with
// probability signal_density and background features with background_density;
// their label is a fixed random linear rule over the signal features, flipped
// with probability flip_noise. Ambiguous rows draw every feature from one
// shared Bernoulli(ambiguous_density) and get uniformly random labels.
struct SyntheticSpec {
  std::size_t n_samples = 4000;
  std::size_t n_features = 40;
  double ambiguous_fraction = 0.5;
  std::size_t signal_features = 8;
  double flip_noise = 0.05;
  double signal_density = 0.5;
  double background_density = 0.02;
  double ambiguous_density = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  // 1 for rows of the ambiguous subpopulation.
  std::vector<int> ambiguous;
  std::vector<double> rule_weights;
  double rule_threshold = 0.0;

  // Noise-free label of the linear rule for an arbitrary row.
  [[nodiscard]] int rule_label(std::span<const double> row) const;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

} // namespace dro::data
