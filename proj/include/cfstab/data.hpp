#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfstab/nn.hpp"

namespace cfstab {

enum class ColumnKind { kNumeric, kCategorical };
enum class Transform { kStandardize, kMinMax, kOneHot, kNone };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  Transform transform = Transform::kNone;
  // Optional closed vocabulary for categorical columns. When empty the
  // vocabulary is the sorted set of values seen at load time.
  std::vector<std::string> categories;

  // Throws ConfigError on kind/transform mismatch.
  void validate() const;
  bool operator==(const ColumnSchema&) const = default;
};

// Contents of a dataset schema file: {columns:[{name, kind, transform}], label}.
struct DatasetSchema {
  std::vector<ColumnSchema> columns;
  std::string label;
};

// Parameters fitted for one source column, enough to invert the transform.
struct ColumnTransform {
  std::string name;
  Transform transform = Transform::kNone;
  double mean = 0.0;
  double scale = 1.0;  // population std for standardize
  double min = 0.0;
  double max = 1.0;
  std::vector<std::string> categories;
  Eigen::Index first_feature = 0;
  Eigen::Index width = 1;

  bool operator==(const ColumnTransform&) const = default;
};

struct Dataset {
  Mat features;  // n x d, post-transform
  std::vector<int> labels;
  std::vector<ColumnSchema> schema;
  std::vector<ColumnTransform> transforms;
  std::vector<std::string> label_names;
  std::string fingerprint;
  std::size_t dropped_rows = 0;  // rows with missing values rejected at load

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(label_names.size()); }
  Vec row(Eigen::Index i) const { return features.row(i).transpose(); }
};

struct LooVariant {
  std::size_t removed_index;  // row index into the parent training set
  Dataset data;
};

enum class SynthKind { kBlobs, kRings };

DatasetSchema parse_schema(const nlohmann::json& doc);
nlohmann::json schema_to_json(const DatasetSchema& schema);
DatasetSchema load_schema(const std::filesystem::path& path);

// Reads a comma-separated file with a header row; fits transforms on the
// whole table. Rows with empty cells are dropped and counted.
Dataset load_csv(const std::filesystem::path& path, const std::vector<ColumnSchema>& schema,
                 const std::string& label);

// Assembles a dataset from already-transformed parts and fingerprints it.
Dataset make_dataset(Mat features, std::vector<int> labels, std::vector<ColumnSchema> schema,
                     std::vector<ColumnTransform> transforms, std::vector<std::string> label_names);

std::string compute_fingerprint(const Dataset& ds);

// Source-column values recovered from the transformed features: numeric
// columns in original units, categorical columns as category index.
Mat inverse_transform(const Dataset& ds);

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows);
Dataset without_row(const Dataset& ds, std::size_t row);

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed);

Dataset synth_2d(SynthKind kind, int n, double noise, std::uint64_t seed);

// Row indices of the removal pool O: pool_size distinct rows, seeded draw.
std::vector<std::size_t> loo_pool(const Dataset& train, std::size_t pool_size, std::uint64_t seed);
std::vector<LooVariant> leave_one_out_variants(const Dataset& train, std::size_t pool_size,
                                               std::uint64_t seed);

double median_l2_norm(const Dataset& ds);

std::string to_string(Transform t);
std::string to_string(ColumnKind k);
SynthKind parse_synth_kind(const std::string& s);

}  // namespace cfstab
