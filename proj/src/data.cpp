#include "cfstab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/hash.hpp"
#include "cfstab/rng.hpp"

namespace cfstab {

std::string to_string(Transform t) {
  switch (t) {
    case Transform::kStandardize: return "standardize";
    case Transform::kMinMax: return "minmax";
    case Transform::kOneHot: return "onehot";
    case Transform::kNone: return "none";
  }
  return "none";
}

std::string to_string(ColumnKind k) {
  return k == ColumnKind::kNumeric ? "numeric" : "categorical";
}

namespace {

Transform parse_transform(const std::string& s) {
  if (s == "standardize") return Transform::kStandardize;
  if (s == "minmax") return Transform::kMinMax;
  if (s == "onehot") return Transform::kOneHot;
  if (s == "none") return Transform::kNone;
  throw ConfigError("unknown column transform '" + s + "'");
}

ColumnKind parse_kind(const std::string& s) {
  if (s == "numeric") return ColumnKind::kNumeric;
  if (s == "categorical") return ColumnKind::kCategorical;
  throw ConfigError("unknown column kind '" + s + "'");
}

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

// RFC 4180 style record splitting: commas, double-quote escaping, CRLF.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char ch;
  while (in.get(ch)) {
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      break;
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  if (!any) return false;
  if (in_quotes) throw DataError("unterminated quoted field in CSV");
  fields.push_back(std::move(field));
  return true;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t'; });
}

}  // namespace

void ColumnSchema::validate() const {
  if (name.empty()) throw ConfigError("column schema entry without a name");
  if (kind == ColumnKind::kCategorical && transform != Transform::kOneHot) {
    throw ConfigError("categorical column '" + name + "' must use the onehot transform");
  }
  if (kind == ColumnKind::kNumeric && transform == Transform::kOneHot) {
    throw ConfigError("numeric column '" + name + "' cannot use the onehot transform");
  }
}

DatasetSchema parse_schema(const nlohmann::json& doc) {
  DatasetSchema schema;
  try {
    for (const auto& col : doc.at("columns")) {
      ColumnSchema c;
      c.name = col.at("name").get<std::string>();
      c.kind = parse_kind(col.at("kind").get<std::string>());
      c.transform = parse_transform(col.value("transform", std::string(
          c.kind == ColumnKind::kCategorical ? "onehot" : "none")));
      if (col.contains("categories")) c.categories = col.at("categories").get<std::vector<std::string>>();
      c.validate();
      schema.columns.push_back(std::move(c));
    }
    schema.label = doc.at("label").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset schema: ") + e.what());
  }
  return schema;
}

nlohmann::json schema_to_json(const DatasetSchema& schema) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : schema.columns) {
    nlohmann::json entry{{"name", c.name}, {"kind", to_string(c.kind)}, {"transform", to_string(c.transform)}};
    if (!c.categories.empty()) entry["categories"] = c.categories;
    cols.push_back(std::move(entry));
  }
  return {{"columns", cols}, {"label", schema.label}};
}

DatasetSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  try {
    return parse_schema(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("schema file " + path.string() + " is not valid JSON: " + e.what());
  }
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<ColumnSchema>& schema,
                 const std::string& label) {
  for (const auto& c : schema) c.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());

  std::vector<std::string> header;
  if (!read_record(in, header)) throw DataError("dataset file " + path.string() + " is empty");
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
  auto column_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "' in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> source;
  for (const auto& c : schema) source.push_back(column_of(c.name));
  const std::size_t label_col = column_of(label);
  for (const auto& c : schema) {
    if (c.name == label) throw ConfigError("label column '" + label + "' listed as a feature");
  }

  // Pass 1: keep raw cells, drop rows with missing values.
  std::vector<std::vector<std::string>> rows;
  std::size_t dropped = 0;
  std::size_t line = 1;
  std::vector<std::string> fields;
  while (read_record(in, fields)) {
    ++line;
    if (fields.size() == 1 && is_blank(fields[0])) continue;
    if (fields.size() != header.size()) {
      std::ostringstream msg;
      msg << "row " << line << " has " << fields.size() << " fields, header has " << header.size();
      throw DataError(msg.str());
    }
    bool missing = is_blank(fields[label_col]);
    for (std::size_t s : source) missing = missing || is_blank(fields[s]);
    if (missing) {
      ++dropped;
      continue;
    }
    rows.push_back(fields);
  }
  if (rows.empty()) throw DataError("dataset file " + path.string() + " has no complete rows");
  const std::size_t n = rows.size();

  // Labels: integer ids when every label is a non-negative integer,
  // otherwise ids by sorted distinct label string.
  std::vector<int> labels(n);
  std::vector<std::string> label_names;
  {
    bool integral = true;
    std::vector<long> values(n);
    for (std::size_t i = 0; i < n && integral; ++i) {
      double v;
      integral = parse_double(rows[i][label_col], v) && v >= 0 && v == std::floor(v) && v < 1e6;
      if (integral) values[i] = static_cast<long>(v);
    }
    if (integral) {
      const long top = *std::max_element(values.begin(), values.end());
      for (long k = 0; k <= std::max(top, 1L); ++k) label_names.push_back(std::to_string(k));
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(values[i]);
    } else {
      std::set<std::string> distinct;
      for (const auto& r : rows) distinct.insert(r[label_col]);
      label_names.assign(distinct.begin(), distinct.end());
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(std::lower_bound(label_names.begin(), label_names.end(),
                                                      rows[i][label_col]) - label_names.begin());
      }
    }
  }

  // Pass 2: fit transforms on the full table and fill the feature matrix.
  std::vector<ColumnTransform> transforms;
  Eigen::Index d = 0;
  std::vector<std::vector<double>> numeric(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& col = schema[c];
    ColumnTransform t;
    t.name = col.name;
    t.transform = col.transform;
    t.first_feature = d;
    if (col.kind == ColumnKind::kCategorical) {
      if (col.categories.empty()) {
        std::set<std::string> distinct;
        for (const auto& r : rows) distinct.insert(r[source[c]]);
        t.categories.assign(distinct.begin(), distinct.end());
      } else {
        t.categories = col.categories;
        for (std::size_t i = 0; i < n; ++i) {
          if (std::find(t.categories.begin(), t.categories.end(), rows[i][source[c]]) ==
              t.categories.end()) {
            std::ostringstream msg;
            msg << "unseen category '" << rows[i][source[c]] << "' in column '" << col.name
                << "' at data row " << i;
            throw DataError(msg.str());
          }
        }
      }
      t.width = static_cast<Eigen::Index>(t.categories.size());
    } else {
      auto& vals = numeric[c];
      vals.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (!parse_double(rows[i][source[c]], vals[i])) {
          std::ostringstream msg;
          msg << "non-numeric cell '" << rows[i][source[c]] << "' in column '" << col.name
              << "' at data row " << i;
          throw DataError(msg.str());
        }
      }
      if (col.transform == Transform::kStandardize) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        t.mean = mean;
        t.scale = var > 0.0 ? std::sqrt(var) : 1.0;
      } else if (col.transform == Transform::kMinMax) {
        t.min = *std::min_element(vals.begin(), vals.end());
        t.max = *std::max_element(vals.begin(), vals.end());
      }
      t.width = 1;
    }
    d += t.width;
    transforms.push_back(std::move(t));
  }

  Mat features = Mat::Zero(static_cast<Eigen::Index>(n), d);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& t = transforms[c];
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      switch (t.transform) {
        case Transform::kOneHot: {
          const auto& cats = t.categories;
          const auto k = std::find(cats.begin(), cats.end(), rows[i][source[c]]) - cats.begin();
          features(row, t.first_feature + k) = 1.0;
          break;
        }
        case Transform::kStandardize:
          features(row, t.first_feature) = (numeric[c][i] - t.mean) / t.scale;
          break;
        case Transform::kMinMax: {
          const double range = t.max - t.min;
          features(row, t.first_feature) = range > 0.0 ? (numeric[c][i] - t.min) / range : 0.0;
          break;
        }
        case Transform::kNone:
          features(row, t.first_feature) = numeric[c][i];
          break;
      }
    }
  }
  Dataset ds = make_dataset(std::move(features), std::move(labels), schema, std::move(transforms),
                            std::move(label_names));
  ds.dropped_rows = dropped;
  return ds;
}

Dataset make_dataset(Mat features, std::vector<int> labels, std::vector<ColumnSchema> schema,
                     std::vector<ColumnTransform> transforms, std::vector<std::string> label_names) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw DataError("label count does not match feature rows");
  }
  Dataset ds;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.schema = std::move(schema);
  ds.transforms = std::move(transforms);
  ds.label_names = std::move(label_names);
  for (int y : ds.labels) {
    if (y < 0 || y >= ds.num_classes()) throw DataError("label id outside the label vocabulary");
  }
  ds.fingerprint = compute_fingerprint(ds);
  return ds;
}

std::string compute_fingerprint(const Dataset& ds) {
  Sha256 h;
  h.update_field("cfstab-dataset-v1");
  h.update_u64(ds.schema.size());
  for (const auto& c : ds.schema) {
    h.update_field(c.name).update_field(to_string(c.kind)).update_field(to_string(c.transform));
    h.update_u64(c.categories.size());
    for (const auto& cat : c.categories) h.update_field(cat);
  }
  h.update_u64(ds.transforms.size());
  for (const auto& t : ds.transforms) {
    h.update_field(t.name).update_field(to_string(t.transform));
    h.update_f64(t.mean).update_f64(t.scale).update_f64(t.min).update_f64(t.max);
    h.update_u64(t.categories.size());
    for (const auto& cat : t.categories) h.update_field(cat);
  }
  h.update_u64(ds.label_names.size());
  for (const auto& name : ds.label_names) h.update_field(name);
  h.update_u64(static_cast<std::uint64_t>(ds.rows())).update_u64(static_cast<std::uint64_t>(ds.dim()));
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) h.update_f64(ds.features(i, j));
    h.update_u64(static_cast<std::uint64_t>(ds.labels[static_cast<std::size_t>(i)]));
  }
  return h.hex_digest();
}

Mat inverse_transform(const Dataset& ds) {
  Mat out(ds.rows(), static_cast<Eigen::Index>(ds.transforms.size()));
  for (std::size_t c = 0; c < ds.transforms.size(); ++c) {
    const auto& t = ds.transforms[c];
    const auto col = static_cast<Eigen::Index>(c);
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
      const double v = ds.features(i, t.first_feature);
      switch (t.transform) {
        case Transform::kOneHot: {
          Eigen::Index k;
          ds.features.row(i).segment(t.first_feature, t.width).maxCoeff(&k);
          out(i, col) = static_cast<double>(k);
          break;
        }
        case Transform::kStandardize: out(i, col) = v * t.scale + t.mean; break;
        case Transform::kMinMax: out(i, col) = t.max > t.min ? v * (t.max - t.min) + t.min : t.min; break;
        case Transform::kNone: out(i, col) = v; break;
      }
    }
  }
  return out;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Mat features(static_cast<Eigen::Index>(rows.size()), ds.dim());
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(ds.rows())) throw DataError("subset row out of range");
    features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(rows[i]));
    labels[i] = ds.labels[rows[i]];
  }
  return make_dataset(std::move(features), std::move(labels), ds.schema, ds.transforms, ds.label_names);
}

Dataset without_row(const Dataset& ds, std::size_t row) {
  std::vector<std::size_t> keep;
  keep.reserve(static_cast<std::size_t>(ds.rows()));
  for (std::size_t i = 0; i < static_cast<std::size_t>(ds.rows()); ++i) {
    if (i != row) keep.push_back(i);
  }
  return subset(ds, keep);
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(ds.rows());
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    std::ostringstream msg;
    msg << "degenerate split: " << n << " rows with train_frac " << train_frac;
    throw DataError(msg.str());
  }
  Xoshiro256 rng(seed);
  const auto perm = permutation(n, rng);
  std::vector<std::size_t> train_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return {subset(ds, train_rows), subset(ds, test_rows)};
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "blobs") return SynthKind::kBlobs;
  if (s == "rings") return SynthKind::kRings;
  throw ConfigError("unknown synthetic dataset kind '" + s + "'");
}

Dataset synth_2d(SynthKind kind, int n, double noise, std::uint64_t seed) {
  if (n < 4) throw ConfigError("synthetic datasets need n >= 4");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  Xoshiro256 rng(seed);
  Mat features(n, 2);
  std::vector<int> labels(static_cast<std::size_t>(n));
  // Classes alternate so any prefix is balanced to within one point.
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    labels[static_cast<std::size_t>(i)] = cls;
    if (kind == SynthKind::kBlobs) {
      const double c = cls == 0 ? -1.0 : 1.0;
      features(i, 0) = c + noise * rng.normal();
      features(i, 1) = c + noise * rng.normal();
    } else {
      const double radius = (cls == 0 ? 1.0 : 2.0) + noise * rng.normal();
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      features(i, 0) = radius * std::cos(angle);
      features(i, 1) = radius * std::sin(angle);
    }
  }
  std::vector<ColumnSchema> schema{{"x0", ColumnKind::kNumeric, Transform::kNone, {}},
                                   {"x1", ColumnKind::kNumeric, Transform::kNone, {}}};
  std::vector<ColumnTransform> transforms(2);
  for (int j = 0; j < 2; ++j) {
    transforms[static_cast<std::size_t>(j)].name = schema[static_cast<std::size_t>(j)].name;
    transforms[static_cast<std::size_t>(j)].first_feature = j;
  }
  return make_dataset(std::move(features), std::move(labels), std::move(schema), std::move(transforms),
                      {"0", "1"});
}

std::vector<std::size_t> loo_pool(const Dataset& train, std::size_t pool_size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(train.rows());
  if (pool_size > n) {
    std::ostringstream msg;
    msg << "leave-one-out pool of " << pool_size << " exceeds training set of " << n << " rows";
    throw ConfigError(msg.str());
  }
  // Partial Fisher-Yates: the first pool_size slots of a seeded permutation.
  Xoshiro256 rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < pool_size; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(pool_size);
  return idx;
}

std::vector<LooVariant> leave_one_out_variants(const Dataset& train, std::size_t pool_size,
                                               std::uint64_t seed) {
  std::vector<LooVariant> out;
  for (std::size_t removed : loo_pool(train, pool_size, seed)) {
    out.push_back({removed, without_row(train, removed)});
  }
  return out;
}

double median_l2_norm(const Dataset& ds) {
  if (ds.rows() == 0) throw DataError("median norm of an empty dataset");
  std::vector<double> norms(static_cast<std::size_t>(ds.rows()));
  for (Eigen::Index i = 0; i < ds.rows(); ++i) norms[static_cast<std::size_t>(i)] = ds.features.row(i).norm();
  std::sort(norms.begin(), norms.end());
  const std::size_t n = norms.size();
  return n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
}

}  // namespace cfstab
