#include "cfstab/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>

#include "cfstab/errors.hpp"
#include "cfstab/model_io.hpp"

namespace cfstab {

using nlohmann::json;

json default_config_json() {
  const ExperimentConfig d;
  const ElasticNetConfig& en = d.methods.elastic_net;
  return {
      {"dataset",
       {{"source", d.dataset.source},
        {"synth_kind", d.dataset.synth_kind},
        {"n", d.dataset.n},
        {"noise", d.dataset.noise},
        {"seed", d.dataset.seed},
        {"csv_path", d.dataset.csv_path},
        {"schema_path", d.dataset.schema_path},
        {"train_frac", d.dataset.train_frac},
        {"split_seed", d.dataset.split_seed},
        {"origin_count", d.dataset.origin_count},
        {"desired_class", d.dataset.desired_class}}},
      {"model", {{"layer_dims", d.layer_dims}, {"init_seed", d.init_seed}}},
      {"train", train_config_to_json(d.train)},
      {"methods",
       {{"min_l1", d.methods.min_l1},
        {"min_l2", d.methods.min_l2},
        {"pgd", d.methods.pgd},
        {"sns", d.methods.sns},
        {"elastic_net",
         {{"confidence", en.confidence},
          {"max_steps", en.max_steps},
          {"step_size", en.step_size},
          {"initial_const", en.initial_const},
          {"binary_search_steps", en.binary_search_steps},
          {"jitter_seed", en.jitter_seed}}},
        {"pgd_max_eps", d.methods.pgd_max_eps},
        {"pgd_n_interp", d.methods.pgd_n_interp},
        {"pgd_max_steps", d.methods.pgd_max_steps},
        {"sns_delta_factor", d.methods.sns_delta_factor},
        {"sns_steps", d.methods.sns_steps},
        {"sns_grid_points", d.methods.sns_grid_points}}},
      {"ensembles",
       {{"loo_count", d.ensembles.loo_count},
        {"rs_count", d.ensembles.rs_count},
        {"loo_seed", d.ensembles.loo_seed}}},
      {"report", {{"success_floor", d.report.success_floor}, {"formats", d.report.formats}}},
      {"verify",
       {{"prop1_nets", d.verify.prop1_nets},
        {"prop1_trials", d.verify.prop1_trials},
        {"theorem1_nets", d.verify.theorem1_nets},
        {"theorem1_points", d.verify.theorem1_points},
        {"theorem1_epochs", d.verify.theorem1_epochs},
        {"theorem1_directions", d.verify.theorem1_directions},
        {"theorem2_nets", d.verify.theorem2_nets},
        {"theorem2_trials", d.verify.theorem2_trials},
        {"theorem2_doi_samples", d.verify.theorem2_doi_samples},
        {"theorem2_path_points", d.verify.theorem2_path_points},
        {"theorem2_delta_ratio", d.verify.theorem2_delta_ratio},
        {"seed", d.verify.seed},
        {"inject_fault", d.verify.inject_fault}}},
      {"plot",
       {{"resolution", d.plot.resolution},
        {"bbox", {d.plot.bbox.min_x, d.plot.bbox.max_x, d.plot.bbox.min_y, d.plot.bbox.max_y}}}},
      {"paths",
       {{"model", d.paths.model},
        {"records", d.paths.records},
        {"ensembles", d.paths.ensembles},
        {"report", d.paths.report}}},
  };
}

namespace {

void merge_checked(json& base, const json& patch, const std::string& prefix) {
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + path);
    if (base[key].is_object()) {
      if (!value.is_object()) throw ConfigError("config key " + path + " must be a table");
      merge_checked(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void shift_seeds(json& doc, std::int64_t offset) {
  for (auto& [key, value] : doc.items()) {
    if (value.is_object()) {
      shift_seeds(value, offset);
    } else if (value.is_number_integer() && key.size() >= 4 &&
               key.compare(key.size() - 4, 4, "seed") == 0) {
      const auto shifted = static_cast<std::int64_t>(value.get<std::uint64_t>()) + offset;
      if (shifted < 0) throw ConfigError("seed offset makes " + key + " negative");
      value = static_cast<std::uint64_t>(shifted);
    }
  }
}

template <typename T>
T field(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key: " + key);
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("cannot override a whole table: " + key);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

void apply_seed_offset(json& doc, std::int64_t offset) {
  if (offset != 0) shift_seeds(doc, offset);
}

std::int64_t seed_offset_from_env() {
  const char* raw = std::getenv("CFSTAB_SEED_OFFSET");
  if (!raw || !*raw) return 0;
  const std::string text(raw);
  std::int64_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("CFSTAB_SEED_OFFSET must be an integer, got '" + text + "'");
  }
  return value;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides, std::int64_t seed_offset) {
  json doc = default_config_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) {
      throw ConfigError("config " + path.string() + " is not a JSON object");
    }
    merge_checked(doc, file, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  apply_seed_offset(doc, seed_offset);
  return config_from_json(doc);
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  c.effective = doc;

  auto& ds = c.dataset;
  ds.source = field<std::string>(doc, "dataset", "source");
  ds.synth_kind = field<std::string>(doc, "dataset", "synth_kind");
  ds.n = field<int>(doc, "dataset", "n");
  ds.noise = field<double>(doc, "dataset", "noise");
  ds.seed = field<std::uint64_t>(doc, "dataset", "seed");
  ds.csv_path = field<std::string>(doc, "dataset", "csv_path");
  ds.schema_path = field<std::string>(doc, "dataset", "schema_path");
  ds.train_frac = field<double>(doc, "dataset", "train_frac");
  ds.split_seed = field<std::uint64_t>(doc, "dataset", "split_seed");
  ds.origin_count = field<int>(doc, "dataset", "origin_count");
  ds.desired_class = field<int>(doc, "dataset", "desired_class");
  if (ds.source != "synth" && ds.source != "csv") {
    throw ConfigError("dataset.source must be 'synth' or 'csv'");
  }
  if (ds.origin_count < 1) throw ConfigError("dataset.origin_count must be >= 1");
  if (!(ds.train_frac > 0.0 && ds.train_frac < 1.0)) throw ConfigError("dataset.train_frac must lie in (0, 1)");
  if (ds.n < 2) throw ConfigError("dataset.n must be >= 2");

  c.layer_dims = field<std::vector<int>>(doc, "model", "layer_dims");
  c.init_seed = field<std::uint64_t>(doc, "model", "init_seed");
  NetworkSpec{c.layer_dims}.validate();
  try {
    c.train = train_config_from_json(doc.at("train"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config train: ") + e.what());
  }

  auto& m = c.methods;
  m.min_l1 = field<bool>(doc, "methods", "min_l1");
  m.min_l2 = field<bool>(doc, "methods", "min_l2");
  m.pgd = field<bool>(doc, "methods", "pgd");
  m.sns = field<bool>(doc, "methods", "sns");
  try {
    const json& en = doc.at("methods").at("elastic_net");
    m.elastic_net.confidence = en.at("confidence").get<double>();
    m.elastic_net.max_steps = en.at("max_steps").get<int>();
    m.elastic_net.step_size = en.at("step_size").get<double>();
    m.elastic_net.initial_const = en.at("initial_const").get<double>();
    m.elastic_net.binary_search_steps = en.at("binary_search_steps").get<int>();
    m.elastic_net.jitter_seed = en.at("jitter_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config methods.elastic_net: ") + e.what());
  }
  m.pgd_max_eps = field<double>(doc, "methods", "pgd_max_eps");
  m.pgd_n_interp = field<int>(doc, "methods", "pgd_n_interp");
  m.pgd_max_steps = field<int>(doc, "methods", "pgd_max_steps");
  m.sns_delta_factor = field<double>(doc, "methods", "sns_delta_factor");
  m.sns_steps = field<int>(doc, "methods", "sns_steps");
  m.sns_grid_points = field<int>(doc, "methods", "sns_grid_points");
  if (m.pgd_max_eps < 0.0) throw ConfigError("methods.pgd_max_eps must be >= 0");
  if (!(m.sns_delta_factor > 0.0)) throw ConfigError("methods.sns_delta_factor must be positive");

  c.ensembles.loo_count = field<int>(doc, "ensembles", "loo_count");
  c.ensembles.rs_count = field<int>(doc, "ensembles", "rs_count");
  c.ensembles.loo_seed = field<std::uint64_t>(doc, "ensembles", "loo_seed");
  if (c.ensembles.loo_count < 0 || c.ensembles.rs_count < 0) {
    throw ConfigError("ensemble counts must be >= 0");
  }

  c.report.success_floor = field<double>(doc, "report", "success_floor");
  if (!(c.report.success_floor >= 0.0 && c.report.success_floor <= 1.0)) {
    throw ConfigError("report.success_floor must lie in [0, 1]");
  }
  c.report.formats = field<std::vector<std::string>>(doc, "report", "formats");
  for (const auto& f : c.report.formats) {
    if (f != "json" && f != "csv" && f != "text") throw ConfigError("unknown report format: " + f);
  }

  auto& v = c.verify;
  v.prop1_nets = field<int>(doc, "verify", "prop1_nets");
  v.prop1_trials = field<int>(doc, "verify", "prop1_trials");
  v.theorem1_nets = field<int>(doc, "verify", "theorem1_nets");
  v.theorem1_points = field<int>(doc, "verify", "theorem1_points");
  v.theorem1_epochs = field<int>(doc, "verify", "theorem1_epochs");
  v.theorem1_directions = field<int>(doc, "verify", "theorem1_directions");
  v.theorem2_nets = field<int>(doc, "verify", "theorem2_nets");
  v.theorem2_trials = field<int>(doc, "verify", "theorem2_trials");
  v.theorem2_doi_samples = field<int>(doc, "verify", "theorem2_doi_samples");
  v.theorem2_path_points = field<int>(doc, "verify", "theorem2_path_points");
  v.theorem2_delta_ratio = field<double>(doc, "verify", "theorem2_delta_ratio");
  v.seed = field<std::uint64_t>(doc, "verify", "seed");
  v.inject_fault = field<bool>(doc, "verify", "inject_fault");

  c.plot.resolution = field<int>(doc, "plot", "resolution");
  const auto box = field<std::vector<double>>(doc, "plot", "bbox");
  if (box.size() != 4 || !(box[0] < box[1]) || !(box[2] < box[3])) {
    throw ConfigError("plot.bbox must be [min_x, max_x, min_y, max_y] with min < max");
  }
  c.plot.bbox = {box[0], box[1], box[2], box[3]};

  c.paths.model = field<std::string>(doc, "paths", "model");
  c.paths.records = field<std::string>(doc, "paths", "records");
  c.paths.ensembles = field<std::string>(doc, "paths", "ensembles");
  c.paths.report = field<std::string>(doc, "paths", "report");
  return c;
}

}  // namespace cfstab
