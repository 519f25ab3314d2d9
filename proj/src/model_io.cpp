#include "cfstab/model_io.hpp"

#include <fstream>

#include "cfstab/errors.hpp"
#include "cfstab/hash.hpp"

namespace cfstab {

nlohmann::json train_config_to_json(const TrainConfig& config) {
  return {
      {"seed", config.seed},
      {"epochs", config.epochs},
      {"batch_size", config.batch_size},
      {"optimizer",
       {{"name", "adam"},
        {"learning_rate", config.adam.learning_rate},
        {"beta1", config.adam.beta1},
        {"beta2", config.adam.beta2},
        {"eps_hat", config.adam.eps_hat}}},
      {"shuffle", config.shuffle},
      {"train_bias", config.train_bias},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& doc, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  try {
    c.seed = doc.value("seed", c.seed);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.shuffle = doc.value("shuffle", c.shuffle);
    c.train_bias = doc.value("train_bias", c.train_bias);
    if (doc.contains("optimizer")) {
      const auto& opt = doc.at("optimizer");
      if (opt.value("name", std::string("adam")) != "adam") {
        throw ConfigError("only the adam optimizer is supported");
      }
      c.adam.learning_rate = opt.value("learning_rate", c.adam.learning_rate);
      c.adam.beta1 = opt.value("beta1", c.adam.beta1);
      c.adam.beta2 = opt.value("beta2", c.adam.beta2);
      c.adam.eps_hat = opt.value("eps_hat", c.adam.eps_hat);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  if (c.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(c.adam.learning_rate > 0.0)) throw ConfigError("train.optimizer.learning_rate must be positive");
  return c;
}

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) row.push_back(layer.weight(r, c));
      w.push_back(std::move(row));
    }
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) b.push_back(layer.bias[i]);
    layers.push_back({{"w", std::move(w)}, {"b", std::move(b)}});
  }
  nlohmann::json meta{{"seed", net.meta.seed}, {"dataset_fingerprint", net.meta.dataset_fingerprint}};
  meta["train_config"] = net.meta.train_config ? train_config_to_json(*net.meta.train_config)
                                               : nlohmann::json(nullptr);
  return {{"format_version", kModelFormatVersion},
          {"spec", {{"layer_dims", net.spec.layer_dims}}},
          {"layers", std::move(layers)},
          {"meta", std::move(meta)}};
}

Network network_from_json(const nlohmann::json& doc) {
  Network net;
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ConfigError("unsupported model format_version " + std::to_string(version));
    }
    net.spec.layer_dims = doc.at("spec").at("layer_dims").get<std::vector<int>>();
    net.spec.validate();
    for (const auto& entry : doc.at("layers")) {
      const auto& w = entry.at("w");
      const auto& b = entry.at("b");
      DenseLayer layer{Mat(static_cast<Eigen::Index>(w.size()),
                           w.empty() ? 0 : static_cast<Eigen::Index>(w.at(0).size())),
                       Vec(static_cast<Eigen::Index>(b.size()))};
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        const auto& row = w.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != layer.weight.cols()) {
          throw ConfigError("ragged weight matrix in model file");
        }
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
          layer.weight(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
      }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
        layer.bias[i] = b.at(static_cast<std::size_t>(i)).get<double>();
      }
      net.layers.push_back(std::move(layer));
    }
    const auto& meta = doc.at("meta");
    net.meta.seed = meta.value("seed", std::uint64_t{0});
    net.meta.dataset_fingerprint = meta.value("dataset_fingerprint", std::string());
    if (meta.contains("train_config") && !meta.at("train_config").is_null()) {
      net.meta.train_config = train_config_from_json(meta.at("train_config"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
  check_network(net);
  return net;
}

void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void save_network(const Network& net, const std::filesystem::path& path) {
  write_json_file(network_to_json(net), path);
}

Network load_network(const std::filesystem::path& path) { return network_from_json(read_json_file(path)); }

std::string model_fingerprint(const Network& net) {
  Sha256 h;
  h.update_field("cfstab-model-v1");
  h.update_u64(net.spec.layer_dims.size());
  for (int dim : net.spec.layer_dims) h.update_u64(static_cast<std::uint64_t>(dim));
  for (const auto& layer : net.layers) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) h.update_f64(layer.weight(r, c));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) h.update_f64(layer.bias[i]);
  }
  return h.hex_digest();
}

}  // namespace cfstab
