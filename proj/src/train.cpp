#include "cfstab/train.hpp"

#include <cmath>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/rng.hpp"

namespace cfstab {

namespace {

struct AdamState {
  std::vector<Mat> m_w, v_w;
  std::vector<Vec> m_b, v_b;
  long step = 0;
};

}  // namespace

Network train(Network net, const Dataset& dataset, const TrainConfig& config) {
  check_network(net);
  if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (config.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (config.epochs == 0) return net;
  if (dataset.rows() == 0) throw DataError("cannot train on an empty dataset");
  if (dataset.dim() != net.input_dim()) {
    std::ostringstream msg;
    msg << "dataset has " << dataset.dim() << " features, network expects " << net.input_dim();
    throw DataError(msg.str());
  }
  const int m = net.output_dim();
  const int classes = m == 1 ? 2 : m;
  for (int y : dataset.labels) {
    if (y < 0 || y >= classes) throw DataError("label outside the network's class range");
  }

  const std::size_t depth = net.layers.size();
  AdamState adam;
  for (const auto& layer : net.layers) {
    adam.m_w.push_back(Mat::Zero(layer.weight.rows(), layer.weight.cols()));
    adam.v_w.push_back(Mat::Zero(layer.weight.rows(), layer.weight.cols()));
    adam.m_b.push_back(Vec::Zero(layer.bias.size()));
    adam.v_b.push_back(Vec::Zero(layer.bias.size()));
  }
  const auto& hp = config.adam;
  const auto n = static_cast<std::size_t>(dataset.rows());

  std::vector<Mat> acts(depth + 1);
  std::vector<Mat> pre(depth);
  std::vector<Mat> grad_w(depth);
  std::vector<Vec> grad_b(depth);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (config.shuffle) {
      Xoshiro256 rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
      order = permutation(n, rng);
    } else {
      order.resize(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const auto batch = static_cast<Eigen::Index>(end - start);

      Mat x(net.input_dim(), batch);
      for (Eigen::Index k = 0; k < batch; ++k) {
        x.col(k) = dataset.features.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)])).transpose();
      }
      acts[0] = std::move(x);
      for (std::size_t i = 0; i < depth; ++i) {
        pre[i] = net.layers[i].weight * acts[i];
        pre[i].colwise() += net.layers[i].bias;
        acts[i + 1] = (i + 1 < depth) ? Mat(pre[i].cwiseMax(0.0)) : pre[i];
      }

      // dL/dlogits for the mean batch loss.
      const Mat& logits = acts[depth];
      Mat delta(m, batch);
      for (Eigen::Index k = 0; k < batch; ++k) {
        const int y = dataset.labels[order[start + static_cast<std::size_t>(k)]];
        if (m == 1) {
          const double f = logits(0, k);
          loss_sum += std::max(f, 0.0) - f * y + std::log1p(std::exp(-std::abs(f)));
          delta(0, k) = sigmoid(f) - y;
        } else {
          const double top = logits.col(k).maxCoeff();
          const Vec e = (logits.col(k).array() - top).exp();
          const double z = e.sum();
          loss_sum += std::log(z) + top - logits(y, k);
          delta.col(k) = e / z;
          delta(y, k) -= 1.0;
        }
      }
      delta /= static_cast<double>(batch);

      for (std::size_t i = depth; i-- > 0;) {
        grad_w[i] = delta * acts[i].transpose();
        grad_b[i] = delta.rowwise().sum();
        if (i > 0) {
          Mat back = net.layers[i].weight.transpose() * delta;
          delta = (pre[i - 1].array() > 0.0).select(back.array(), 0.0).matrix();
        }
      }

      ++adam.step;
      const double t = static_cast<double>(adam.step);
      const double lr_t = hp.learning_rate * std::sqrt(1.0 - std::pow(hp.beta2, t)) /
                          (1.0 - std::pow(hp.beta1, t));
      for (std::size_t i = 0; i < depth; ++i) {
        adam.m_w[i] = hp.beta1 * adam.m_w[i] + (1.0 - hp.beta1) * grad_w[i];
        adam.v_w[i] = hp.beta2 * adam.v_w[i] + (1.0 - hp.beta2) * grad_w[i].cwiseAbs2();
        net.layers[i].weight.array() -=
            lr_t * adam.m_w[i].array() / (adam.v_w[i].array().sqrt() + hp.eps_hat);
        if (config.train_bias) {
          adam.m_b[i] = hp.beta1 * adam.m_b[i] + (1.0 - hp.beta1) * grad_b[i];
          adam.v_b[i] = hp.beta2 * adam.v_b[i] + (1.0 - hp.beta2) * grad_b[i].cwiseAbs2();
          net.layers[i].bias.array() -=
              lr_t * adam.m_b[i].array() / (adam.v_b[i].array().sqrt() + hp.eps_hat);
        }
      }
    }

    const double mean_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(mean_loss)) {
      std::ostringstream msg;
      msg << "training loss became non-finite at epoch " << epoch;
      throw NumericError(msg.str());
    }
    for (std::size_t i = 0; i < depth; ++i) {
      if (!net.layers[i].weight.allFinite() || !net.layers[i].bias.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite parameters in layer " << i << " after epoch " << epoch;
        throw NumericError(msg.str());
      }
    }
    net.loss_log.push_back(mean_loss);
  }
  net.meta.dataset_fingerprint = dataset.fingerprint;
  net.meta.train_config = config;
  return net;
}

double accuracy(const Network& net, const Dataset& dataset) {
  if (dataset.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
    if (predict(net, dataset.row(i)) == dataset.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.rows());
}

}  // namespace cfstab
