#include "cfstab/nn.hpp"

#include <cmath>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/rng.hpp"

namespace cfstab {

int NetworkSpec::hidden_neuron_count() const {
  int total = 0;
  for (std::size_t i = 1; i + 1 < layer_dims.size(); ++i) total += layer_dims[i];
  return total;
}

void NetworkSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw ConfigError("network spec needs at least input and output dims");
  }
  for (int dim : layer_dims) {
    if (dim < 1) throw ConfigError("network spec dims must be >= 1");
  }
}

std::size_t ActivationPattern::active_count() const {
  std::size_t n = 0;
  for (bool b : bits) n += b ? 1 : 0;
  return n;
}

Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec = spec;
  net.meta.seed = seed;
  Xoshiro256 rng(seed);
  for (std::size_t i = 0; i + 1 < spec.layer_dims.size(); ++i) {
    const int fan_in = spec.layer_dims[i];
    const int fan_out = spec.layer_dims[i + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    DenseLayer layer{Mat(fan_out, fan_in), Vec::Zero(fan_out)};
    // Row-major fill order is part of the reproducibility contract.
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

void check_network(const Network& net) {
  net.spec.validate();
  if (net.layers.size() + 1 != net.spec.layer_dims.size()) {
    throw ConfigError("network has wrong number of layers for its spec");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    if (layer.weight.cols() != net.spec.layer_dims[i] ||
        layer.weight.rows() != net.spec.layer_dims[i + 1] ||
        layer.bias.size() != net.spec.layer_dims[i + 1]) {
      std::ostringstream msg;
      msg << "layer " << i << " shape does not match spec";
      throw ConfigError(msg.str());
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      std::ostringstream msg;
      msg << "layer " << i << " has non-finite parameters";
      throw NumericError(msg.str());
    }
  }
}

namespace {

void check_input(const Network& net, const Vec& x) {
  if (x.size() != net.input_dim()) {
    std::ostringstream msg;
    msg << "input has dimension " << x.size() << ", network expects " << net.input_dim();
    throw DataError(msg.str());
  }
}

// Pre-activations of every layer (hidden and output).
std::vector<Vec> preactivations(const Network& net, const Vec& x) {
  std::vector<Vec> pre;
  pre.reserve(net.layers.size());
  Vec a = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    Vec u = layer.weight * a + layer.bias;
    if (i + 1 < net.layers.size()) a = u.cwiseMax(0.0);
    pre.push_back(std::move(u));
  }
  return pre;
}

}  // namespace

Vec forward(const Network& net, const Vec& x) {
  check_input(net, x);
  Vec a = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    Vec u = layer.weight * a + layer.bias;
    a = (i + 1 < net.layers.size()) ? Vec(u.cwiseMax(0.0)) : u;
  }
  return a;
}

Vec hidden_preactivations(const Network& net, const Vec& x) {
  check_input(net, x);
  const auto pre = preactivations(net, x);
  Vec out(net.spec.hidden_neuron_count());
  Eigen::Index k = 0;
  for (std::size_t i = 0; i + 1 < pre.size(); ++i) {
    out.segment(k, pre[i].size()) = pre[i];
    k += pre[i].size();
  }
  return out;
}

Vec input_vjp(const Network& net, const Vec& x, const Vec& logit_weights) {
  check_input(net, x);
  if (logit_weights.size() != net.output_dim()) {
    throw DataError("logit weight vector has wrong dimension");
  }
  const auto pre = preactivations(net, x);
  Vec g = logit_weights;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    if (i + 1 < net.layers.size()) {
      for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (!(pre[i][j] > 0.0)) g[j] = 0.0;
      }
    }
    g = net.layers[i].weight.transpose() * g;
  }
  return g;
}

Vec grad_input(const Network& net, const Vec& x, int logit_index) {
  if (logit_index < 0 || logit_index >= net.output_dim()) {
    throw ConfigError("logit index out of range");
  }
  Vec e = Vec::Zero(net.output_dim());
  e[logit_index] = 1.0;
  return input_vjp(net, x, e);
}

ActivationPattern activation_pattern(const Network& net, const Vec& x) {
  const Vec u = hidden_preactivations(net, x);
  ActivationPattern p;
  p.bits.resize(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) p.bits[i] = u[i] > 0.0;
  return p;
}

LocalLinearMap local_linear_map(const Network& net, const Vec& x) {
  const auto pre = preactivations(net, x);
  // Compose the affine maps layer by layer with the region's masks applied.
  Mat a = net.layers[0].weight;
  Vec c = net.layers[0].bias;
  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    for (Eigen::Index j = 0; j < pre[i - 1].size(); ++j) {
      if (!(pre[i - 1][j] > 0.0)) {
        a.row(j).setZero();
        c[j] = 0.0;
      }
    }
    a = net.layers[i].weight * a;
    c = net.layers[i].weight * c + net.layers[i].bias;
  }
  return {a, c};
}

Vec penultimate(const Network& net, const Vec& x) {
  check_input(net, x);
  Vec a = x;
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    a = (net.layers[i].weight * a + net.layers[i].bias).cwiseMax(0.0);
  }
  return a;
}

Mat penultimate_jacobian(const Network& net, const Vec& x) {
  check_input(net, x);
  const auto pre = preactivations(net, x);
  Mat jac = Mat::Identity(net.input_dim(), net.input_dim());
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    jac = net.layers[i].weight * jac;
    for (Eigen::Index j = 0; j < pre[i].size(); ++j) {
      if (!(pre[i][j] > 0.0)) jac.row(j).setZero();
    }
  }
  return jac;
}

int predict(const Network& net, const Vec& x) {
  const Vec logits = forward(net, x);
  if (logits.size() == 1) return logits[0] > 0.0 ? 1 : 0;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace cfstab
