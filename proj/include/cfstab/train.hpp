#pragma once

#include "cfstab/data.hpp"
#include "cfstab/nn.hpp"

namespace cfstab {

// Minibatch Adam on cross-entropy: sigmoid loss for single-logit heads,
// softmax loss otherwise. Minibatch order is a Fisher-Yates shuffle seeded
// by (config.seed, epoch), so the result is a pure function of the inputs.
Network train(Network net, const Dataset& dataset, const TrainConfig& config);

double accuracy(const Network& net, const Dataset& dataset);

}  // namespace cfstab
