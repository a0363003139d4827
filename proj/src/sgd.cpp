#include "bct/sgd.hpp"

#include <cmath>

#include "bct/errors.hpp"

namespace bct {

void SgdConfig::validate() const {
  if (learning_rate_schedule.empty()) throw InvalidArgument("empty learning rate schedule");
  if (learning_rate_schedule.front().epoch != 0) {
    throw InvalidArgument("learning rate schedule must start at epoch 0");
  }
  for (std::size_t i = 0; i < learning_rate_schedule.size(); ++i) {
    const auto& s = learning_rate_schedule[i];
    if (!(s.rate > 0.0) || !std::isfinite(s.rate)) {
      throw InvalidArgument("learning rates must be positive");
    }
    if (i > 0 && s.epoch <= learning_rate_schedule[i - 1].epoch) {
      throw InvalidArgument("learning rate schedule epochs must be strictly increasing");
    }
  }
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
}

double SgdConfig::rate_at(int epoch) const {
  double rate = learning_rate_schedule.front().rate;
  for (const auto& s : learning_rate_schedule) {
    if (s.epoch <= epoch) rate = s.rate;
  }
  return rate;
}

void sgd_step(std::span<double> params, std::span<const double> grads, const SgdConfig& config,
              int epoch) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step params/grads mismatch");
  const double lr = config.rate_at(epoch);
  const double wd = config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * (grads[i] + wd * params[i]);
  }
}

}  // namespace bct
