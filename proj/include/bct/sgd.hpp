#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace bct {

struct LrStep {
  int epoch = 0;
  double rate = 0.0;
  bool operator==(const LrStep&) const = default;
};

// Plain SGD without momentum. The rate in effect at epoch e is the last
// schedule entry whose epoch is <= e; the first entry must start at 0.
struct SgdConfig {
  std::vector<LrStep> learning_rate_schedule{{0, 0.1}};
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  int epochs = 20;
  std::uint64_t rng_seed = 1;

  void validate() const;
  double rate_at(int epoch) const;
  bool operator==(const SgdConfig&) const = default;
};

// p <- p - lr(epoch) * (g + weight_decay * p)
void sgd_step(std::span<double> params, std::span<const double> grads, const SgdConfig& config,
              int epoch);

}  // namespace bct
