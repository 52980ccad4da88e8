#pragma once

#include "dimsel/types.hpp"

#include <cstddef>

namespace dimsel {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay, one instance per parameter block.
class AdamW {
 public:
  AdamW(Eigen::Index size, AdamWConfig cfg);

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad,
            double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::size_t t_ = 0;
};

// Cosine annealing from `base` at step 0 to exactly 0 at step total-1, no
// warmup or restarts. A single-step schedule stays at `base`.
double cosine_lr(double base, std::size_t step, std::size_t total_steps);

}  // namespace dimsel
