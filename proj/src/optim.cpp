#include "dimsel/optim.hpp"

#include <cmath>
#include <numbers>

namespace dimsel {

AdamW::AdamW(Eigen::Index size, AdamWConfig cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void AdamW::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad,
                 double lr) {
  ++t_;
  const double t = static_cast<double>(t_);
  params *= 1.0 - lr * cfg_.weight_decay;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
  params.array() -= lr * (m_.array() / bias1) / ((v_.array() / bias2).sqrt() + cfg_.eps);
}

double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return base;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace dimsel
