#include "falcon/nn/optim.hpp"

#include <cmath>

namespace falcon::nn {

Adam::Adam(std::vector<Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++step_count_;
  double sq = 0.0;
  for (const auto& p : params_) {
    if (p.requires_grad() && p.grad().size() != 0) sq += p.grad().squaredNorm();
  }
  last_grad_norm_ = std::sqrt(sq);
  double clip = 1.0;
  if (config_.max_grad_norm > 0.0 && last_grad_norm_ > config_.max_grad_norm) {
    clip = config_.max_grad_norm / last_grad_norm_;
  }
  if (config_.lr == 0.0) return;

  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.requires_grad() || p.grad().size() == 0) continue;
    const Matrix g = p.grad() * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    if (config_.weight_decay > 0.0) w *= (1.0 - config_.lr * config_.weight_decay);
    w.array() -= config_.lr * (m_[i].array() / bc1) /
                 ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace falcon::nn
