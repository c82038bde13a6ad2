#include "falcon/nn/layers.hpp"

#include <cmath>

namespace falcon::nn {

void ParameterSet::add(std::string name, Var param) {
  items_.emplace_back(std::move(name), std::move(param));
}

void ParameterSet::extend(const std::string& prefix, const ParameterSet& other) {
  for (const auto& [name, var] : other.items()) items_.emplace_back(prefix + name, var);
}

std::vector<Var> ParameterSet::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.second);
  return out;
}

size_t ParameterSet::count() const {
  size_t n = 0;
  for (const auto& item : items_) n += static_cast<size_t>(item.second.value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& item : items_) item.second.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& item : items_) item.second.node()->requires_grad = on;
}

Var make_param(Matrix value) { return Var(std::move(value), true); }

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kTanh:
      return tanh(x);
    case Activation::kSilu:
      return silu(x);
    case Activation::kNone:
      return x;
  }
  return x;
}

Linear::Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, bool bias)
    : has_bias_(bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = make_param(uniform_init(in, out, bound, rng));
  if (has_bias_) bias_ = make_param(Matrix::Zero(1, out));
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, weight_);
  return has_bias_ ? add(y, bias_) : y;
}

void Linear::collect(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "weight", weight_);
  if (has_bias_) params.add(prefix + "bias", bias_);
}

Mlp::Mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, std::mt19937_64& rng,
         Activation act)
    : first_(in, hidden, rng), second_(hidden, out, rng), act_(act) {}

Var Mlp::forward(const Var& x) const {
  return second_.forward(activate(first_.forward(x), act_));
}

void Mlp::collect(ParameterSet& params, const std::string& prefix) const {
  first_.collect(params, prefix + "0.");
  second_.collect(params, prefix + "1.");
}

LayerNorm::LayerNorm(Eigen::Index dim)
    : gain_(make_param(Matrix::Ones(1, dim))), shift_(make_param(Matrix::Zero(1, dim))) {}

Var LayerNorm::forward(const Var& x) const {
  return add(mul(layer_norm_rows(x), gain_), shift_);
}

void LayerNorm::collect(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "gain", gain_);
  params.add(prefix + "shift", shift_);
}

}  // namespace falcon::nn
