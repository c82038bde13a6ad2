#pragma once

#include "falcon/nn/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace falcon::nn {

// Ordered (name, parameter) pairs. Names are stable and used as checkpoint keys.
class ParameterSet {
 public:
  void add(std::string name, Var param);
  void extend(const std::string& prefix, const ParameterSet& other);

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;
  size_t count() const;  // scalar count
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

Var make_param(Matrix value);
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);

enum class Activation { kRelu, kTanh, kSilu, kNone };
Var activate(const Var& x, Activation act);

class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, bool bias = true);

  Var forward(const Var& x) const;
  void collect(ParameterSet& params, const std::string& prefix) const;
  Eigen::Index in_dim() const { return weight_.rows(); }
  Eigen::Index out_dim() const { return weight_.cols(); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;  // in x out
  Var bias_;    // 1 x out
  bool has_bias_ = true;
};

// in -> hidden -> out with a nonlinearity between the two layers.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, std::mt19937_64& rng,
      Activation act = Activation::kSilu);

  Var forward(const Var& x) const;
  void collect(ParameterSet& params, const std::string& prefix) const;
  Eigen::Index out_dim() const { return second_.out_dim(); }

 private:
  Linear first_;
  Linear second_;
  Activation act_ = Activation::kSilu;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim);

  Var forward(const Var& x) const;
  void collect(ParameterSet& params, const std::string& prefix) const;

 private:
  Var gain_;
  Var shift_;
};

}  // namespace falcon::nn
