#pragma once

// Central finite-difference check of reverse-mode gradients.

#include "falcon/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace falcon::testing {

struct GradCheck {
  double rel_error = 0.0;  // ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)
  double max_abs = 0.0;
  long checked = 0;
};

// `loss` must rebuild the graph from the current parameter values each call.
inline GradCheck check_gradients(std::vector<nn::Var> params, const std::function<nn::Var()>& loss,
                                 double eps = 1e-6) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  double diff2 = 0.0, ad2 = 0.0, fd2 = 0.0;
  GradCheck r;
  for (auto& p : params) {
    const nn::Matrix g = p.grad().size() ? p.grad() : nn::Matrix::Zero(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        double& x = p.mutable_value()(i, j);
        const double x0 = x;
        double up, down;
        {
          nn::NoGradGuard ng;
          x = x0 + eps;
          up = loss().item();
          x = x0 - eps;
          down = loss().item();
        }
        x = x0;
        const double fd = (up - down) / (2 * eps);
        const double d = g(i, j) - fd;
        diff2 += d * d;
        ad2 += g(i, j) * g(i, j);
        fd2 += fd * fd;
        r.max_abs = std::max(r.max_abs, std::abs(d));
        ++r.checked;
      }
    }
  }
  const double denom = std::max(std::sqrt(std::max(ad2, fd2)), 1e-300);
  r.rel_error = std::sqrt(diff2) / denom;
  return r;
}

}  // namespace falcon::testing
