#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value is a 2-D matrix; batches are stacked rows.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace falcon::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  static Var scalar(double v);
  static Var from_node(std::shared_ptr<detail::Node> node) { return Var(std::move(node)); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero-sized until a backward pass reaches this node.
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  // Seeds d(this)/d(this) = 1; this must be 1x1.
  void backward() const;
  void zero_grad();

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);

// --- arithmetic -----------------------------------------------------------
// add/sub/mul broadcast b when it is 1x1, a 1xC row or an Rx1 column.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

// --- elementwise nonlinearities ---------------------------------------------
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var minimum(const Var& a, const Var& b);
// Gradient is passed only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);

// --- reductions -------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
// Rx C -> R x 1
Var row_sum(const Var& a);
// Averages each run of `group` consecutive rows: (G*group) x C -> G x C.
Var group_mean_rows(const Var& a, Eigen::Index group);
Var mse(const Var& prediction, const Var& target);

// --- shape ------------------------------------------------------------------
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
// Row-major reinterpretation; total size must match.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
// Repeats each row `times` times consecutively: R x C -> (R*times) x C.
Var repeat_rows(const Var& a, Eigen::Index times);
// Gathers rows by index (repeats allowed); the gradient scatter-adds back.
Var select_rows(const Var& a, std::span<const Eigen::Index> rows);

// --- row-wise normalizations ------------------------------------------------
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);
Var layer_norm_rows(const Var& a, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// --- blocked batch ops (rows grouped into blocks of `block` tokens) ----------
// Y_b = M X_b for every block; M is block x block, X is (nb*block) x C.
Var block_mix(const Var& x, const Var& m, Eigen::Index block);
// S_b = A_b B_b^T, stacked to (nb*block) x block.
Var block_matmul_nt(const Var& a, const Var& b, Eigen::Index block);
// Y_b = S_b V_b where S is (nb*block) x block.
Var block_matmul(const Var& s, const Var& v, Eigen::Index block);

// --- convolution helpers ------------------------------------------------------
struct ConvGeometry {
  int height = 0;
  int width = 0;
  int channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return kernel * kernel * channels; }
};

// N x (H*W*C) images (HWC) -> (N*OH*OW) x (k*k*C) patches.
Var im2col(const Var& images, const ConvGeometry& g);

// --- lookup -----------------------------------------------------------------
// Row i of the result is the mean of table rows listed in bags[i].
Var embedding_bag_mean(const Var& table, const std::vector<std::vector<int>>& bags);

}  // namespace falcon::nn
