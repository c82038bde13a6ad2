#include "falcon/nn/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace falcon::nn {

namespace detail {

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

Var make_result(Matrix value, std::vector<NodePtr> parents,
                std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) any = any || p->requires_grad;
  }
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var::from_node(std::move(node));
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              " and " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Broadcast::kSame:
      return b;
    case Broadcast::kScalar:
      return Matrix::Constant(rows, cols, b(0, 0));
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kCol:
      return b.replicate(1, cols);
  }
  return b;
}

Matrix reduce_to(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kScalar:
      return Matrix::Constant(1, 1, g.sum());
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
  }
  return g;
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Matrix out = a.value().unaryExpr(f);
  NodePtr pa = a.node();
  return make_result(out, {pa}, [pa, dfdx](detail::Node& self) {
    Matrix g = self.grad.cwiseProduct(pa->value.binaryExpr(self.value, dfdx));
    pa->accumulate(g);
  });
}

void check_block(Eigen::Index rows, Eigen::Index block, const char* op) {
  if (block <= 0 || rows % block != 0) {
    throw std::invalid_argument(std::string(op) + ": rows " + std::to_string(rows) +
                                " not divisible by block " + std::to_string(block));
  }
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v) { return Var(Matrix::Constant(1, 1, v)); }

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("item() on non-scalar Var");
  return node_->value(0, 0);
}

void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("backward() requires a scalar");
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix out = a.value() + expand(b.value(), kind, a.rows(), a.cols());
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb, kind](detail::Node& self) {
    pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(reduce_to(self.grad, kind));
  });
}

Var sub(const Var& a, const Var& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix out = a.value() - expand(b.value(), kind, a.rows(), a.cols());
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb, kind](detail::Node& self) {
    pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-reduce_to(self.grad, kind));
  });
}

Var mul(const Var& a, const Var& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix bx = expand(b.value(), kind, a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb},
                     [pa, pb, kind, bx = std::move(bx)](detail::Node& self) {
                       if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(bx));
                       if (pb->requires_grad) {
                         pb->accumulate(reduce_to(self.grad.cwiseProduct(pa->value), kind));
                       }
                     });
}

Var scale(const Var& a, double s) {
  NodePtr pa = a.node();
  return make_result(a.value() * s, {pa},
                     [pa, s](detail::Node& self) { pa->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  NodePtr pa = a.node();
  return make_result(a.value().array() + s, {pa},
                     [pa](detail::Node& self) { pa->accumulate(self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: column counts differ");
  Matrix out = a.value() * b.value().transpose();
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(self.grad.transpose() * pa->value);
  });
}

Var transpose(const Var& a) {
  NodePtr pa = a.node();
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {pa},
                     [pa](detail::Node& self) { pa->accumulate(self.grad.transpose()); });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var minimum(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("minimum: shape mismatch");
  }
  Matrix out = a.value().cwiseMin(b.value());
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb](detail::Node& self) {
    const auto a_wins = (pa->value.array() <= pb->value.array()).cast<double>();
    if (pa->requires_grad) pa->accumulate((self.grad.array() * a_wins).matrix());
    if (pb->requires_grad) pb->accumulate((self.grad.array() * (1.0 - a_wins)).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa, lo, hi](detail::Node& self) {
    const auto inside = ((pa->value.array() > lo) && (pa->value.array() < hi)).cast<double>();
    pa->accumulate((self.grad.array() * inside).matrix());
  });
}

Var sum(const Var& a) {
  NodePtr pa = a.node();
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {pa}, [pa](detail::Node& self) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  NodePtr pa = a.node();
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {pa}, [pa](detail::Node& self) {
    pa->accumulate(self.grad.replicate(1, pa->value.cols()));
  });
}

Var group_mean_rows(const Var& a, Eigen::Index group) {
  check_block(a.rows(), group, "group_mean_rows");
  const Eigen::Index groups = a.rows() / group;
  Matrix out(groups, a.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.row(g) = a.value().middleRows(g * group, group).colwise().mean();
  }
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa, group, groups](detail::Node& self) {
    Matrix g(pa->value.rows(), pa->value.cols());
    for (Eigen::Index i = 0; i < groups; ++i) {
      g.middleRows(i * group, group) =
          (self.grad.row(i) / static_cast<double>(group)).replicate(group, 1);
    }
    pa->accumulate(g);
  });
}

Var mse(const Var& prediction, const Var& target) {
  return mean(square(sub(prediction, target)));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    parents.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  return make_result(std::move(out), parents, [parents, offsets](detail::Node& self) {
    for (size_t i = 0; i < parents.size(); ++i) {
      if (parents[i]->requires_grad) {
        parents[i]->accumulate(self.grad.middleCols(offsets[i], parents[i]->value.cols()));
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    parents.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  return make_result(std::move(out), parents, [parents, offsets](detail::Node& self) {
    for (size_t i = 0; i < parents.size(); ++i) {
      if (parents[i]->requires_grad) {
        parents[i]->accumulate(self.grad.middleRows(offsets[i], parents[i]->value.rows()));
      }
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  NodePtr pa = a.node();
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {pa}, [pa, start, count](detail::Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside matrix");
  }
  NodePtr pa = a.node();
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {pa}, [pa, start, count](detail::Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa](detail::Node& self) {
    pa->accumulate(
        Eigen::Map<const Matrix>(self.grad.data(), pa->value.rows(), pa->value.cols()));
  });
}

Var repeat_rows(const Var& a, Eigen::Index times) {
  Matrix out(a.rows() * times, a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    out.middleRows(r * times, times) = a.value().row(r).replicate(times, 1);
  }
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa, times](detail::Node& self) {
    Matrix g(pa->value.rows(), pa->value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g.row(r) = self.grad.middleRows(r * times, times).colwise().sum();
    }
    pa->accumulate(g);
  });
}

Var select_rows(const Var& a, std::span<const Eigen::Index> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("select_rows: index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  NodePtr pa = a.node();
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {pa}, [pa, idx](detail::Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    pa->accumulate(g);
  });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa](detail::Node& self) {
    const Matrix& y = self.value;
    Matrix dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad - dot.replicate(1, y.cols()));
    pa->accumulate(g);
  });
}

Var logsumexp_rows(const Var& a) {
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out(r, 0) = m + std::log((a.value().row(r).array() - m).exp().sum());
  }
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa](detail::Node& self) {
    Matrix g(pa->value.rows(), pa->value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g.row(r) = (pa->value.row(r).array() - self.value(r, 0)).exp() * self.grad(r, 0);
    }
    pa->accumulate(g);
  });
}

Var log_softmax_rows(const Var& a) { return sub(a, logsumexp_rows(a)); }

Var layer_norm_rows(const Var& a, double eps) {
  const Eigen::Index n = a.cols();
  Matrix out(a.rows(), n);
  Matrix inv_std(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    out.row(r) = (a.value().row(r).array() - mu) * inv_std(r, 0);
  }
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa, inv_std, n](detail::Node& self) {
    const Matrix& xhat = self.value;
    Matrix g(xhat.rows(), n);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const auto dy = self.grad.row(r).array();
      const double mean_dy = dy.mean();
      const double mean_dy_x = (dy * xhat.row(r).array()).mean();
      g.row(r) = inv_std(r, 0) * (dy - mean_dy - xhat.row(r).array() * mean_dy_x);
    }
    pa->accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Matrix norms = a.value().rowwise().norm().cwiseMax(eps);
  Matrix out = a.value().array().colwise() / norms.col(0).array();
  NodePtr pa = a.node();
  return make_result(std::move(out), {pa}, [pa, norms](detail::Node& self) {
    const Matrix& y = self.value;
    Matrix dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (self.grad - y.cwiseProduct(dot.replicate(1, y.cols()))).array().colwise() /
               norms.col(0).array();
    pa->accumulate(g);
  });
}

Var block_mix(const Var& x, const Var& m, Eigen::Index block) {
  check_block(x.rows(), block, "block_mix");
  if (m.rows() != block || m.cols() != block) throw std::invalid_argument("block_mix: bad M");
  const Eigen::Index nb = x.rows() / block;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < nb; ++b) {
    out.middleRows(b * block, block).noalias() = m.value() * x.value().middleRows(b * block, block);
  }
  NodePtr px = x.node(), pm = m.node();
  return make_result(std::move(out), {px, pm}, [px, pm, block, nb](detail::Node& self) {
    if (px->requires_grad) {
      Matrix gx(px->value.rows(), px->value.cols());
      for (Eigen::Index b = 0; b < nb; ++b) {
        gx.middleRows(b * block, block).noalias() =
            pm->value.transpose() * self.grad.middleRows(b * block, block);
      }
      px->accumulate(gx);
    }
    if (pm->requires_grad) {
      Matrix gm = Matrix::Zero(block, block);
      for (Eigen::Index b = 0; b < nb; ++b) {
        gm.noalias() += self.grad.middleRows(b * block, block) *
                        px->value.middleRows(b * block, block).transpose();
      }
      pm->accumulate(gm);
    }
  });
}

Var block_matmul_nt(const Var& a, const Var& b, Eigen::Index block) {
  check_block(a.rows(), block, "block_matmul_nt");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("block_matmul_nt: shape mismatch");
  }
  const Eigen::Index nb = a.rows() / block;
  Matrix out(a.rows(), block);
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.middleRows(i * block, block).noalias() = a.value().middleRows(i * block, block) *
                                                 b.value().middleRows(i * block, block).transpose();
  }
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), {pa, pb}, [pa, pb, block, nb](detail::Node& self) {
    Matrix ga(pa->value.rows(), pa->value.cols());
    Matrix gb(pb->value.rows(), pb->value.cols());
    for (Eigen::Index i = 0; i < nb; ++i) {
      const auto gs = self.grad.middleRows(i * block, block);
      ga.middleRows(i * block, block).noalias() = gs * pb->value.middleRows(i * block, block);
      gb.middleRows(i * block, block).noalias() =
          gs.transpose() * pa->value.middleRows(i * block, block);
    }
    if (pa->requires_grad) pa->accumulate(ga);
    if (pb->requires_grad) pb->accumulate(gb);
  });
}

Var block_matmul(const Var& s, const Var& v, Eigen::Index block) {
  check_block(s.rows(), block, "block_matmul");
  if (s.cols() != block || s.rows() != v.rows()) {
    throw std::invalid_argument("block_matmul: shape mismatch");
  }
  const Eigen::Index nb = s.rows() / block;
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.middleRows(i * block, block).noalias() =
        s.value().middleRows(i * block, block) * v.value().middleRows(i * block, block);
  }
  NodePtr ps = s.node(), pv = v.node();
  return make_result(std::move(out), {ps, pv}, [ps, pv, block, nb](detail::Node& self) {
    Matrix gs(ps->value.rows(), ps->value.cols());
    Matrix gv(pv->value.rows(), pv->value.cols());
    for (Eigen::Index i = 0; i < nb; ++i) {
      const auto go = self.grad.middleRows(i * block, block);
      gs.middleRows(i * block, block).noalias() =
          go * pv->value.middleRows(i * block, block).transpose();
      gv.middleRows(i * block, block).noalias() =
          ps->value.middleRows(i * block, block).transpose() * go;
    }
    if (ps->requires_grad) ps->accumulate(gs);
    if (pv->requires_grad) pv->accumulate(gv);
  });
}

Var im2col(const Var& images, const ConvGeometry& g) {
  const int oh = g.out_height(), ow = g.out_width();
  if (images.cols() != static_cast<Eigen::Index>(g.height) * g.width * g.channels) {
    throw std::invalid_argument("im2col: image size does not match geometry");
  }
  const Eigen::Index n = images.rows();
  const int k = g.kernel, c = g.channels;
  Matrix out = Matrix::Zero(n * oh * ow, g.patch_size());
  const Matrix& x = images.value();
  for (Eigen::Index img = 0; img < n; ++img) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index row = (img * oh + oy) * ow + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            const Eigen::Index src = (static_cast<Eigen::Index>(iy) * g.width + ix) * c;
            out.row(row).segment((ky * k + kx) * c, c) = x.row(img).segment(src, c);
          }
        }
      }
    }
  }
  NodePtr pi = images.node();
  return make_result(std::move(out), {pi}, [pi, g, oh, ow, n, k, c](detail::Node& self) {
    Matrix gx = Matrix::Zero(pi->value.rows(), pi->value.cols());
    for (Eigen::Index img = 0; img < n; ++img) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index row = (img * oh + oy) * ow + ox;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.width) continue;
              const Eigen::Index dst = (static_cast<Eigen::Index>(iy) * g.width + ix) * c;
              gx.row(img).segment(dst, c) += self.grad.row(row).segment((ky * k + kx) * c, c);
            }
          }
        }
      }
    }
    pi->accumulate(gx);
  });
}

Var embedding_bag_mean(const Var& table, const std::vector<std::vector<int>>& bags) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(bags.size()), table.cols());
  for (size_t i = 0; i < bags.size(); ++i) {
    if (bags[i].empty()) continue;
    for (int idx : bags[i]) {
      if (idx < 0 || idx >= table.rows()) throw std::out_of_range("embedding index out of range");
      out.row(static_cast<Eigen::Index>(i)) += table.value().row(idx);
    }
    out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(bags[i].size());
  }
  NodePtr pt = table.node();
  return make_result(std::move(out), {pt}, [pt, bags](detail::Node& self) {
    Matrix g = Matrix::Zero(pt->value.rows(), pt->value.cols());
    for (size_t i = 0; i < bags.size(); ++i) {
      if (bags[i].empty()) continue;
      const double w = 1.0 / static_cast<double>(bags[i].size());
      for (int idx : bags[i]) g.row(idx) += w * self.grad.row(static_cast<Eigen::Index>(i));
    }
    pt->accumulate(g);
  });
}

}  // namespace falcon::nn
