#include "falcon/nn/checkpoint.hpp"
#include "falcon/nn/optim.hpp"

#include "falcon/common/bytes.hpp"

#include "../support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace falcon;
using namespace falcon::nn;

namespace {

Matrix randn(int r, int c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct OpCase {
  const char* name;
  std::function<Var(const Var&, const Var&)> fn;  // (a: 4x3, b: 4x3) -> scalar-reducible
};

}  // namespace

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  Var a(randn(4, 3, rng), true), b(randn(4, 3, rng), true);
  const Var probe = GetParam().fn(a, b);
  const Matrix w = randn(static_cast<int>(probe.rows()), static_cast<int>(probe.cols()), rng);
  const auto g = falcon::testing::check_gradients({a, b}, [&] { return sum(mul(GetParam().fn(a, b), constant(w))); });
  EXPECT_LE(g.rel_error, 1e-6) << GetParam().name;
}

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"add", [](const Var& a, const Var& b) { return add(a, b); }},
        OpCase{"sub_row_broadcast", [](const Var& a, const Var& b) { return sub(a, slice_rows(b, 0, 1)); }},
        OpCase{"mul", [](const Var& a, const Var& b) { return mul(a, b); }},
        OpCase{"mul_col_broadcast", [](const Var& a, const Var& b) { return mul(a, slice_cols(b, 1, 1)); }},
        OpCase{"matmul_nt", [](const Var& a, const Var& b) { return slice_cols(matmul_nt(a, b), 0, 3); }},
        OpCase{"matmul", [](const Var& a, const Var& b) { return matmul(a, transpose(slice_rows(b, 0, 3))); }},
        OpCase{"tanh", [](const Var& a, const Var&) { return nn::tanh(a); }},
        OpCase{"sigmoid", [](const Var& a, const Var&) { return sigmoid(a); }},
        OpCase{"silu", [](const Var& a, const Var&) { return silu(a); }},
        OpCase{"exp", [](const Var& a, const Var&) { return nn::exp(scale(a, 0.5)); }},
        OpCase{"log", [](const Var& a, const Var&) { return nn::log(add_scalar(square(a), 0.5)); }},
        OpCase{"softmax", [](const Var& a, const Var&) { return softmax_rows(a); }},
        OpCase{"log_softmax", [](const Var& a, const Var&) { return log_softmax_rows(a); }},
        OpCase{"logsumexp", [](const Var& a, const Var&) { return logsumexp_rows(a); }},
        OpCase{"layer_norm", [](const Var& a, const Var&) { return layer_norm_rows(a); }},
        OpCase{"l2_normalize", [](const Var& a, const Var&) { return l2_normalize_rows(a); }},
        OpCase{"row_sum", [](const Var& a, const Var& b) { return row_sum(mul(a, b)); }},
        OpCase{"group_mean", [](const Var& a, const Var&) { return group_mean_rows(a, 2); }},
        OpCase{"concat_cols", [](const Var& a, const Var& b) {
          std::vector<Var> p{slice_cols(a, 0, 1), slice_cols(b, 1, 2)};
          return concat_cols(p);
        }},
        OpCase{"concat_rows", [](const Var& a, const Var& b) {
          std::vector<Var> p{slice_rows(a, 0, 2), slice_rows(b, 2, 2)};
          return concat_rows(p);
        }},
        OpCase{"reshape", [](const Var& a, const Var&) { return reshape(square(a), 4, 3); }},
        OpCase{"repeat_rows", [](const Var& a, const Var&) { return slice_rows(repeat_rows(a, 2), 1, 4); }},
        OpCase{"select_rows", [](const Var& a, const Var&) {
          const std::vector<Eigen::Index> idx{3, 0, 3, 1};
          return select_rows(a, idx);
        }},
        OpCase{"block_mix", [](const Var& a, const Var& b) {
          return block_mix(a, slice_cols(slice_rows(b, 0, 2), 0, 2), 2);
        }},
        OpCase{"block_attention", [](const Var& a, const Var& b) {
          return block_matmul(softmax_rows(block_matmul_nt(a, b, 2)), b, 2);
        }},
        OpCase{"mse", [](const Var& a, const Var& b) { return mse(a, b); }}),
    [](const ::testing::TestParamInfo<OpCase>& i) { return std::string(i.param.name); });

TEST(Autodiff, Im2colAndEmbeddingGradients) {
  std::mt19937_64 rng(3);
  ConvGeometry g{.height = 4, .width = 4, .channels = 2, .kernel = 2, .stride = 2, .pad = 1};
  Var img(randn(2, 4 * 4 * 2, rng), true);
  Var table(randn(5, 3, rng), true);
  const Matrix w = randn(2 * g.out_height() * g.out_width(), g.patch_size(), rng);
  const auto gi = falcon::testing::check_gradients({img}, [&] { return sum(mul(im2col(img, g), constant(w))); });
  EXPECT_LE(gi.rel_error, 1e-6);
  const std::vector<std::vector<int>> bags{{0, 2}, {4}, {1, 1, 3}};
  const Matrix w2 = randn(3, 3, rng);
  const auto ge = falcon::testing::check_gradients({table},
                                           [&] { return sum(mul(embedding_bag_mean(table, bags), constant(w2))); });
  EXPECT_LE(ge.rel_error, 1e-6);
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  Var a(Matrix::Ones(2, 2), true);
  NoGradGuard ng;
  const Var b = mul(a, a);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Autodiff, BroadcastShapeMismatchThrows) {
  EXPECT_ANY_THROW(add(constant(Matrix::Ones(3, 2)), constant(Matrix::Ones(2, 3))));
}

TEST(Layers, MlpGradient) {
  std::mt19937_64 rng(8);
  Mlp mlp(5, 7, 3, rng);
  ParameterSet ps;
  mlp.collect(ps, "mlp.");
  const Matrix x = randn(6, 5, rng), y = randn(6, 3, rng);
  const auto g = falcon::testing::check_gradients(ps.vars(), [&] { return mse(mlp.forward(constant(x)), constant(y)); });
  EXPECT_LE(g.rel_error, 1e-6);
  EXPECT_EQ(ps.count(), static_cast<size_t>(5 * 7 + 7 + 7 * 3 + 3));
}

TEST(Adam, ReducesQuadratic) {
  Var p(Matrix::Constant(1, 3, 2.0), true);
  Adam opt({p}, {.lr = 0.1});
  for (int k = 0; k < 300; ++k) {
    opt.zero_grad();
    sum(square(p)).backward();
    opt.step();
  }
  EXPECT_LT(p.value().cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  Var p(Matrix::Constant(2, 2, 0.7), true);
  const Matrix before = p.value();
  Adam opt({p}, {.lr = 0.0});
  sum(square(p)).backward();
  opt.step();
  EXPECT_TRUE(p.value() == before);
}

TEST(Adam, ClipsGlobalNorm) {
  Var p(Matrix::Zero(1, 2), true);
  Adam opt({p}, {.lr = 1e-3, .max_grad_norm = 1.0});
  p.mutable_grad() = Matrix::Constant(1, 2, 30.0);
  opt.step();
  EXPECT_NEAR(opt.last_grad_norm(), std::sqrt(2.0) * 30.0, 1e-9);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  std::mt19937_64 rng(1);
  Linear l(3, 4, rng);
  ParameterSet ps;
  l.collect(ps, "lin.");
  const auto bytes = encode_checkpoint("test", {{"a", 1}}, ps);
  const Checkpoint c = decode_checkpoint(bytes);
  EXPECT_EQ(c.kind, "test");
  EXPECT_EQ(c.meta.at("a"), 1);
  EXPECT_TRUE(c.tensor("lin.weight") == l.weight().value());

  Linear other(3, 4, rng);
  ParameterSet po;
  other.collect(po, "lin.");
  assign(po, c);
  EXPECT_TRUE(other.weight().value() == l.weight().value());

  const std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(decode_checkpoint(cut), FormatError);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), FormatError);

  Linear wrong(4, 4, rng);
  ParameterSet pw;
  wrong.collect(pw, "lin.");
  EXPECT_ANY_THROW(assign(pw, c));
}
