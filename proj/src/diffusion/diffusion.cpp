#include "falcon/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace falcon::diffusion {

std::string to_string(Subsystem s) { return s == Subsystem::kArm ? "arm" : "base"; }

Subsystem parse_subsystem(const std::string& s) {
  if (s == "arm") return Subsystem::kArm;
  if (s == "base") return Subsystem::kBase;
  throw std::invalid_argument("unknown subsystem '" + s + "'");
}

void PolicySpec::validate() const {
  if (horizon < 1 || t_obs < 1 || t_diff < 2) {
    throw std::invalid_argument("policy spec requires H >= 1, T_obs >= 1, T_diff >= 2");
  }
  if (action_dim < 1 || cond_dim < 1 || width < 1 || blocks < 0 || time_dim < 2 ||
      time_dim % 2 != 0) {
    throw std::invalid_argument("policy spec has invalid dimensions");
  }
}

void to_json(nlohmann::json& j, const PolicySpec& s) {
  j = {{"subsystem", to_string(s.subsystem)},
       {"action_dim", s.action_dim},
       {"cond_dim", s.cond_dim},
       {"horizon", s.horizon},
       {"t_obs", s.t_obs},
       {"t_diff", s.t_diff},
       {"schedule", s.schedule},
       {"width", s.width},
       {"blocks", s.blocks},
       {"time_dim", s.time_dim}};
}

void from_json(const nlohmann::json& j, PolicySpec& s) {
  s.subsystem = parse_subsystem(j.at("subsystem").get<std::string>());
  s.action_dim = j.at("action_dim").get<int>();
  s.cond_dim = j.at("cond_dim").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.t_obs = j.at("t_obs").get<int>();
  s.t_diff = j.at("t_diff").get<int>();
  s.schedule = j.at("schedule").get<std::string>();
  s.width = j.at("width").get<int>();
  s.blocks = j.at("blocks").get<int>();
  s.time_dim = j.at("time_dim").get<int>();
}

NoiseSchedule NoiseSchedule::make(int t_diff, const std::string& id) {
  if (t_diff < 2) throw std::invalid_argument("noise schedule needs at least 2 steps");
  NoiseSchedule s;
  s.betas.resize(t_diff);
  if (id == "cosine") {
    constexpr double kS = 0.008;
    auto f = [t_diff](double t) {
      const double x = (t / t_diff + kS) / (1.0 + kS) * M_PI / 2.0;
      return std::cos(x) * std::cos(x);
    };
    for (int t = 0; t < t_diff; ++t) {
      s.betas[t] = std::min(1.0 - f(t + 1) / f(t), 0.999);
    }
  } else if (id == "linear") {
    for (int t = 0; t < t_diff; ++t) {
      s.betas[t] = 1e-4 + (0.02 - 1e-4) * t / (t_diff - 1);
    }
  } else {
    throw std::invalid_argument("unknown noise schedule '" + id + "'");
  }
  s.alphas.resize(t_diff);
  s.alpha_bars.resize(t_diff);
  double prod = 1.0;
  for (int t = 0; t < t_diff; ++t) {
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

// --- normalizer -------------------------------------------------------------------

Normalizer Normalizer::fit(const Matrix& rows) {
  if (rows.rows() == 0 || rows.cols() == 0) throw std::invalid_argument("normalizer: empty data");
  if (!rows.allFinite()) throw std::invalid_argument("normalizer: non-finite data");
  Normalizer n;
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    n.lo_.push_back(rows.col(c).minCoeff());
    n.hi_.push_back(rows.col(c).maxCoeff());
  }
  return n;
}

Matrix Normalizer::apply(const Matrix& x) const {
  if (x.cols() != dim()) throw std::invalid_argument("normalizer: dimension mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double lo = lo_[c], hi = hi_[c];
    if (hi > lo) {
      y.col(c) = (2.0 * (x.col(c).array() - lo) / (hi - lo) - 1.0).matrix();
    } else {
      y.col(c).setZero();
    }
  }
  return y;
}

Matrix Normalizer::invert(const Matrix& x) const {
  if (x.cols() != dim()) throw std::invalid_argument("normalizer: dimension mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double lo = lo_[c], hi = hi_[c];
    if (hi > lo) {
      y.col(c) = ((x.col(c).array() + 1.0) * 0.5 * (hi - lo) + lo).matrix();
    } else {
      y.col(c).setConstant(lo);
    }
  }
  return y;
}

nlohmann::json Normalizer::to_json() const { return {{"lo", lo_}, {"hi", hi_}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n;
  n.lo_ = j.at("lo").get<std::vector<double>>();
  n.hi_ = j.at("hi").get<std::vector<double>>();
  if (n.lo_.size() != n.hi_.size()) throw std::invalid_argument("normalizer: lo/hi size mismatch");
  return n;
}

// --- denoiser -----------------------------------------------------------------------

Matrix timestep_embedding(const std::vector<int>& t, int dim) {
  Matrix e(static_cast<Eigen::Index>(t.size()), dim);
  const int half = dim / 2;
  for (size_t i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      e(static_cast<Eigen::Index>(i), k) = std::sin(t[i] * freq);
      e(static_cast<Eigen::Index>(i), half + k) = std::cos(t[i] * freq);
    }
  }
  return e;
}

TokenMixerDenoiser::TokenMixerDenoiser(const PolicySpec& spec, std::mt19937_64& rng)
    : spec_(spec),
      cond_in_(spec.cond_dim, spec.width, rng),
      time_mlp_(spec.time_dim, spec.width, spec.width, rng, nn::Activation::kSilu),
      action_in_(spec.action_dim, spec.width, rng),
      position_(nn::make_param(nn::uniform_init(spec.horizon, spec.width, 0.1, rng))),
      norm_out_(spec.width),
      action_out_(spec.width, spec.action_dim, rng) {
  spec_.validate();
  const int tokens = spec.horizon + 1;
  for (int b = 0; b < spec.blocks; ++b) {
    Block blk;
    blk.norm_mix = nn::LayerNorm(spec.width);
    blk.mix = nn::make_param(nn::uniform_init(tokens, tokens, 1.0 / std::sqrt(tokens), rng));
    blk.norm_mlp = nn::LayerNorm(spec.width);
    blk.mlp = nn::Mlp(spec.width, 2 * spec.width, spec.width, rng, nn::Activation::kSilu);
    blocks_.push_back(std::move(blk));
  }
}

Var TokenMixerDenoiser::predict(const Var& noisy, const std::vector<int>& t, const Var& cond) const {
  const Eigen::Index n = cond.rows();
  const Eigen::Index h = spec_.horizon;
  if (noisy.rows() != n * h || noisy.cols() != spec_.action_dim ||
      cond.cols() != spec_.cond_dim || static_cast<Eigen::Index>(t.size()) != n) {
    throw std::invalid_argument("denoiser: input shape mismatch");
  }
  const Var time = time_mlp_.forward(nn::constant(timestep_embedding(t, spec_.time_dim)));
  const Var c = nn::add(cond_in_.forward(cond), time);  // N x W

  Matrix tile = Matrix::Zero(n * h, h);
  for (Eigen::Index i = 0; i < n * h; ++i) tile(i, i % h) = 1.0;
  Var a = nn::add(action_in_.forward(noisy), nn::matmul(nn::constant(tile), position_));
  a = nn::add(a, nn::repeat_rows(c, h));

  // Interleave to [c_0, a_0..a_{H-1}, c_1, ...].
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<size_t>(n * (h + 1)));
  for (Eigen::Index i = 0; i < n; ++i) {
    order.push_back(i);
    for (Eigen::Index k = 0; k < h; ++k) order.push_back(n + i * h + k);
  }
  const Var parts[] = {c, a};
  Var x = nn::select_rows(nn::concat_rows(parts), order);

  for (const Block& b : blocks_) {
    x = nn::add(x, nn::block_mix(b.norm_mix.forward(x), b.mix, h + 1));
    x = nn::add(x, b.mlp.forward(b.norm_mlp.forward(x)));
  }

  std::vector<Eigen::Index> action_rows;
  action_rows.reserve(static_cast<size_t>(n * h));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < h; ++k) action_rows.push_back(i * (h + 1) + 1 + k);
  }
  return action_out_.forward(norm_out_.forward(nn::select_rows(x, action_rows)));
}

nn::ParameterSet TokenMixerDenoiser::parameters() const {
  nn::ParameterSet p;
  cond_in_.collect(p, "cond_in.");
  time_mlp_.collect(p, "time.");
  action_in_.collect(p, "action_in.");
  p.add("position", position_);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    blocks_[b].norm_mix.collect(p, pre + "norm_mix.");
    p.add(pre + "mix", blocks_[b].mix);
    blocks_[b].norm_mlp.collect(p, pre + "norm_mlp.");
    blocks_[b].mlp.collect(p, pre + "mlp.");
  }
  norm_out_.collect(p, "norm_out.");
  action_out_.collect(p, "action_out.");
  return p;
}

// --- policy -------------------------------------------------------------------------

DiffusionPolicy::DiffusionPolicy(PolicySpec spec, std::shared_ptr<Denoiser> denoiser)
    : spec_(std::move(spec)),
      schedule_(NoiseSchedule::make(spec_.t_diff, spec_.schedule)),
      denoiser_(std::move(denoiser)) {
  spec_.validate();
  if (!denoiser_) throw std::invalid_argument("diffusion policy needs a denoiser");
}

DiffusionPolicy DiffusionPolicy::make(const PolicySpec& spec, std::mt19937_64& rng) {
  return DiffusionPolicy(spec, std::make_shared<TokenMixerDenoiser>(spec, rng));
}

Var DiffusionPolicy::training_loss(const Var& cond, const Matrix& chunks,
                                   std::mt19937_64& rng) const {
  const Eigen::Index n = cond.rows();
  std::uniform_int_distribution<int> pick(0, spec_.t_diff - 1);
  std::vector<int> t(static_cast<size_t>(n));
  for (auto& v : t) v = pick(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix noise(chunks.rows(), chunks.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng);
  return training_loss(cond, chunks, t, noise);
}

Var DiffusionPolicy::training_loss(const Var& cond, const Matrix& chunks,
                                   const std::vector<int>& t, const Matrix& noise) const {
  const Eigen::Index n = cond.rows();
  const Eigen::Index h = spec_.horizon;
  if (chunks.rows() != n * h || chunks.cols() != spec_.action_dim || noise.rows() != chunks.rows() ||
      noise.cols() != chunks.cols() || static_cast<Eigen::Index>(t.size()) != n) {
    throw std::invalid_argument("training_loss: shape mismatch");
  }
  Matrix noisy(chunks.rows(), chunks.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (t[i] < 0 || t[i] >= spec_.t_diff) throw std::out_of_range("training_loss: timestep");
    const double ab = schedule_.alpha_bars[t[i]];
    noisy.middleRows(i * h, h) =
        std::sqrt(ab) * chunks.middleRows(i * h, h) + std::sqrt(1.0 - ab) * noise.middleRows(i * h, h);
  }
  const Var pred = denoiser_->predict(nn::constant(noisy), t, cond);
  return nn::mse(pred, nn::constant(noise));
}

Matrix DiffusionPolicy::sample_chunk(const Matrix& cond, std::mt19937_64& rng) const {
  nn::NoGradGuard guard;
  const Eigen::Index n = cond.rows();
  const Eigen::Index h = spec_.horizon;
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(n * h, spec_.action_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  const Var c = nn::constant(cond);
  const auto& ab = schedule_.alpha_bars;
  for (int t = spec_.t_diff - 1; t >= 0; --t) {
    const std::vector<int> ts(static_cast<size_t>(n), t);
    const Matrix eps = denoiser_->predict(nn::constant(x), ts, c).value();
    const double ab_t = ab[t];
    const double ab_prev = t > 0 ? ab[t - 1] : 1.0;
    const double beta = schedule_.betas[t];
    Matrix x0 = ((x - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t))
                    .cwiseMax(-kChunkClamp)
                    .cwiseMin(kChunkClamp);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(schedule_.alphas[t]) * (1.0 - ab_prev) / (1.0 - ab_t);
    x = c0 * x0 + ct * x;
    if (t > 0) {
      const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t));
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += sigma * gauss(rng);
    }
    if (!x.allFinite()) throw std::runtime_error("sample_chunk: non-finite sample");
  }
  return x.cwiseMax(-kChunkClamp).cwiseMin(kChunkClamp);
}

}  // namespace falcon::diffusion
