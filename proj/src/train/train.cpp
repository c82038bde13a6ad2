#include "falcon/train/train.hpp"

#include "falcon/nn/optim.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace falcon::train {

std::vector<size_t> FrameStore::lengths() const {
  std::vector<size_t> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(e.steps());
  return out;
}

Matrix episode_pixels(const data::Episode& e, const coordinator::CoordinatorConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(e.size());
  const Eigen::Index p = static_cast<Eigen::Index>(cfg.pooled()) * cfg.pooled() * 3;
  Matrix px(n * coordinator::kViews, p);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& s = e.steps[static_cast<size_t>(k)];
    px.row(k * 3 + 0) = coordinator::preprocess(s.wrist, cfg);
    px.row(k * 3 + 1) = coordinator::preprocess(s.body, cfg);
    px.row(k * 3 + 2) = coordinator::preprocess(s.head, cfg);
  }
  return px;
}

FrameStore build_frame_store(const coordinator::Coordinator& coord,
                             const std::vector<const data::Episode*>& episodes,
                             const data::ActionNormalizers& norms) {
  FrameStore store;
  store.has_pixels = !coord.config().freeze_image;
  nn::NoGradGuard guard;
  for (const data::Episode* e : episodes) {
    EpisodeCache c;
    const Matrix px = episode_pixels(*e, coord.config());
    // Chunked so the im2col buffers stay small.
    constexpr Eigen::Index kChunk = 192;
    c.views.resize(px.rows(), coord.config().embed_dim);
    for (Eigen::Index r = 0; r < px.rows(); r += kChunk) {
      const Eigen::Index len = std::min(kChunk, px.rows() - r);
      c.views.middleRows(r, len) = coord.view_embeddings(nn::constant(px.middleRows(r, len))).value();
    }
    if (store.has_pixels) c.pixels = px.cast<float>();
    c.proprio.resize(static_cast<Eigen::Index>(e->size()), world::kProprioDim);
    for (size_t k = 0; k < e->size(); ++k) {
      for (int i = 0; i < world::kProprioDim; ++i) {
        c.proprio(static_cast<Eigen::Index>(k), i) = e->steps[k].proprio[static_cast<size_t>(i)];
      }
    }
    c.arm = norms.arm.apply(data::arm_rows(*e));
    c.base = norms.base.apply(data::base_rows(*e));
    store.episodes.push_back(std::move(c));
  }
  return store;
}

model::Batch make_batch(const FrameStore& store, const data::WindowDataset& ds,
                        const std::vector<size_t>& samples) {
  const int t = ds.t_obs(), h = ds.horizon();
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  if (store.episodes.empty()) throw std::invalid_argument("make_batch: empty frame store");
  const Eigen::Index d = store.episodes.front().views.cols();
  model::Batch b;
  b.samples = static_cast<int>(n);
  b.views.resize(n * t * 3, d);
  if (store.has_pixels) b.pixels.resize(n * t * 3, store.episodes.front().pixels.cols());
  b.proprio.resize(n * t, world::kProprioDim);
  b.arm_chunks.resize(n * h, data::kArmActionDim);
  b.base_chunks.resize(n * h, data::kBaseActionDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const size_t s = samples[static_cast<size_t>(i)];
    const EpisodeCache& c = store.episodes.at(ds.at(s).episode);
    for (int k = 0; k < t; ++k) {
      const Eigen::Index step = static_cast<Eigen::Index>(ds.obs_step(s, k));
      const Eigen::Index row = i * t + k;
      b.views.middleRows(row * 3, 3) = c.views.middleRows(step * 3, 3);
      if (store.has_pixels) b.pixels.middleRows(row * 3, 3) = c.pixels.middleRows(step * 3, 3).cast<double>();
      b.proprio.row(row) = c.proprio.row(step);
    }
    for (int k = 0; k < h; ++k) {
      const Eigen::Index step = static_cast<Eigen::Index>(ds.action_step(s, k));
      b.arm_chunks.row(i * h + k) = c.arm.row(step);
      b.base_chunks.row(i * h + k) = c.base.row(step);
    }
  }
  return b;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}, {"lr_min", c.lr_min},
       {"warmup", c.warmup}, {"weight_decay", c.weight_decay}, {"max_grad_norm", c.max_grad_norm},
       {"seed", c.seed}, {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (const auto& [k, v] : j.items()) {
    if (k == "steps") c.steps = v.get<int>();
    else if (k == "batch") c.batch = v.get<int>();
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "lr_min") c.lr_min = v.get<double>();
    else if (k == "warmup") c.warmup = v.get<int>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "max_grad_norm") c.max_grad_norm = v.get<double>();
    else if (k == "seed") c.seed = v.get<uint64_t>();
    else if (k == "log_every") c.log_every = v.get<int>();
    else throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
}

double learning_rate(const TrainConfig& c, int step) {
  if (c.warmup > 0 && step < c.warmup) return c.lr * (step + 1) / c.warmup;
  const int span = std::max(1, c.steps - c.warmup);
  const double u = std::clamp(static_cast<double>(step - c.warmup) / span, 0.0, 1.0);
  return c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + std::cos(M_PI * u));
}

std::vector<TrainRecord> train_model(model::FalconModel& m, const FrameStore& store,
                                     const TrainConfig& cfg,
                                     const std::function<void(const TrainRecord&)>& on_log) {
  if (cfg.steps < 1 || cfg.batch < 2) throw std::invalid_argument("train: need steps >= 1 and batch >= 2");
  const data::WindowDataset ds(store.lengths(), m.config().t_obs, m.config().horizon);
  if (ds.size() == 0) throw std::invalid_argument("train: no episode is long enough for one window");
  if (ds.skipped() > 0) spdlog::warn("train: skipped {} episodes shorter than one window", ds.skipped());

  const nn::ParameterSet params = m.trainable_parameters();
  nn::Adam opt(params.vars(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay,
                               .max_grad_norm = cfg.max_grad_norm});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, ds.size() - 1);
  std::vector<TrainRecord> records;
  TrainRecord acc;
  int acc_n = 0;
  std::vector<size_t> idx(static_cast<size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& i : idx) i = pick(rng);
    const model::Batch b = make_batch(store, ds, idx);
    opt.zero_grad();
    const model::Losses l = m.losses(b, rng);
    l.total.backward();
    opt.set_lr(learning_rate(cfg, step));
    opt.step();

    acc.total += l.total.item();
    acc.arm += l.arm.item();
    acc.base += l.base.item();
    if (l.coord.defined()) acc.coord += l.coord.item();
    acc.grad_norm += opt.last_grad_norm();
    ++acc_n;
    const bool last = step + 1 == cfg.steps;
    if ((cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) || last) {
      TrainRecord r;
      r.step = step + 1;
      r.total = acc.total / acc_n;
      r.arm = acc.arm / acc_n;
      r.base = acc.base / acc_n;
      r.coord = acc.coord / acc_n;
      r.grad_norm = acc.grad_norm / acc_n;
      r.lr = opt.lr();
      records.push_back(r);
      if (on_log) on_log(r);
      acc = {};
      acc_n = 0;
    }
  }
  return records;
}

void write_metrics_csv(const std::vector<TrainRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,total,arm,base,coord,lr,grad_norm\n";
  for (const auto& r : records) {
    out << r.step << ',' << r.total << ',' << r.arm << ',' << r.base << ',' << r.coord << ','
        << r.lr << ',' << r.grad_norm << '\n';
  }
}

std::vector<coordinator::CaptionFrame> caption_frames(const world::WorldConfig& wc,
                                                      const coordinator::CoordinatorConfig& cc,
                                                      const std::vector<const data::Episode*>& episodes,
                                                      int stride) {
  if (stride < 1) throw std::invalid_argument("caption_frames: stride must be >= 1");
  std::vector<coordinator::CaptionFrame> out;
  for (const data::Episode* e : episodes) {
    for (size_t k = 0; k < e->size(); k += static_cast<size_t>(stride)) {
      const auto& s = e->steps[k];
      coordinator::CaptionFrame f;
      f.pixels.resize(3, static_cast<Eigen::Index>(cc.pooled()) * cc.pooled() * 3);
      f.pixels.row(0) = coordinator::preprocess(s.wrist, cc);
      f.pixels.row(1) = coordinator::preprocess(s.body, cc);
      f.pixels.row(2) = coordinator::preprocess(s.head, cc);
      f.facts = coordinator::scene_facts(wc, world::decode_state(s.state));
      out.push_back(std::move(f));
    }
  }
  return out;
}

}  // namespace falcon::train
