#include "falcon/coordinator/captions.hpp"

#include "falcon/nn/optim.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace falcon::coordinator {

SceneFacts scene_facts(const world::WorldConfig& cfg, const world::WorldState& s) {
  SceneFacts f;
  const double dx = s.base.x - cfg.manip_pose.x;
  const double dy = s.base.y - cfg.manip_pose.y;
  const double dyaw = std::remainder(s.base.yaw - cfg.manip_pose.yaw, 2.0 * M_PI);
  if (std::abs(dx) <= 2.0 * cfg.manip_tol_x && std::abs(dy) <= 2.0 * cfg.manip_tol_y &&
      std::abs(dyaw) <= 2.0 * cfg.manip_tol_yaw) {
    f.location = LocationFact::kFront;
  } else if (std::hypot(dx, dy) <= 0.6) {
    f.location = LocationFact::kNear;
  } else {
    f.location = LocationFact::kFar;
  }
  if (s.drawer_fraction < cfg.drawer_closed_threshold) {
    f.drawer = DrawerFact::kClosed;
  } else if (s.drawer_fraction < 0.4) {
    f.drawer = DrawerFact::kPartlyOpen;
  } else {
    f.drawer = DrawerFact::kOpen;
  }
  switch (s.toy.attachment) {
    case world::ToyAttachment::kOnCabinet: f.toy = ToyFact::kOnCabinet; break;
    case world::ToyAttachment::kGrasped: f.toy = ToyFact::kInGripper; break;
    case world::ToyAttachment::kInDrawer: f.toy = ToyFact::kInDrawer; break;
    case world::ToyAttachment::kFree: f.toy = ToyFact::kOnFloor; break;
  }
  return f;
}

std::string fact_text(LocationFact f) {
  switch (f) {
    case LocationFact::kFar: return "the robot is far from the cabinet";
    case LocationFact::kNear: return "the robot is near the cabinet";
    case LocationFact::kFront: return "the robot is in front of the drawer";
  }
  return {};
}

std::string fact_text(DrawerFact f) {
  switch (f) {
    case DrawerFact::kClosed: return "the drawer is closed";
    case DrawerFact::kPartlyOpen: return "the drawer is partly open";
    case DrawerFact::kOpen: return "the drawer is open";
  }
  return {};
}

std::string fact_text(ToyFact f) {
  switch (f) {
    case ToyFact::kOnCabinet: return "the toy is on the cabinet";
    case ToyFact::kInGripper: return "the toy is in the gripper";
    case ToyFact::kInDrawer: return "the toy is in the drawer";
    case ToyFact::kOnFloor: return "the toy is on the floor";
  }
  return {};
}

std::string caption(const SceneFacts& facts, unsigned mask) {
  if ((mask & 7u) == 0) throw std::invalid_argument("caption: empty fact mask");
  std::string out;
  auto append = [&out](const std::string& t) {
    if (!out.empty()) out += " and ";
    out += t;
  };
  if (mask & 1u) append(fact_text(facts.location));
  if (mask & 2u) append(fact_text(facts.drawer));
  if (mask & 4u) append(fact_text(facts.toy));
  return out;
}

bool caption_matches(const SceneFacts& c, unsigned mask, const SceneFacts& frame) {
  if ((mask & 1u) && c.location != frame.location) return false;
  if ((mask & 2u) && c.drawer != frame.drawer) return false;
  if ((mask & 4u) && c.toy != frame.toy) return false;
  return true;
}

namespace {

constexpr double kMaskedLogit = -1e4;

// -mean_i log(sum_{j in P_i} softmax(logits)_ij)
Var multi_positive_nce(const Var& logits, const Matrix& positive) {
  Matrix offset = Matrix::Constant(positive.rows(), positive.cols(), kMaskedLogit);
  offset = (positive.array() > 0.5).select(Matrix::Zero(positive.rows(), positive.cols()), offset);
  const Var pos = nn::logsumexp_rows(nn::add(logits, nn::constant(offset)));
  const Var all = nn::logsumexp_rows(logits);
  return nn::mean(nn::sub(all, pos));
}

}  // namespace

std::vector<CaptionPretrainRecord> pretrain_encoders(
    Coordinator& coord, const std::vector<CaptionFrame>& frames, const CaptionPretrainConfig& cfg,
    const std::function<void(const CaptionPretrainRecord&)>& on_step) {
  if (frames.empty()) throw std::invalid_argument("pretrain_encoders: no frames");
  if (cfg.batch < 2 || cfg.steps < 0 || !(cfg.tau > 0.0)) {
    throw std::invalid_argument("pretrain_encoders: invalid config");
  }
  nn::ParameterSet params;
  params.extend("", coord.image_parameters());
  params.extend("", coord.text_parameters());
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.max_grad_norm = 5.0;
  nn::Adam opt(params.vars(), acfg);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, frames.size() - 1);
  std::uniform_int_distribution<unsigned> pick_mask(1, 7);
  const Eigen::Index px = frames.front().pixels.cols();
  std::vector<CaptionPretrainRecord> curve;
  std::vector<SceneFacts> facts(static_cast<size_t>(cfg.batch));
  std::vector<unsigned> masks(static_cast<size_t>(cfg.batch));
  std::vector<std::string> texts(static_cast<size_t>(cfg.batch));
  Matrix images(static_cast<Eigen::Index>(cfg.batch) * kViews, px);

  for (int step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) {
      const CaptionFrame& fr = frames[pick(rng)];
      images.middleRows(static_cast<Eigen::Index>(b) * kViews, kViews) = fr.pixels;
      facts[b] = fr.facts;
      masks[b] = pick_mask(rng);
      texts[b] = caption(fr.facts, masks[b]);
    }
    Matrix positive(cfg.batch, cfg.batch);
    for (int i = 0; i < cfg.batch; ++i) {
      for (int j = 0; j < cfg.batch; ++j) {
        positive(i, j) = caption_matches(facts[j], masks[j], facts[i]) ? 1.0 : 0.0;
      }
    }
    opt.zero_grad();
    const Var f = Coordinator::pooled_embedding(coord.view_embeddings(nn::constant(images)));
    const Var t = coord.text_embeddings(texts);
    const Var logits = nn::scale(nn::matmul_nt(f, t), 1.0 / cfg.tau);
    const Var loss = nn::scale(nn::add(multi_positive_nce(logits, positive),
                                       multi_positive_nce(nn::transpose(logits), positive.transpose())),
                               0.5);
    loss.backward();
    opt.step();
    const CaptionPretrainRecord rec{step, loss.item()};
    curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  return curve;
}

double caption_accuracy(const Coordinator& coord, const std::vector<CaptionFrame>& frames) {
  if (frames.empty()) return 0.0;
  nn::NoGradGuard guard;
  std::vector<SceneFacts> all;
  std::vector<std::string> texts;
  for (int l = 0; l < 3; ++l) {
    for (int d = 0; d < 3; ++d) {
      for (int t = 0; t < 4; ++t) {
        SceneFacts s{static_cast<LocationFact>(l), static_cast<DrawerFact>(d), static_cast<ToyFact>(t)};
        all.push_back(s);
        texts.push_back(caption(s, 7u));
      }
    }
  }
  const Matrix e = coord.text_embeddings(texts).value();
  int hits = 0;
  constexpr size_t kChunk = 256;
  for (size_t start = 0; start < frames.size(); start += kChunk) {
    const size_t n = std::min(kChunk, frames.size() - start);
    Matrix images(static_cast<Eigen::Index>(n) * kViews, frames[start].pixels.cols());
    for (size_t i = 0; i < n; ++i) {
      images.middleRows(static_cast<Eigen::Index>(i) * kViews, kViews) = frames[start + i].pixels;
    }
    const Matrix f =
        Coordinator::pooled_embedding(coord.view_embeddings(nn::constant(images))).value();
    const Matrix s = f * e.transpose();
    for (size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      s.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      if (all[static_cast<size_t>(best)] == frames[start + i].facts) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(frames.size());
}

}  // namespace falcon::coordinator
