#pragma once

// Ground-truth scene captions and contrastive pretraining of the image and text
// encoders. Phase prompts are written in the same vocabulary, so the phase head
// scores frames against text it was never trained on as a pair.

#include "falcon/coordinator/coordinator.hpp"

#include <functional>

namespace falcon::coordinator {

enum class LocationFact : uint8_t { kFar, kNear, kFront };
enum class DrawerFact : uint8_t { kClosed, kPartlyOpen, kOpen };
enum class ToyFact : uint8_t { kOnCabinet, kInGripper, kInDrawer, kOnFloor };

struct SceneFacts {
  LocationFact location = LocationFact::kFar;
  DrawerFact drawer = DrawerFact::kClosed;
  ToyFact toy = ToyFact::kOnCabinet;
  bool operator==(const SceneFacts&) const = default;
};

SceneFacts scene_facts(const world::WorldConfig& cfg, const world::WorldState& s);

std::string fact_text(LocationFact f);
std::string fact_text(DrawerFact f);
std::string fact_text(ToyFact f);

// mask bit 0 = location, bit 1 = drawer, bit 2 = toy; mask must be nonzero.
std::string caption(const SceneFacts& facts, unsigned mask);
// True when every fact selected by `mask` agrees.
bool caption_matches(const SceneFacts& caption_facts, unsigned mask, const SceneFacts& frame);

struct CaptionFrame {
  Matrix pixels;  // 3 x (s*s*3), view order
  SceneFacts facts;
};

struct CaptionPretrainConfig {
  int steps = 1500;
  int batch = 64;
  double lr = 1e-3;
  double tau = 0.07;
  uint64_t seed = 0;
};

struct CaptionPretrainRecord {
  int step = 0;
  double loss = 0.0;
};

// Symmetric multi-positive InfoNCE between pooled frame embeddings and sampled
// partial captions. Updates only the image and text encoders.
std::vector<CaptionPretrainRecord> pretrain_encoders(
    Coordinator& coord, const std::vector<CaptionFrame>& frames, const CaptionPretrainConfig& cfg,
    const std::function<void(const CaptionPretrainRecord&)>& on_step = {});

// Fraction of frames whose full three-fact caption scores highest among all 36.
double caption_accuracy(const Coordinator& coord, const std::vector<CaptionFrame>& frames);

}  // namespace falcon::coordinator
