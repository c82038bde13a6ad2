#include "falcon/data/dataset.hpp"
#include "falcon/data/episode.hpp"

#include "falcon/common/bytes.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace falcon;
using namespace falcon::data;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("falcon_unit_" + name);
  std::filesystem::remove_all(p);
  return p;
}

RecordOptions short_record(int steps) {
  RecordOptions o;
  o.max_steps = steps;
  o.config_hash = "abc";
  o.timestamp = "2026-01-01T00:00:00Z";
  return o;
}

}  // namespace

TEST(Actions, CommandConversions) {
  world::ArmCommand a;
  a.ee_target = world::Vec2(0.3, -0.1);
  a.gripper_close = true;
  const ArmAction v = to_action(a);
  EXPECT_EQ(v, (ArmAction{0.3, -0.1, 1.0}));
  EXPECT_TRUE(to_arm_command({0, 0, 0.51}).gripper_close);
  EXPECT_FALSE(to_arm_command({0, 0, 0.49}).gripper_close);
  const llc::BaseCommand b{0.1, 0.2, 0.3, 0.04, 0.25};
  const BaseAction bv = to_action(b);
  const llc::BaseCommand back = to_base_command(bv);
  EXPECT_EQ(back.vx, 0.1);
  EXPECT_EQ(back.height, 0.25);
}

TEST(Episode, RecordIsDeterministicAndRoundTrips) {
  const world::World w;
  const Episode a = record_episode(w, world::TaskId::kTask2, world::Region::kCenter, 3, short_record(12));
  const Episode b = record_episode(w, world::TaskId::kTask2, world::Region::kCenter, 3, short_record(12));
  EXPECT_EQ(a, b);
  ASSERT_GT(a.size(), 0u);
  EXPECT_EQ(a.header.config_hash, "abc");
  EXPECT_DOUBLE_EQ(a.header.step_dt, 0.1);
  const auto bytes = encode_episode(a);
  EXPECT_EQ(decode_episode(bytes), a);
  const auto path = scratch("episode") / "ep.bin";
  save_episode(a, path);
  EXPECT_EQ(load_episode(path), a);
}

TEST(Episode, TruncationAndVersionAreRejected) {
  const world::World w;
  const Episode e = record_episode(w, world::TaskId::kTask1, world::Region::kLeft, 1, short_record(4));
  auto bytes = encode_episode(e);
  const std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  EXPECT_THROW(decode_episode(cut), FormatError);
  Episode bad = e;
  bad.header.format_version = kEpisodeFormatVersion + 1;
  EXPECT_THROW(decode_episode(encode_episode(bad)), FormatError);
}

TEST(Episode, ExpertCompletesTask2) {
  const world::World w;
  const Episode e = record_episode(w, world::TaskId::kTask2, world::Region::kCenter, 0, short_record(600));
  EXPECT_TRUE(e.header.success);
  EXPECT_LT(e.size(), 600u);
}

TEST(WindowDataset, CountsAndAlignment) {
  const WindowDataset d({20}, 2, 8);
  EXPECT_EQ(d.size(), 11u);
  EXPECT_EQ(d.at(0), (SampleIndex{0, 0}));
  EXPECT_EQ(d.at(10), (SampleIndex{0, 10}));
  // The chunk starts right after the last observation step.
  EXPECT_EQ(d.obs_step(4, 1) + 1, d.action_step(4, 0));
  EXPECT_EQ(d.action_step(10, 7), 19u);
}

TEST(WindowDataset, SkipsShortEpisodes) {
  const WindowDataset d({5, 10, 12}, 2, 8);
  EXPECT_EQ(d.skipped(), 1u);
  EXPECT_EQ(d.size(), 1u + 3u);
  EXPECT_EQ(d.at(0).episode, 1u);
  EXPECT_THROW(WindowDataset({10}, 0, 8), std::invalid_argument);
}

TEST(Normalizers, ChunksStayInRange) {
  const world::World w;
  const Episode a = record_episode(w, world::TaskId::kTask2, world::Region::kCenter, 4, short_record(40));
  const Episode b = record_episode(w, world::TaskId::kTask2, world::Region::kRight, 5, short_record(40));
  const auto n = fit_action_normalizers({&a, &b});
  for (const Episode* e : {&a, &b}) {
    const nn::Matrix arm = n.arm.apply(arm_rows(*e)), base = n.base.apply(base_rows(*e));
    EXPECT_LE(arm.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
    EXPECT_LE(base.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
  EXPECT_THROW(fit_action_normalizers({}), std::invalid_argument);
}

TEST(Collect, RefusesOverwriteWithoutForce) {
  const world::World w;
  const auto out = scratch("collect");
  CollectOptions opt;
  opt.task = world::TaskId::kTask2;
  opt.seeds = {7};
  opt.threads = 1;
  opt.record = short_record(5);
  const auto m = collect(w, out, opt);
  EXPECT_EQ(m.seeds.size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(episode_path(out, opt.task, 7)));
  EXPECT_THROW(collect(w, out, opt), std::runtime_error);
  opt.force = true;
  EXPECT_NO_THROW(collect(w, out, opt));
}

TEST(Collect, ZeroEpisodesWritesEmptyManifest) {
  const world::World w;
  CollectOptions opt;
  opt.record = short_record(5);
  const auto m = collect(w, scratch("collect_empty"), opt);
  EXPECT_TRUE(m.seeds.empty());
  EXPECT_EQ(m.total_steps, 0u);
  const auto j = m.to_json();
  EXPECT_EQ(CollectionManifest::from_json(j).to_json(), j);
}
