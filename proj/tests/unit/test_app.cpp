#include "falcon/app/commands.hpp"
#include "falcon/nn/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace falcon;
using namespace falcon::app;
namespace fs = std::filesystem;

namespace {

fs::path source_config(const std::string& name) { return fs::path(FALCON_SOURCE_DIR) / "configs" / name; }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("falcon_app_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(RunConfig, DefaultLoadsAndValidates) {
  const RunConfig c = load_run_config(source_config("default.json"));
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.collect.episodes, 50);
  EXPECT_DOUBLE_EQ(c.model.delta, 0.1);
  EXPECT_DOUBLE_EQ(c.model.coord.tau, 0.1);
  EXPECT_TRUE(fs::exists(c.prompt_path(world::TaskId::kTask2)));
}

TEST(RunConfig, ExtendsMergesParent) {
  const RunConfig c = load_run_config(source_config("smoke.json"));
  EXPECT_EQ(c.collect.episodes, 6);
  EXPECT_EQ(c.model.width, 32);
  // Inherited from default.json.
  EXPECT_EQ(c.model.horizon, 8);
}

TEST(RunConfig, OverridesAndUnknownKeys) {
  const RunConfig c = load_run_config(source_config("default.json"), {"train.steps=7", "eval.task=\"task1\""});
  EXPECT_EQ(c.train.steps, 7);
  EXPECT_EQ(c.eval.task, world::TaskId::kTask1);
  EXPECT_THROW(load_run_config(source_config("default.json"), {"train.nonexistent=1"}), std::invalid_argument);
  nlohmann::json j = load_config_json(source_config("default.json"));
  j["bogus"] = 1;
  EXPECT_THROW(RunConfig::from_json(j, source_config("")), std::invalid_argument);
  EXPECT_ANY_THROW(apply_override(j, "missing_equals"));
}

TEST(RunConfig, JsonRoundTripAndHash) {
  const RunConfig a = load_run_config(source_config("default.json"));
  const RunConfig b = RunConfig::from_json(a.to_json(), source_config(""));
  EXPECT_EQ(a.hash(), b.hash());
  const RunConfig c = load_run_config(source_config("default.json"), {"seed=5"});
  EXPECT_NE(a.hash(), c.hash());
  // The dataset hash only covers world and expert settings.
  EXPECT_EQ(data_hash(a), data_hash(c));
  const RunConfig d = load_run_config(source_config("default.json"), {"expert.base_noise=0.123"});
  EXPECT_NE(data_hash(a), data_hash(d));
}

TEST(RunConfig, RejectsInvalidValues) {
  EXPECT_ANY_THROW(load_run_config(source_config("default.json"), {"model.delta=-1"}));
  EXPECT_ANY_THROW(load_run_config(source_config("default.json"), {"serve.mode=\"none\""}));
}

class SmokePipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("pipeline_" + std::to_string(::getpid())));
    cfg_ = new RunConfig(load_run_config(source_config("smoke.json")));
    cmd_collect(*cfg_, *root_ / "data", false);
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete root_;
  }
  static RunConfig with(std::vector<std::string> overrides) {
    return load_run_config(source_config("smoke.json"), overrides);
  }
  static fs::path* root_;
  static RunConfig* cfg_;
};
fs::path* SmokePipeline::root_ = nullptr;
RunConfig* SmokePipeline::cfg_ = nullptr;

TEST_F(SmokePipeline, CollectRefusesOverwrite) {
  EXPECT_THROW(cmd_collect(*cfg_, *root_ / "data", false), std::runtime_error);
  const Dataset ds = load_dataset(*cfg_, *root_ / "data");
  EXPECT_EQ(ds.episodes.size(), 6u);
}

TEST_F(SmokePipeline, TrainingLossDecreases) {
  const auto out = cmd_train(*cfg_, *root_ / "data", model::Variant::kFalcon, *root_ / "train");
  ASSERT_GE(out.metrics.size(), 4u);
  const auto& m = out.metrics;
  EXPECT_LT(m[m.size() - 1].total + m[m.size() - 2].total, m[0].total + m[1].total);
  EXPECT_TRUE(fs::exists(*root_ / "train" / kBundleFile));
  EXPECT_TRUE(fs::exists(*root_ / "train" / "metrics.csv"));
  const auto loaded = load_bundle(*cfg_, *root_ / "train" / kBundleFile);
  EXPECT_DOUBLE_EQ(loaded->config().effective_delta(), 0.1);
}

TEST_F(SmokePipeline, NoClBundleHasZeroDelta) {
  const RunConfig c = with({"train.steps=10"});
  const auto out = cmd_train(c, *root_ / "data", model::Variant::kNoCl, *root_ / "no_cl");
  EXPECT_EQ(out.model->config().variant, model::Variant::kNoCl);
  const auto loaded = load_bundle(c, *root_ / "no_cl" / kBundleFile);
  EXPECT_EQ(loaded->config().effective_delta(), 0.0);
  for (const auto& r : out.metrics) EXPECT_EQ(r.coord, 0.0);
}

TEST_F(SmokePipeline, TrainingIsDeterministic) {
  const RunConfig c = with({"train.steps=30", "train.log_every=5"});
  cmd_train(c, *root_ / "data", model::Variant::kFalcon, *root_ / "det_a");
  cmd_train(c, *root_ / "data", model::Variant::kFalcon, *root_ / "det_b");
  const std::string a = slurp(*root_ / "det_a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(*root_ / "det_b" / "metrics.csv"));
}

TEST_F(SmokePipeline, EvalCountsAndRepeatability) {
  const RunConfig c = with({"eval.trials_per_region=5", "eval.max_sim_steps=300"});
  const auto a = cmd_eval(c, "expert", std::nullopt, *root_ / "eval_a");
  EXPECT_EQ(a.size(), 15u);
  const auto b = cmd_eval(c, "expert", std::nullopt, *root_ / "eval_b");
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(*root_ / "eval_a" / "table.csv"), slurp(*root_ / "eval_b" / "table.csv"));
  EXPECT_THROW(cmd_eval(c, "policy", std::nullopt, *root_ / "eval_c"), std::invalid_argument);
  EXPECT_THROW(cmd_eval(c, "oracle", std::nullopt, *root_ / "eval_c"), std::invalid_argument);
}

TEST_F(SmokePipeline, EvalWithNoTrialsWritesEmptyResults) {
  const RunConfig c = with({"eval.trials_per_region=0"});
  const auto out = cmd_eval(c, "random", std::nullopt, *root_ / "eval_empty");
  EXPECT_TRUE(out.empty());
  EXPECT_TRUE(slurp(*root_ / "eval_empty" / "outcomes.jsonl").empty());
  EXPECT_TRUE(fs::exists(*root_ / "eval_empty" / "config.json"));
}
