#include "falcon/app/teleop.hpp"

#include "../support/teleop_driver.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace falcon;
using namespace falcon::app;
namespace fs = std::filesystem;
using std::chrono::milliseconds;

namespace {

// Next message of the given type, skipping state frames in between.
std::optional<nlohmann::json> next_of(TeleopClient& c, const std::string& type, milliseconds budget = milliseconds(3000)) {
  const auto end = std::chrono::steady_clock::now() + budget;
  while (std::chrono::steady_clock::now() < end) {
    auto m = c.receive(milliseconds(200));
    if (m && m->at("type") == type) return m;
  }
  return std::nullopt;
}

class TeleopProtocol : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = falcon::testing::teleop_test_config();
    out_ = fs::temp_directory_path() / ("falcon_teleop_" + std::to_string(::getpid()));
    fs::remove_all(out_);
    server_ = std::make_unique<TeleopServer>(
        cfg_, [this] { return std::make_shared<eval::ExpertSource>(cfg_.expert); }, out_);
    port_ = server_->start(0);
    client_.connect("127.0.0.1", port_);
  }
  void TearDown() override {
    client_.close();
    server_->stop();
  }
  void hello() {
    client_.send({{"type", "hello"}, {"payload", {{"protocol_version", kProtocolVersion}}}});
  }

  RunConfig cfg_;
  fs::path out_;
  std::unique_ptr<TeleopServer> server_;
  uint16_t port_ = 0;
  TeleopClient client_;
};

}  // namespace

TEST_F(TeleopProtocol, ResetFrameMatchesTask2Contract) {
  hello();
  client_.send({{"type", "reset"}, {"payload", {{"task", "task2"}, {"region", "center"}, {"seed", 3}}}});
  std::optional<nlohmann::json> frame;
  const auto end = std::chrono::steady_clock::now() + std::chrono::seconds(3);
  while (std::chrono::steady_clock::now() < end) {
    auto m = next_of(client_, "state");
    if (m && m->at("ack").get<int>() >= 2 && m->at("payload").value("trial", 0) > 0) {
      frame = m;
      break;
    }
  }
  ASSERT_TRUE(frame.has_value());
  const auto& p = frame->at("payload");
  const double d = p.at("drawer_fraction").get<double>();
  EXPECT_TRUE(d == 0.5 || d == 1.0) << d;
  EXPECT_EQ(p.at("toy").at("state"), "grasped");
  EXPECT_EQ(p.at("task"), "task2");
  const world::WorldState s = state_from_frame(p, world::TaskId::kTask2);
  EXPECT_EQ(s.toy.attachment, world::ToyAttachment::kGrasped);
}

TEST_F(TeleopProtocol, MalformedJsonKeepsConnection) {
  hello();
  client_.send_raw("{not json");
  const auto e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("not JSON"), std::string::npos);
  // Still served afterwards.
  client_.send({{"type", "select"}, {"payload", {{"mode", "tele_arm"}}}});
  EXPECT_TRUE(next_of(client_, "state").has_value());
}

TEST_F(TeleopProtocol, UnknownTypeIsAnError) {
  hello();
  client_.send({{"type", "teleport"}, {"payload", nlohmann::json::object()}});
  const auto e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("teleport"), std::string::npos);
}

TEST_F(TeleopProtocol, SequenceMustIncrease) {
  client_.send({{"type", "hello"}, {"seq", 5}, {"payload", {{"protocol_version", kProtocolVersion}}}});
  client_.send({{"type", "select"}, {"seq", 5}, {"payload", {{"mode", "tele_arm"}}}});
  const auto e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("does not increase"), std::string::npos);
}

TEST_F(TeleopProtocol, HelloRequiredAndVersionChecked) {
  client_.send({{"type", "select"}, {"payload", {{"mode", "tele_arm"}}}});
  auto e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("hello"), std::string::npos);
  client_.send({{"type", "hello"}, {"payload", {{"protocol_version", 99}}}});
  e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("unsupported"), std::string::npos);
}

TEST_F(TeleopProtocol, ServerSeqIncreasesAndAcks) {
  hello();
  int last = 0;
  for (int i = 0; i < 5; ++i) {
    const auto m = next_of(client_, "state");
    ASSERT_TRUE(m.has_value());
    const int seq = m->at("seq").get<int>();
    EXPECT_GT(seq, last);
    EXPECT_EQ(m->at("ack").get<int>(), 1);
    last = seq;
  }
}

TEST_F(TeleopProtocol, SecondClientRejected) {
  hello();
  ASSERT_TRUE(next_of(client_, "state").has_value());
  TeleopClient other;
  other.connect("127.0.0.1", port_);
  const auto e = other.receive(milliseconds(3000));
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->at("type"), "error");
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("another operator"), std::string::npos);
  other.close();
  EXPECT_TRUE(next_of(client_, "state").has_value());
}

TEST_F(TeleopProtocol, BusyPortThrows) {
  TeleopServer second(cfg_, [this] { return std::make_shared<eval::ExpertSource>(cfg_.expert); }, out_ / "second");
  EXPECT_THROW(second.start(port_), std::runtime_error);
}

TEST_F(TeleopProtocol, InvalidCommandPayloadIsAnError) {
  hello();
  client_.send({{"type", "command"}, {"payload", {{"base", {{"vx", "fast"}}}}}});
  const auto e = next_of(client_, "error");
  ASSERT_TRUE(e.has_value());
  EXPECT_NE(e->at("payload").at("message").get<std::string>().find("invalid command"), std::string::npos);
}

TEST(TeleopSession, ScriptedOperatorCompletesAndLogs) {
  const RunConfig cfg = falcon::testing::teleop_test_config();
  const auto out = fs::temp_directory_path() / ("falcon_teleop_session_" + std::to_string(::getpid()));
  fs::remove_all(out);
  TeleopServer server(cfg, [&cfg] { return std::make_shared<eval::ExpertSource>(cfg.expert); }, out);
  const uint16_t port = server.start(0);
  const auto r = falcon::testing::drive_session(cfg, port, eval::TeleopMode::kTeleBase, world::TaskId::kTask2,
                                        world::Region::kCenter, 11);
  server.stop();
  EXPECT_TRUE(r.outcome.at("success").get<bool>());
  EXPECT_EQ(r.outcome.at("mode"), "tele_base");
  EXPECT_TRUE(fs::exists(r.log));
  EXPECT_GT(r.commands, 0);
  EXPECT_TRUE(fs::exists(out / "outcomes.jsonl"));
}
