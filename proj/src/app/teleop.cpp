#include "falcon/app/teleop.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

namespace falcon::app {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct ResetRequest {
  world::TaskId task = world::TaskId::kTask2;
  world::Region region = world::Region::kCenter;
  uint64_t seed = 0;
  eval::TeleopMode mode = eval::TeleopMode::kTeleBase;
  uint64_t trial = 0;
};

std::string thumbnail(const world::Raster& r) {
  constexpr int kSide = 24;
  std::string px;
  px.reserve(kSide * kSide * 3);
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const int sy = y * r.height / kSide, sx = x * r.width / kSide;
      for (int c = 0; c < 3; ++c) px.push_back(static_cast<char>(r.rgb[(static_cast<size_t>(sy) * r.width + sx) * 3 + c]));
    }
  }
  std::string out(beast::detail::base64::encoded_size(px.size()), '\0');
  out.resize(beast::detail::base64::encode(out.data(), px.data(), px.size()));
  return out;
}

double number(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw std::invalid_argument(std::string("missing numeric field '") + key + "'");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("field '") + key + "' is not finite");
  return v;
}

}  // namespace

// --- server ----------------------------------------------------------------------

struct TeleopServer::Impl {
  RunConfig cfg;
  AutonomousFactory autonomous;
  std::filesystem::path out_dir;
  world::World world;

  net::io_context io;
  std::optional<tcp::acceptor> acceptor;
  std::thread io_thread;
  std::thread sim_thread;
  uint16_t bound_port = 0;

  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::optional<ResetRequest> pending;
  uint64_t trial_counter = 0;
  uint64_t active_trial = 0;
  eval::TeleopMode selected = eval::TeleopMode::kTeleBase;
  std::optional<llc::BaseCommand> latest_base;
  std::optional<world::ArmCommand> latest_arm;
  Clock::time_point last_command = Clock::now();
  json latest_state;
  std::deque<json> outbound;  // outcome and error messages from the sim thread
  int sessions_written = 0;

  class Session;
  std::weak_ptr<Session> current;

  Impl(const RunConfig& c, AutonomousFactory a, std::filesystem::path o)
      : cfg(c), autonomous(std::move(a)), out_dir(std::move(o)), world(c.world) {
    selected = eval::parse_teleop_mode(cfg.serve.mode);
    latest_state = {{"active", false}, {"mode", eval::to_string(selected)}};
  }

  json snapshot(const world::WorldState& s, const eval::Source* auto_src, eval::TeleopMode mode, uint64_t trial,
                bool active) const {
    const auto ee = world::ee_in_world(world.config(), s);
    json p = {{"trial", trial},
              {"active", active},
              {"mode", eval::to_string(mode)},
              {"task", world::to_string(s.task)},
              {"sim_time", s.time},
              {"base", {{"x", s.base.x}, {"y", s.base.y}, {"yaw", s.base.yaw}, {"height", s.base.height}, {"pitch", s.base.pitch}}},
              {"cabinet", {{"x", s.cabinet.x}, {"y", s.cabinet.y}, {"yaw", s.cabinet.yaw}}},
              {"arm_joints", s.arm.joints},
              {"arm_target", {s.arm_target.x(), s.arm_target.y()}},
              {"ee", {ee.x(), ee.y()}},
              {"gripper_closed", s.gripper_closed},
              {"handle_engaged", s.handle_engaged},
              {"drawer_fraction", s.drawer_fraction},
              {"toy", {{"x", s.toy.x}, {"y", s.toy.y}, {"state", world::to_string(s.toy.attachment)}}},
              {"rho", nullptr},
              {"p", nullptr}};
    if (auto_src) {
      if (const auto z = auto_src->latent()) {
        p["rho"] = std::vector<double>(z->rho.data(), z->rho.data() + z->rho.size());
        p["p"] = z->p;
      }
    }
    if (cfg.serve.thumbnails) p["thumbnail"] = thumbnail(world.render_views(s).head);
    return p;
  }

  void publish(json state, uint64_t trial) {
    std::lock_guard lock(mu);
    if (trial != active_trial) return;
    latest_state = std::move(state);
  }

  // --- simulation side ------------------------------------------------------------

  class LiveSource : public eval::Source {
   public:
    LiveSource(Impl& srv, eval::TeleopMode mode, uint64_t trial) : srv_(srv), mode_(mode), trial_(trial) {}
    std::string name() const override { return "human"; }
    bool human() const override { return true; }
    void reset(const world::World&, const world::WorldState& s, uint64_t) override {
      start_ = Clock::now();
      hold_base_ = s.last_cmd;
      hold_base_.vx = hold_base_.vy = hold_base_.wz = 0.0;
      hold_arm_ = {s.arm_target, s.gripper_closed};
    }
    eval::SourceCommand act(const eval::TickContext& ctx) override {
      const double tick_wall = world::kSimDt * world::kSimStepsPerAction / srv_.cfg.serve.time_scale;
      std::this_thread::sleep_until(start_ + std::chrono::duration_cast<Clock::duration>(
                                                 std::chrono::duration<double>(tick_wall * ctx.tick)));
      eval::SourceCommand c;
      {
        std::lock_guard lock(srv_.mu);
        if (srv_.stopping) {
          c.abort = "server stopped";
        } else if (srv_.pending) {
          c.abort = "reset by operator";
        } else if (std::chrono::duration<double>(Clock::now() - srv_.last_command).count() > srv_.cfg.serve.watchdog_s) {
          c.abort = eval::kTeleopTimeout;
        }
        if (srv_.latest_base) hold_base_ = *srv_.latest_base;
        if (srv_.latest_arm) hold_arm_ = *srv_.latest_arm;
      }
      c.base = hold_base_;
      c.arm = hold_arm_;
      // The log keeps only the human half; the other half is never applied.
      eval::SourceCommand logged = c;
      if (mode_ == eval::TeleopMode::kTeleBase) logged.arm = {};
      else logged.base = {};
      log.ticks.push_back({ctx.tick, logged});
      return c;
    }
    eval::TeleopLog log;

   private:
    Impl& srv_;
    eval::TeleopMode mode_;
    uint64_t trial_;
    Clock::time_point start_;
    llc::BaseCommand hold_base_;
    world::ArmCommand hold_arm_;
  };

  void sim_loop() {
    while (true) {
      ResetRequest req;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stopping || pending.has_value(); });
        if (stopping) return;
        req = *pending;
        pending.reset();
        latest_base.reset();
        latest_arm.reset();
        last_command = Clock::now();
      }
      try {
        run_session(req);
      } catch (const std::exception& e) {
        spdlog::error("teleop trial failed: {}", e.what());
        std::lock_guard lock(mu);
        outbound.push_back({{"type", "error"}, {"payload", {{"message", std::string("trial failed: ") + e.what()}}}});
      }
    }
  }

  void run_session(const ResetRequest& req) {
    std::shared_ptr<eval::Source> auto_src = autonomous();
    LiveSource human(*this, req.mode, req.trial);
    human.log.mode = req.mode;
    human.log.task = req.task;
    human.log.region = req.region;
    human.log.seed = req.seed;
    human.log.autonomous = auto_src->name();
    const bool tele_base = req.mode == eval::TeleopMode::kTeleBase;
    eval::Source& arm = tele_base ? *auto_src : static_cast<eval::Source&>(human);
    eval::Source& base = tele_base ? static_cast<eval::Source&>(human) : *auto_src;
    eval::TrialHooks hooks;
    hooks.on_sim_step = [&](const world::WorldState& s) {
      publish(snapshot(s, auto_src.get(), req.mode, req.trial, true), req.trial);
    };
    eval::StageOutcome o = eval::run_trial(arm, base, world, req.task, req.region, req.seed,
                                           {cfg.eval.max_sim_steps}, hooks);
    o.method = auto_src->name();
    std::filesystem::create_directories(out_dir / "sessions");
    std::filesystem::path log_path;
    {
      std::lock_guard lock(mu);
      log_path = out_dir / "sessions" / ("session-" + std::to_string(sessions_written++) + ".json");
    }
    std::ofstream(log_path) << human.log.to_json().dump() << '\n';
    {
      std::ofstream out(out_dir / "outcomes.jsonl", std::ios::app);
      out << json(o).dump() << '\n';
    }
    std::lock_guard lock(mu);
    if (active_trial == req.trial) {
      latest_state["active"] = false;
    }
    json payload = o;
    payload["log"] = log_path.string();
    payload["trial"] = req.trial;
    outbound.push_back({{"type", "outcome"}, {"payload", payload}});
  }

  // --- network side ---------------------------------------------------------------

  class Session : public std::enable_shared_from_this<Session> {
   public:
    Session(tcp::socket socket, Impl& srv, bool reject)
        : ws_(std::move(socket)), timer_(ws_.get_executor()), srv_(srv), reject_(reject) {}

    void run() {
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void close() {
      closed_ = true;
      timer_.cancel();
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().close(ec);
    }

   private:
    void on_accept(beast::error_code ec) {
      if (ec) return;
      ws_.text(true);
      if (reject_) {
        send({{"type", "error"}, {"payload", {{"message", "another operator is connected"}}}});
        close_after_write_ = true;
        return;
      }
      do_read();
      arm_timer();
    }

    void do_read() {
      ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
      if (ec) {
        closed_ = true;
        timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(buf_.data());
      buf_.consume(buf_.size());
      handle(text);
      if (!closed_) do_read();
    }

    void error(const std::string& message) { send({{"type", "error"}, {"payload", {{"message", message}}}}); }

    void state_reply() {
      json state;
      {
        std::lock_guard lock(srv_.mu);
        state = srv_.latest_state;
      }
      send({{"type", "state"}, {"payload", state}});
    }

    void handle(const std::string& text) {
      json msg;
      try {
        msg = json::parse(text);
      } catch (const json::parse_error&) {
        error("malformed message: not JSON");
        return;
      }
      if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
        error("malformed message: missing type");
        return;
      }
      if (!msg.contains("seq") || !msg.at("seq").is_number_integer()) {
        error("malformed message: missing integer seq");
        return;
      }
      const int64_t seq = msg.at("seq").get<int64_t>();
      if (ack_ && seq <= *ack_) {
        error("sequence number " + std::to_string(seq) + " does not increase");
        return;
      }
      ack_ = seq;
      const std::string type = msg.at("type").get<std::string>();
      const json payload = msg.value("payload", json::object());
      try {
        if (type == "hello") {
          const int v = payload.value("protocol_version", -1);
          if (v != kProtocolVersion) {
            error("protocol_version " + std::to_string(v) + " unsupported; server speaks " + std::to_string(kProtocolVersion));
            return;
          }
          hello_ = true;
          state_reply();
        } else if (!hello_) {
          error("send hello first");
        } else if (type == "select") {
          const std::string m = payload.contains("mode") ? payload.at("mode").get<std::string>() : msg.value("mode", std::string());
          const auto mode = eval::parse_teleop_mode(m);
          if (mode == eval::TeleopMode::kNone) throw std::invalid_argument("mode must be tele_base or tele_arm");
          {
            std::lock_guard lock(srv_.mu);
            srv_.selected = mode;
            srv_.latest_state["mode"] = eval::to_string(mode);
          }
          state_reply();
        } else if (type == "reset") {
          handle_reset(msg, payload);
          state_reply();
        } else if (type == "command") {
          handle_command(payload);
        } else {
          error("unknown message type '" + type + "'");
        }
      } catch (const std::exception& e) {
        error(std::string("invalid ") + type + ": " + e.what());
      }
    }

    void handle_reset(const json& msg, const json& payload) {
      ResetRequest req;
      req.task = world::parse_task(payload.value("task", std::string("task2")));
      req.region = world::parse_region(payload.value("region", std::string("center")));
      if (payload.contains("seed")) req.seed = payload.at("seed").get<uint64_t>();
      const std::string m = payload.contains("mode") ? payload.at("mode").get<std::string>() : msg.value("mode", std::string());
      std::lock_guard lock(srv_.mu);
      req.mode = m.empty() ? srv_.selected : eval::parse_teleop_mode(m);
      if (req.mode == eval::TeleopMode::kNone) throw std::invalid_argument("mode must be tele_base or tele_arm");
      srv_.selected = req.mode;
      req.trial = ++srv_.trial_counter;
      srv_.active_trial = req.trial;
      srv_.pending = req;
      const world::WorldState s = srv_.world.reset_task(req.task, req.region, req.seed);
      srv_.latest_state = srv_.snapshot(s, nullptr, req.mode, req.trial, true);
      srv_.cv.notify_all();
    }

    void handle_command(const json& payload) {
      std::lock_guard lock(srv_.mu);
      const bool tele_base = srv_.selected == eval::TeleopMode::kTeleBase;
      const char* expected = tele_base ? "base" : "arm";
      if (!payload.contains(expected)) {
        throw std::invalid_argument(std::string(eval::to_string(srv_.selected)) + " expects payload." + expected);
      }
      if (tele_base) {
        const json& b = payload.at("base");
        llc::BaseCommand c;
        c.vx = number(b, "vx");
        c.vy = number(b, "vy");
        c.wz = number(b, "wz");
        c.pitch = b.contains("pitch") ? number(b, "pitch") : 0.0;
        c.height = b.contains("height") ? number(b, "height") : 0.30;
        srv_.latest_base = srv_.cfg.world.commands.clamp(c);
      } else {
        const json& a = payload.at("arm");
        world::ArmCommand c;
        c.ee_target = {number(a, "x"), number(a, "y")};
        c.gripper_close = a.value("gripper", false);
        srv_.latest_arm = c;
      }
      srv_.last_command = Clock::now();
    }

    void arm_timer() {
      timer_.expires_after(std::chrono::duration_cast<Clock::duration>(
          std::chrono::duration<double>(1.0 / srv_.cfg.serve.frame_rate)));
      timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
        if (ec || self->closed_) return;
        self->on_timer();
        self->arm_timer();
      });
    }

    void on_timer() {
      std::deque<json> pending;
      json state;
      {
        std::lock_guard lock(srv_.mu);
        pending.swap(srv_.outbound);
        state = srv_.latest_state;
      }
      for (auto& m : pending) send(std::move(m));
      // Drop the frame rather than queue behind a slow client.
      if (hello_ && queue_.size() < 2) send({{"type", "state"}, {"payload", state}});
    }

    void send(json msg) {
      msg["seq"] = ++seq_out_;
      msg["ack"] = ack_ ? json(*ack_) : json(nullptr);
      queue_.push_back(msg.dump());
      if (!writing_) write_next();
    }

    void write_next() {
      if (closed_) return;
      writing_ = true;
      ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, size_t) {
        self->queue_.pop_front();
        if (ec) {
          self->closed_ = true;
          self->timer_.cancel();
          return;
        }
        if (!self->queue_.empty()) {
          self->write_next();
        } else {
          self->writing_ = false;
          if (self->close_after_write_) self->close();
        }
      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    net::steady_timer timer_;
    beast::flat_buffer buf_;
    std::deque<std::string> queue_;
    Impl& srv_;
    bool reject_ = false;
    bool writing_ = false;
    bool closed_ = false;
    bool close_after_write_ = false;
    bool hello_ = false;
    int64_t seq_out_ = 0;
    std::optional<int64_t> ack_;

    friend struct Impl;

   public:
    bool closed() const { return closed_; }
  };

  void do_accept() {
    acceptor->async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto cur = current.lock();
      const bool busy = cur && !cur->closed();
      auto s = std::make_shared<Session>(std::move(socket), *this, busy);
      if (!busy) current = s;
      s->run();
      do_accept();
    });
  }
};

TeleopServer::TeleopServer(const RunConfig& cfg, AutonomousFactory autonomous, std::filesystem::path out_dir)
    : impl_(std::make_unique<Impl>(cfg, std::move(autonomous), std::move(out_dir))) {}

TeleopServer::~TeleopServer() { stop(); }

uint16_t TeleopServer::start(uint16_t port) {
  auto& m = *impl_;
  try {
    m.acceptor.emplace(m.io);
    const tcp::endpoint ep(net::ip::make_address("127.0.0.1"), port);
    m.acceptor->open(ep.protocol());
    m.acceptor->set_option(net::socket_base::reuse_address(true));
    m.acceptor->bind(ep);
    m.acceptor->listen();
  } catch (const boost::system::system_error& e) {
    throw std::runtime_error("cannot listen on port " + std::to_string(port) + ": " + e.what());
  }
  m.bound_port = m.acceptor->local_endpoint().port();
  std::filesystem::create_directories(m.out_dir);
  m.do_accept();
  m.io_thread = std::thread([&m] { m.io.run(); });
  m.sim_thread = std::thread([&m] { m.sim_loop(); });
  spdlog::info("teleop service listening on ws://127.0.0.1:{}", m.bound_port);
  return m.bound_port;
}

void TeleopServer::stop() {
  if (!impl_) return;
  auto& m = *impl_;
  {
    std::lock_guard lock(m.mu);
    m.stopping = true;
  }
  m.cv.notify_all();
  if (m.sim_thread.joinable()) m.sim_thread.join();
  net::post(m.io, [&m] {
    if (m.acceptor) {
      beast::error_code ec;
      m.acceptor->close(ec);
    }
    if (auto s = m.current.lock()) s->close();
  });
  if (m.io_thread.joinable()) {
    // Let the close handlers run, then stop the loop.
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    m.io.stop();
    m.io_thread.join();
  }
}

uint16_t TeleopServer::port() const { return impl_->bound_port; }

// --- client ----------------------------------------------------------------------

struct TeleopClient::Impl {
  net::io_context io;
  std::optional<websocket::stream<beast::tcp_stream>> ws;
  int64_t seq = 0;
  bool reading = false;
  beast::flat_buffer buf;
  std::optional<std::string> ready;
  beast::error_code read_ec;
};

TeleopClient::TeleopClient() : impl_(std::make_unique<Impl>()) {}
TeleopClient::~TeleopClient() { close(); }

void TeleopClient::connect(const std::string& host, uint16_t port) {
  tcp::resolver resolver(impl_->io);
  impl_->ws.emplace(impl_->io);
  beast::get_lowest_layer(*impl_->ws).connect(resolver.resolve(host, std::to_string(port)));
  impl_->ws->handshake(host + ":" + std::to_string(port), "/");
  impl_->ws->text(true);
}

void TeleopClient::send(json msg) {
  if (!msg.contains("seq")) msg["seq"] = ++impl_->seq;
  send_raw(msg.dump());
}

void TeleopClient::send_raw(const std::string& text) { impl_->ws->write(net::buffer(text)); }

std::optional<json> TeleopClient::receive(std::chrono::milliseconds timeout) {
  auto& m = *impl_;
  if (!m.reading) {
    m.reading = true;
    m.ws->async_read(m.buf, [&m](beast::error_code ec, size_t) {
      m.read_ec = ec;
      if (!ec) {
        m.ready = beast::buffers_to_string(m.buf.data());
        m.buf.consume(m.buf.size());
      }
      m.reading = false;
    });
  }
  m.io.restart();
  m.io.run_for(timeout);
  if (m.read_ec) throw std::runtime_error("teleop client: " + m.read_ec.message());
  if (!m.ready) return std::nullopt;
  json out = json::parse(*m.ready);
  m.ready.reset();
  return out;
}

void TeleopClient::close() {
  if (!impl_ || !impl_->ws) return;
  beast::error_code ec;
  beast::get_lowest_layer(*impl_->ws).socket().close(ec);
  impl_->ws.reset();
}

world::WorldState state_from_frame(const json& p, world::TaskId task) {
  world::WorldState s;
  s.task = task;
  s.time = p.value("sim_time", 0.0);
  const json& b = p.at("base");
  s.base.x = b.at("x").get<double>();
  s.base.y = b.at("y").get<double>();
  s.base.yaw = b.at("yaw").get<double>();
  s.base.height = b.at("height").get<double>();
  s.base.pitch = b.at("pitch").get<double>();
  const json& cab = p.at("cabinet");
  s.cabinet = {cab.at("x").get<double>(), cab.at("y").get<double>(), cab.at("yaw").get<double>()};
  s.arm.joints = p.at("arm_joints").get<std::array<double, 2>>();
  const auto t = p.at("arm_target").get<std::array<double, 2>>();
  s.arm_target = {t[0], t[1]};
  s.gripper_closed = p.at("gripper_closed").get<bool>();
  s.handle_engaged = p.at("handle_engaged").get<bool>();
  s.drawer_fraction = p.at("drawer_fraction").get<double>();
  s.toy.x = p.at("toy").at("x").get<double>();
  s.toy.y = p.at("toy").at("y").get<double>();
  const std::string a = p.at("toy").at("state").get<std::string>();
  for (auto att : {world::ToyAttachment::kFree, world::ToyAttachment::kGrasped, world::ToyAttachment::kInDrawer,
                   world::ToyAttachment::kOnCabinet}) {
    if (world::to_string(att) == a) s.toy.attachment = att;
  }
  return s;
}

}  // namespace falcon::app
