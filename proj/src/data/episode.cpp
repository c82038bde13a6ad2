#include "falcon/data/episode.hpp"

#include "falcon/common/bytes.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

namespace falcon::data {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'L', 'C', 'O', 'N', 'E', 'P'};
const char* const kStreamNames[] = {"time", "proprio", "arm", "base", "state", "wrist", "body", "head"};
constexpr uint32_t kStreamCount = 8;

template <size_t N>
void put_doubles(ByteWriter& w, const std::array<double, N>& a) {
  for (double v : a) w.put<double>(v);
}

template <size_t N>
void get_doubles(ByteReader& r, std::array<double, N>& a, const char* what) {
  for (double& v : a) v = r.get<double>(what);
}

std::vector<uint8_t> pack_rasters(const Episode& e, world::Raster EpisodeStep::*field) {
  std::vector<uint8_t> raw;
  for (const auto& s : e.steps) {
    const auto& px = (s.*field).rgb;
    raw.insert(raw.end(), px.begin(), px.end());
  }
  ByteWriter w;
  w.put<uint64_t>(raw.size());
  const auto packed = zlib_compress(raw);
  w.put_bytes(packed);
  return std::move(w.bytes());
}

}  // namespace

ArmAction to_action(const world::ArmCommand& a) {
  return {a.ee_target.x(), a.ee_target.y(), a.gripper_close ? 1.0 : 0.0};
}

world::ArmCommand to_arm_command(const ArmAction& a) {
  return {world::Vec2(a[0], a[1]), a[2] > 0.5};
}

BaseAction to_action(const llc::BaseCommand& b) { return b.as_array(); }

llc::BaseCommand to_base_command(const BaseAction& b) { return llc::BaseCommand::from_array(b); }

void Episode::validate() const {
  for (size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    for (const world::Raster* r : {&s.wrist, &s.body, &s.head}) {
      if (r->height != header.raster || r->width != header.raster ||
          r->rgb.size() != static_cast<size_t>(r->height) * r->width * 3) {
        throw std::invalid_argument("episode step " + std::to_string(i) + ": raster size mismatch");
      }
    }
    if (i > 0 && !(s.time > steps[i - 1].time)) {
      throw std::invalid_argument("episode step " + std::to_string(i) + ": time not increasing");
    }
  }
}

std::vector<uint8_t> encode_episode(const Episode& e) {
  e.validate();
  const nlohmann::json header = {{"task", world::to_string(e.header.task)},
                                 {"region", world::to_string(e.header.region)},
                                 {"seed", e.header.seed},
                                 {"timestamp", e.header.timestamp},
                                 {"format_version", e.header.format_version},
                                 {"instruction", e.header.instruction},
                                 {"config_hash", e.header.config_hash},
                                 {"raster", e.header.raster},
                                 {"step_dt", e.header.step_dt},
                                 {"success", e.header.success},
                                 {"steps", e.steps.size()}};
  ByteWriter w;
  w.put_bytes(std::span(reinterpret_cast<const uint8_t*>(kMagic), sizeof(kMagic)));
  w.put<uint32_t>(kEpisodeFormatVersion);
  const std::string hj = header.dump();
  w.put<uint32_t>(static_cast<uint32_t>(hj.size()));
  w.put_bytes(std::span(reinterpret_cast<const uint8_t*>(hj.data()), hj.size()));
  w.put<uint32_t>(crc32(hj));
  w.put<uint32_t>(kStreamCount);

  std::vector<std::vector<uint8_t>> payloads(kStreamCount);
  {
    ByteWriter t, p, a, b, st;
    for (const auto& s : e.steps) {
      t.put<double>(s.time);
      put_doubles(p, s.proprio);
      put_doubles(a, s.arm);
      put_doubles(b, s.base);
      st.put<uint32_t>(static_cast<uint32_t>(s.state.size()));
      st.put_bytes(s.state);
    }
    payloads[0] = std::move(t.bytes());
    payloads[1] = std::move(p.bytes());
    payloads[2] = std::move(a.bytes());
    payloads[3] = std::move(b.bytes());
    payloads[4] = std::move(st.bytes());
  }
  payloads[5] = pack_rasters(e, &EpisodeStep::wrist);
  payloads[6] = pack_rasters(e, &EpisodeStep::body);
  payloads[7] = pack_rasters(e, &EpisodeStep::head);

  for (uint32_t i = 0; i < kStreamCount; ++i) {
    w.put_string(kStreamNames[i]);
    w.put<uint64_t>(payloads[i].size());
    w.put_bytes(payloads[i]);
    w.put<uint32_t>(crc32(payloads[i]));
  }
  return std::move(w.bytes());
}

Episode decode_episode(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.get_bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad episode magic", 0);
  const size_t version_at = r.position();
  const auto version = r.get<uint32_t>("format version");
  if (version != kEpisodeFormatVersion) {
    throw FormatError("unsupported episode format version " + std::to_string(version), version_at);
  }
  const auto hlen = r.get<uint32_t>("header length");
  const size_t header_at = r.position();
  const auto hbytes = r.get_bytes(hlen, "header");
  const std::string hj(hbytes.begin(), hbytes.end());
  if (r.get<uint32_t>("header crc") != crc32(hj)) throw FormatError("header CRC mismatch", header_at);

  Episode e;
  size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(hj);
    e.header.task = world::parse_task(h.at("task").get<std::string>());
    e.header.region = world::parse_region(h.at("region").get<std::string>());
    e.header.seed = h.at("seed").get<uint64_t>();
    e.header.timestamp = h.at("timestamp").get<std::string>();
    e.header.format_version = h.at("format_version").get<uint32_t>();
    e.header.instruction = h.at("instruction").get<std::string>();
    e.header.config_hash = h.at("config_hash").get<std::string>();
    e.header.raster = h.at("raster").get<int>();
    e.header.step_dt = h.at("step_dt").get<double>();
    e.header.success = h.at("success").get<bool>();
    n = h.at("steps").get<size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed episode header: ") + ex.what(), header_at);
  }
  if (e.header.format_version != version) throw FormatError("header version mismatch", header_at);
  e.steps.resize(n);

  const size_t count_at = r.position();
  if (r.get<uint32_t>("stream count") != kStreamCount) throw FormatError("unexpected stream count", count_at);
  const size_t frame = static_cast<size_t>(e.header.raster) * e.header.raster * 3;

  for (uint32_t i = 0; i < kStreamCount; ++i) {
    const size_t name_at = r.position();
    if (r.get_string("stream name") != kStreamNames[i]) {
      throw FormatError(std::string("expected stream '") + kStreamNames[i] + "'", name_at);
    }
    const auto len = r.get<uint64_t>("stream length");
    const size_t payload_at = r.position();
    const auto payload = r.get_bytes(len, kStreamNames[i]);
    if (r.get<uint32_t>("stream crc") != crc32(payload)) {
      throw FormatError(std::string("CRC mismatch in stream '") + kStreamNames[i] + "'", payload_at);
    }
    ByteReader s(payload, payload_at);
    if (i <= 4) {
      for (auto& st : e.steps) {
        switch (i) {
          case 0: st.time = s.get<double>("time"); break;
          case 1: get_doubles(s, st.proprio, "proprio"); break;
          case 2: get_doubles(s, st.arm, "arm action"); break;
          case 3: get_doubles(s, st.base, "base action"); break;
          case 4: {
            const auto sl = s.get<uint32_t>("state length");
            const auto sb = s.get_bytes(sl, "state");
            st.state.assign(sb.begin(), sb.end());
            break;
          }
        }
      }
    } else {
      const auto raw_size = s.get<uint64_t>("raster size");
      if (raw_size != frame * n) throw FormatError("raster stream size mismatch", payload_at);
      std::vector<uint8_t> raw;
      try {
        raw = zlib_decompress(s.get_bytes(s.remaining(), "rasters"), raw_size);
      } catch (const std::exception& ex) {
        throw FormatError(std::string("raster decompression failed: ") + ex.what(), payload_at);
      }
      world::Raster EpisodeStep::*field =
          i == 5 ? &EpisodeStep::wrist : (i == 6 ? &EpisodeStep::body : &EpisodeStep::head);
      for (size_t k = 0; k < n; ++k) {
        world::Raster& ras = e.steps[k].*field;
        ras.height = ras.width = e.header.raster;
        ras.rgb.assign(raw.begin() + static_cast<std::ptrdiff_t>(k * frame),
                       raw.begin() + static_cast<std::ptrdiff_t>((k + 1) * frame));
      }
    }
    if (s.remaining() != 0) throw FormatError("trailing bytes in stream", s.position());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last stream", r.position());
  try {
    e.validate();
  } catch (const std::invalid_argument& ex) {
    throw FormatError(ex.what(), 0);
  }
  return e;
}

void save_episode(const Episode& e, const std::filesystem::path& path) {
  const auto bytes = encode_episode(e);
  write_file_atomic(path, bytes);
}

Episode load_episode(const std::filesystem::path& path) { return decode_episode(read_file(path)); }

bool task_complete(const world::World& w, const world::WorldState& s) {
  const auto p = w.object_predicates(s);
  return s.task == world::TaskId::kTask1 ? p.toy_in_drawer : (p.toy_in_drawer && p.drawer_closed);
}

Episode record_episode(const world::World& w, world::TaskId task, world::Region region,
                       uint64_t seed, const RecordOptions& opt) {
  Episode e;
  e.header.task = task;
  e.header.region = region;
  e.header.seed = seed;
  e.header.timestamp = opt.timestamp;
  e.header.instruction = instruction_for(task);
  e.header.config_hash = opt.config_hash;
  e.header.raster = w.config().raster;

  world::WorldState s = w.reset_task(task, region, seed);
  ScriptedExpert expert(w.config(), opt.expert, seed);
  llc::BaseCommand base = s.last_cmd;
  world::ArmCommand arm{s.arm_target, s.gripper_closed};

  auto record = [&]() {
    const auto obs = w.render_views(s);
    EpisodeStep st;
    st.wrist = obs.wrist;
    st.body = obs.body;
    st.head = obs.head;
    st.proprio = obs.proprio;
    st.arm = to_action(arm);
    st.base = to_action(base);
    st.time = s.time;
    st.state = world::encode_state(s);
    e.steps.push_back(std::move(st));
  };

  record();
  for (int k = 0; k < opt.max_steps && !task_complete(w, s); ++k) {
    base = expert.base(s);
    arm = expert.arm(s);
    for (int j = 0; j < world::kSimStepsPerAction; ++j) s = w.step(s, base, arm, world::kSimDt);
    record();
    if (expert_phase(w.config(), s) == ExpertPhase::kFailed) break;
  }
  e.header.success = task_complete(w, s);
  return e;
}

std::filesystem::path episode_path(const std::filesystem::path& root, world::TaskId task,
                                   uint64_t seed) {
  return root / world::to_string(task) / (std::to_string(seed) + ".ep");
}

nlohmann::json CollectionManifest::to_json() const {
  std::vector<int> ok(success.begin(), success.end());
  return {{"task", world::to_string(task)}, {"region", world::to_string(region)},
          {"seeds", seeds},                 {"lengths", lengths},
          {"success", ok},                  {"config_hash", config_hash},
          {"episodes", seeds.size()},       {"total_steps", total_steps}};
}

CollectionManifest CollectionManifest::from_json(const nlohmann::json& j) {
  CollectionManifest m;
  m.task = world::parse_task(j.at("task").get<std::string>());
  m.region = world::parse_region(j.at("region").get<std::string>());
  m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  m.lengths = j.at("lengths").get<std::vector<size_t>>();
  for (int v : j.at("success").get<std::vector<int>>()) m.success.push_back(v != 0);
  m.config_hash = j.at("config_hash").get<std::string>();
  m.total_steps = j.at("total_steps").get<size_t>();
  return m;
}

CollectionManifest collect(const world::World& w, const std::filesystem::path& out,
                           const CollectOptions& opt) {
  CollectionManifest m;
  m.task = opt.task;
  m.region = opt.region;
  m.seeds = opt.seeds;
  m.config_hash = opt.record.config_hash;
  const auto dir = out / world::to_string(opt.task);
  std::filesystem::create_directories(dir);
  if (opt.seeds.empty()) spdlog::warn("collect: no episodes requested");
  if (!opt.force) {
    for (uint64_t seed : opt.seeds) {
      if (std::filesystem::exists(episode_path(out, opt.task, seed))) {
        throw std::runtime_error("episode " + episode_path(out, opt.task, seed).string() +
                                 " exists; pass --force to overwrite");
      }
    }
  }

  m.lengths.assign(opt.seeds.size(), 0);
  std::vector<char> ok(opt.seeds.size(), 0);
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&]() {
    for (size_t i = next++; i < opt.seeds.size(); i = next++) {
      try {
        const Episode e = record_episode(w, opt.task, opt.region, opt.seeds[i], opt.record);
        save_episode(e, episode_path(out, opt.task, opt.seeds[i]));
        m.lengths[i] = e.size();
        ok[i] = e.header.success ? 1 : 0;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_threads = std::min<unsigned>(opt.threads > 0 ? opt.threads : hw,
                                                std::max<size_t>(1, opt.seeds.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);

  for (size_t i = 0; i < ok.size(); ++i) {
    m.success.push_back(ok[i] != 0);
    m.total_steps += m.lengths[i];
  }
  write_text_file(dir / "manifest.json", m.to_json().dump(2));
  return m;
}

}  // namespace falcon::data
