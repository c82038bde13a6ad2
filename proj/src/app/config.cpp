#include "falcon/app/config.hpp"

#include "falcon/common/hash.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

#ifndef FALCON_DEFAULT_CONFIG
#define FALCON_DEFAULT_CONFIG "configs/default.json"
#endif

namespace falcon::data {

namespace {
template <typename T>
void app_read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

using json = nlohmann::json;

void to_json(json& j, const ExpertConfig& c) {
  j = {{"base_noise", c.base_noise}, {"arm_noise", c.arm_noise},   {"arm_speed", c.arm_speed},
       {"k_pos", c.k_pos},           {"k_yaw", c.k_yaw},           {"max_vx", c.max_vx},
       {"max_vy", c.max_vy},         {"max_wz", c.max_wz},         {"near_pos", c.near_pos},
       {"near_yaw", c.near_yaw},     {"lean_pitch", c.lean_pitch}, {"lean_height", c.lean_height},
       {"crouch_height", c.crouch_height}, {"nominal_height", c.nominal_height}};
}

void from_json(const json& j, ExpertConfig& c) {
  json known;
  to_json(known, c);
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw std::invalid_argument("unknown key '" + k + "' in expert");
  }
  app_read(j, "base_noise", c.base_noise);
  app_read(j, "arm_noise", c.arm_noise);
  app_read(j, "arm_speed", c.arm_speed);
  app_read(j, "k_pos", c.k_pos);
  app_read(j, "k_yaw", c.k_yaw);
  app_read(j, "max_vx", c.max_vx);
  app_read(j, "max_vy", c.max_vy);
  app_read(j, "max_wz", c.max_wz);
  app_read(j, "near_pos", c.near_pos);
  app_read(j, "near_yaw", c.near_yaw);
  app_read(j, "lean_pitch", c.lean_pitch);
  app_read(j, "lean_height", c.lean_height);
  app_read(j, "crouch_height", c.crouch_height);
  app_read(j, "nominal_height", c.nominal_height);
}

}  // namespace falcon::data

namespace falcon::app {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument(section + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw std::invalid_argument("unknown key '" + k + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json caption_json(const coordinator::CaptionPretrainConfig& c) {
  return {{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}, {"tau", c.tau}, {"seed", c.seed}};
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  model.validate();
  if (model.coordinator.raster != world.raster) {
    throw std::invalid_argument("model.coordinator.raster must equal world.raster");
  }
  if (train.steps < 1 || train.batch < 2) throw std::invalid_argument("train: need steps >= 1 and batch >= 2");
  if (pretrain.stride < 1 || pretrain.caption.steps < 0 || pretrain.caption.batch < 2) {
    throw std::invalid_argument("pretrain: need stride >= 1, steps >= 0 and batch >= 2");
  }
  if (collect.episodes < 0) throw std::invalid_argument("collect.episodes must be >= 0");
  if (eval.trials_per_region < 0 || eval.max_sim_steps < 1) {
    throw std::invalid_argument("eval: need trials_per_region >= 0 and max_sim_steps >= 1");
  }
  if (serve.port < 0 || serve.port > 65535) throw std::invalid_argument("serve.port out of range");
  if (!(serve.frame_rate > 0.0) || !(serve.watchdog_s > 0.0) || !(serve.time_scale > 0.0)) {
    throw std::invalid_argument("serve: frame_rate, watchdog_s and time_scale must be > 0");
  }
  if (serve.autonomous != "policy" && serve.autonomous != "expert") {
    throw std::invalid_argument("serve.autonomous must be 'policy' or 'expert'");
  }
  if (eval::parse_teleop_mode(serve.mode) == eval::TeleopMode::kNone) {
    throw std::invalid_argument("serve.mode must be tele_base or tele_arm");
  }
  for (const auto& [task, path] : prompts) world::parse_task(task);
  if (llc_train.iterations < 1 || llc_train.num_envs < 1 || llc_train.horizon < 1) {
    throw std::invalid_argument("llc_train: iterations, num_envs and horizon must be >= 1");
  }
}

json RunConfig::to_json() const {
  json w;
  world::to_json(w, world);
  json regions = json::array();
  for (auto r : eval.regions) regions.push_back(world::to_string(r));
  return {{"seed", seed},
          {"world", w},
          {"expert", expert},
          {"model", model},
          {"pretrain", {{"enabled", pretrain.enabled}, {"stride", pretrain.stride}, {"caption", caption_json(pretrain.caption)}}},
          {"train", train},
          {"collect", {{"task", world::to_string(collect.task)}, {"region", world::to_string(collect.region)},
                       {"episodes", collect.episodes}, {"seed_base", collect.seed_base}, {"threads", collect.threads}}},
          {"eval", {{"task", world::to_string(eval.task)}, {"regions", regions},
                    {"trials_per_region", eval.trials_per_region}, {"seed_base", eval.seed_base},
                    {"max_sim_steps", eval.max_sim_steps}, {"threads", eval.threads}}},
          {"serve", {{"port", serve.port}, {"frame_rate", serve.frame_rate}, {"watchdog_s", serve.watchdog_s},
                     {"time_scale", serve.time_scale}, {"thumbnails", serve.thumbnails},
                     {"autonomous", serve.autonomous}, {"mode", serve.mode}}},
          {"llc_train", {{"iterations", llc_train.iterations}, {"time_budget_s", llc_train.time_budget_s},
                         {"num_envs", llc_train.num_envs}, {"horizon", llc_train.horizon},
                         {"hidden", llc_train.hidden}}},
          {"prompts", prompts}};
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"extends", "seed", "world", "expert", "model", "pretrain", "train", "collect", "eval",
                     "serve", "llc_train", "prompts"},
                 "config");
  RunConfig c;
  read(j, "seed", c.seed);
  // The root seed feeds every stage unless a section sets its own.
  c.train.seed = c.seed;
  c.pretrain.caption.seed = c.seed;
  if (j.contains("world")) world::update_from_json(c.world, j.at("world"));
  if (j.contains("expert")) data::from_json(j.at("expert"), c.expert);
  if (j.contains("model")) model::from_json(j.at("model"), c.model);
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    reject_unknown(p, {"enabled", "stride", "caption"}, "pretrain");
    read(p, "enabled", c.pretrain.enabled);
    read(p, "stride", c.pretrain.stride);
    if (p.contains("caption")) {
      const json& cp = p.at("caption");
      reject_unknown(cp, {"steps", "batch", "lr", "tau", "seed"}, "pretrain.caption");
      read(cp, "steps", c.pretrain.caption.steps);
      read(cp, "batch", c.pretrain.caption.batch);
      read(cp, "lr", c.pretrain.caption.lr);
      read(cp, "tau", c.pretrain.caption.tau);
      read(cp, "seed", c.pretrain.caption.seed);
    }
  }
  if (j.contains("train")) train::from_json(j.at("train"), c.train);
  if (j.contains("collect")) {
    const json& p = j.at("collect");
    reject_unknown(p, {"task", "region", "episodes", "seed_base", "threads"}, "collect");
    if (p.contains("task")) c.collect.task = world::parse_task(p.at("task").get<std::string>());
    if (p.contains("region")) c.collect.region = world::parse_region(p.at("region").get<std::string>());
    read(p, "episodes", c.collect.episodes);
    read(p, "seed_base", c.collect.seed_base);
    read(p, "threads", c.collect.threads);
  }
  if (j.contains("eval")) {
    const json& p = j.at("eval");
    reject_unknown(p, {"task", "regions", "trials_per_region", "seed_base", "max_sim_steps", "threads"}, "eval");
    if (p.contains("task")) c.eval.task = world::parse_task(p.at("task").get<std::string>());
    if (p.contains("regions")) {
      c.eval.regions.clear();
      for (const auto& r : p.at("regions")) c.eval.regions.push_back(world::parse_region(r.get<std::string>()));
    }
    read(p, "trials_per_region", c.eval.trials_per_region);
    read(p, "seed_base", c.eval.seed_base);
    read(p, "max_sim_steps", c.eval.max_sim_steps);
    read(p, "threads", c.eval.threads);
  }
  if (j.contains("serve")) {
    const json& p = j.at("serve");
    reject_unknown(p, {"port", "frame_rate", "watchdog_s", "time_scale", "thumbnails", "autonomous", "mode"}, "serve");
    read(p, "port", c.serve.port);
    read(p, "frame_rate", c.serve.frame_rate);
    read(p, "watchdog_s", c.serve.watchdog_s);
    read(p, "time_scale", c.serve.time_scale);
    read(p, "thumbnails", c.serve.thumbnails);
    read(p, "autonomous", c.serve.autonomous);
    read(p, "mode", c.serve.mode);
  }
  if (j.contains("llc_train")) {
    const json& p = j.at("llc_train");
    reject_unknown(p, {"iterations", "time_budget_s", "num_envs", "horizon", "hidden"}, "llc_train");
    read(p, "iterations", c.llc_train.iterations);
    read(p, "time_budget_s", c.llc_train.time_budget_s);
    read(p, "num_envs", c.llc_train.num_envs);
    read(p, "horizon", c.llc_train.horizon);
    read(p, "hidden", c.llc_train.hidden);
  }
  if (j.contains("prompts")) {
    for (const auto& [task, path] : j.at("prompts").items()) {
      std::filesystem::path p = path.get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.prompts[task] = p.lexically_normal().string();
    }
  }
  c.validate();
  return c;
}

std::string RunConfig::hash() const {
  const json full = to_json();
  json sub;
  for (const char* k : {"seed", "world", "expert", "model", "pretrain", "train"}) sub[k] = full.at(k);
  return config_hash(sub);
}

std::filesystem::path RunConfig::prompt_path(world::TaskId task) const {
  const auto it = prompts.find(world::to_string(task));
  if (it == prompts.end()) throw std::invalid_argument("config has no prompt file for " + world::to_string(task));
  return it->second;
}

json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config " + path.string() + " must be a JSON object");
  const auto dir = std::filesystem::absolute(path).parent_path();
  if (j.contains("prompts")) {
    for (auto& [task, p] : j.at("prompts").items()) {
      std::filesystem::path pp = p.get<std::string>();
      if (pp.is_relative()) p = (dir / pp).lexically_normal().string();
    }
  }
  if (!j.contains("extends")) return j;
  std::filesystem::path parent_path = j.at("extends").get<std::string>();
  if (parent_path.is_relative()) parent_path = dir / parent_path;
  json parent = load_config_json(parent_path);
  j.erase("extends");
  parent.merge_patch(j);
  return parent;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  std::string pointer;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  j[json::json_pointer(pointer)] = value;
}

std::filesystem::path resolve_config_path(const std::string& arg) {
  if (!arg.empty()) return arg;
  if (const char* env = std::getenv("FALCON_CONFIG"); env && *env) return env;
  return FALCON_DEFAULT_CONFIG;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j = load_config_json(path);
  for (const auto& o : overrides) apply_override(j, o);
  return RunConfig::from_json(j);
}

}  // namespace falcon::app
