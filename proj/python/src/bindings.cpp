// Python bindings: worlds, the coordination objective, config loading and the
// collect/train/eval commands.

#include "falcon/app/commands.hpp"
#include "falcon/coordinator/coordinator.hpp"
#include "falcon/coordloss/coord_loss.hpp"
#include "falcon/eval/eval.hpp"
#include "falcon/world/world.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace falcon;

namespace {

// JSON values cross the boundary as Python objects via the json module.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::handle& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::array_t<uint8_t> raster_array(const world::Raster& r) {
  py::array_t<uint8_t> a({r.height, r.width, 3});
  std::copy(r.rgb.begin(), r.rgb.end(), a.mutable_data());
  return a;
}

llc::BaseCommand base_command(const py::dict& d) {
  llc::BaseCommand c;
  if (d.contains("vx")) c.vx = d["vx"].cast<double>();
  if (d.contains("vy")) c.vy = d["vy"].cast<double>();
  if (d.contains("wz")) c.wz = d["wz"].cast<double>();
  if (d.contains("pitch")) c.pitch = d["pitch"].cast<double>();
  if (d.contains("height")) c.height = d["height"].cast<double>();
  return c;
}

world::ArmCommand arm_command(const world::WorldState& s, const py::dict& d) {
  world::ArmCommand a;
  a.ee_target = s.arm_target;
  if (d.contains("x")) a.ee_target.x() = d["x"].cast<double>();
  if (d.contains("y")) a.ee_target.y() = d["y"].cast<double>();
  if (d.contains("gripper")) a.gripper_close = d["gripper"].cast<bool>();
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Desk-scale loco-manipulation simulator, policies and evaluation";

  py::class_<world::WorldState>(m, "WorldState")
      .def_property_readonly("task", [](const world::WorldState& s) { return world::to_string(s.task); })
      .def_readonly("time", &world::WorldState::time)
      .def_readonly("steps", &world::WorldState::steps)
      .def_property_readonly("base_pose",
                             [](const world::WorldState& s) { return py::make_tuple(s.base.x, s.base.y, s.base.yaw); })
      .def_readonly("drawer_fraction", &world::WorldState::drawer_fraction)
      .def_readonly("gripper_closed", &world::WorldState::gripper_closed)
      .def_property_readonly("toy_state", [](const world::WorldState& s) { return world::to_string(s.toy.attachment); })
      .def("encode", [](const world::WorldState& s) {
        const auto b = world::encode_state(s);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def_static("decode", [](const py::bytes& b) {
        const std::string raw = b;
        return world::decode_state(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(raw.data()), raw.size()));
      })
      .def("__eq__", [](const world::WorldState& a, const world::WorldState& b) { return a == b; });

  py::class_<world::World>(m, "World")
      .def(py::init([](const py::object& cfg) {
             world::WorldConfig c;
             if (!cfg.is_none()) world::update_from_json(c, from_py(cfg));
             return world::World(c);
           }),
           py::arg("config") = py::none())
      .def("reset", [](const world::World& w, const std::string& task, const std::string& region, uint64_t seed) {
        return w.reset_task(world::parse_task(task), world::parse_region(region), seed);
      }, py::arg("task"), py::arg("region") = "center", py::arg("seed") = 0)
      .def("step", [](const world::World& w, const world::WorldState& s, const py::dict& base, const py::dict& arm,
                      double dt) { return w.step(s, base_command(base), arm_command(s, arm), dt); },
           py::arg("state"), py::arg("base") = py::dict(), py::arg("arm") = py::dict(), py::arg("dt") = world::kSimDt)
      .def("render", [](const world::World& w, const world::WorldState& s) {
        const auto obs = w.render_views(s);
        py::dict d;
        d["wrist"] = raster_array(obs.wrist);
        d["body"] = raster_array(obs.body);
        d["head"] = raster_array(obs.head);
        d["proprio"] = std::vector<double>(obs.proprio.begin(), obs.proprio.end());
        return d;
      })
      .def("predicates", [](const world::World& w, const world::WorldState& s) {
        const auto p = w.object_predicates(s);
        py::dict d;
        d["at_manip_pose"] = p.at_manip_pose;
        d["drawer_open"] = p.drawer_open;
        d["drawer_closed"] = p.drawer_closed;
        d["toy_grasped"] = p.toy_grasped;
        d["toy_in_drawer"] = p.toy_in_drawer;
        return d;
      });

  m.def("sample_derangement", [](int batch, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return coordloss::sample_derangement(batch, rng);
  }, py::arg("batch"), py::arg("seed") = 0);
  m.def("is_derangement", &coordloss::is_derangement);
  m.def("info_nce", [](const nn::Matrix& v, const nn::Matrix& w, const nn::Matrix& w_arm, const nn::Matrix& w_quad,
                       double tau) {
    nn::NoGradGuard ng;
    const auto l = coordloss::info_nce(nn::constant(v), nn::constant(w), nn::constant(w_arm), nn::constant(w_quad), tau);
    return py::make_tuple(l.obs_to_act.item(), l.act_to_obs.item(), l.coord.item());
  }, py::arg("v"), py::arg("w"), py::arg("w_arm"), py::arg("w_quad"), py::arg("tau") = 0.1,
        "Returns (obs_to_act, act_to_obs, coord) for unit-row embeddings.");
  m.def("total_loss", py::overload_cast<double, double, double, double>(&coordloss::total_loss));
  m.def("progress", [](const Eigen::VectorXd& rho, const Eigen::VectorXd& c) {
    const auto p = coordinator::progress(rho, c);
    return py::make_tuple(p.k_star, p.p);
  });

  py::class_<app::RunConfig>(m, "RunConfig")
      .def("to_dict", [](const app::RunConfig& c) { return to_py(c.to_json()); })
      .def("hash", &app::RunConfig::hash);
  m.def("load_config", [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    return app::load_run_config(path, overrides);
  }, py::arg("path"), py::arg("overrides") = std::vector<std::string>{});

  m.def("collect", [](const app::RunConfig& cfg, const std::filesystem::path& out, bool force) {
    nlohmann::json manifest;
    {
      py::gil_scoped_release nogil;
      manifest = app::cmd_collect(cfg, out, force).to_json();
    }
    return to_py(manifest);
  }, py::arg("config"), py::arg("out"), py::arg("force") = false, "Returns the collection manifest.");
  m.def("train", [](const app::RunConfig& cfg, const std::filesystem::path& dataset, const std::string& variant,
                    const std::filesystem::path& out) {
    py::gil_scoped_release nogil;
    return app::cmd_train(cfg, dataset, model::parse_variant(variant), out).bundle;
  }, py::arg("config"), py::arg("dataset"), py::arg("variant") = "falcon", py::arg("out"),
        "Trains a bundle and returns its path.");
  m.def("evaluate", [](const app::RunConfig& cfg, const std::string& source,
                       const std::optional<std::filesystem::path>& bundle, const std::filesystem::path& out) {
    std::vector<eval::StageOutcome> outcomes;
    {
      py::gil_scoped_release nogil;
      outcomes = app::cmd_eval(cfg, source, bundle, out);
    }
    py::list l;
    for (const auto& o : outcomes) l.append(to_py(nlohmann::json(o)));
    return l;
  }, py::arg("config"), py::arg("source"), py::arg("bundle") = py::none(), py::arg("out"));
}
