#include "falcon/model/falcon_model.hpp"

#include "falcon/nn/checkpoint.hpp"

#include <stdexcept>

namespace falcon::model {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFalcon: return "falcon";
    case Variant::kNoCl: return "no_cl";
    case Variant::kNoPhaseCl: return "no_phase_cl";
  }
  return "falcon";
}

Variant parse_variant(const std::string& s) {
  if (s == "falcon") return Variant::kFalcon;
  if (s == "no_cl") return Variant::kNoCl;
  if (s == "no_phase_cl") return Variant::kNoPhaseCl;
  throw std::invalid_argument("unknown variant '" + s + "' (falcon, no_cl, no_phase_cl)");
}

void ModelConfig::validate() const {
  coordinator.validate();
  if (t_obs < 1 || horizon < 1 || t_diff < 2) throw std::invalid_argument("model: need T_obs, H >= 1, T_diff >= 2");
  if (h_exec < 1 || h_exec > horizon) throw std::invalid_argument("model: h_exec must lie in [1, H]");
  if (delta < 0.0) throw std::invalid_argument("model: delta must be >= 0");
  if (!(coord.tau > 0.0)) throw std::invalid_argument("model: tau must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"coordinator", c.coordinator},
       {"t_obs", c.t_obs},
       {"horizon", c.horizon},
       {"h_exec", c.h_exec},
       {"t_diff", c.t_diff},
       {"schedule", c.schedule},
       {"width", c.width},
       {"blocks", c.blocks},
       {"proprio_hidden", c.proprio_hidden},
       {"proprio_embed", c.proprio_embed},
       {"tau", c.coord.tau},
       {"proj_dim", c.coord.proj_dim},
       {"proj_hidden", c.coord.proj_hidden},
       {"delta", c.delta},
       {"variant", to_string(c.variant)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (const auto& [k, v] : j.items()) {
    if (k == "coordinator") from_json(v, c.coordinator);
    else if (k == "t_obs") c.t_obs = v.get<int>();
    else if (k == "horizon") c.horizon = v.get<int>();
    else if (k == "h_exec") c.h_exec = v.get<int>();
    else if (k == "t_diff") c.t_diff = v.get<int>();
    else if (k == "schedule") c.schedule = v.get<std::string>();
    else if (k == "width") c.width = v.get<int>();
    else if (k == "blocks") c.blocks = v.get<int>();
    else if (k == "proprio_hidden") c.proprio_hidden = v.get<int>();
    else if (k == "proprio_embed") c.proprio_embed = v.get<int>();
    else if (k == "tau") c.coord.tau = v.get<double>();
    else if (k == "proj_dim") c.coord.proj_dim = v.get<int>();
    else if (k == "proj_hidden") c.coord.proj_hidden = v.get<int>();
    else if (k == "delta") c.delta = v.get<double>();
    else if (k == "variant") c.variant = parse_variant(v.get<std::string>());
    else throw std::invalid_argument("model config: unknown key '" + k + "'");
  }
}

namespace {

diffusion::PolicySpec policy_spec(const ModelConfig& c, diffusion::Subsystem s, int cond_dim) {
  diffusion::PolicySpec spec;
  spec.subsystem = s;
  spec.action_dim = s == diffusion::Subsystem::kArm ? data::kArmActionDim : data::kBaseActionDim;
  spec.cond_dim = cond_dim;
  spec.horizon = c.horizon;
  spec.t_obs = c.t_obs;
  spec.t_diff = c.t_diff;
  spec.schedule = c.schedule;
  spec.width = c.width;
  spec.blocks = c.blocks;
  return spec;
}

std::vector<Eigen::Index> view_rows(Eigen::Index frames, int view) {
  std::vector<Eigen::Index> rows(static_cast<size_t>(frames));
  for (Eigen::Index j = 0; j < frames; ++j) rows[static_cast<size_t>(j)] = j * coordinator::kViews + view;
  return rows;
}

}  // namespace

FalconModel::FalconModel(ModelConfig cfg, coordinator::Coordinator coord,
                         coordinator::PhasePromptSet prompts, std::string instruction,
                         data::ActionNormalizers norms, std::mt19937_64& rng)
    : cfg_(std::move(cfg)),
      coord_(std::move(coord)),
      prompts_(std::move(prompts)),
      instruction_(std::move(instruction)),
      norms_(std::move(norms)) {
  cfg_.coordinator = coord_.config();
  cfg_.validate();
  if (prompts_.size() < 2) throw std::invalid_argument("model: prompt set needs at least 2 phases");
  if (norms_.arm.dim() != data::kArmActionDim || norms_.base.dim() != data::kBaseActionDim) {
    throw std::invalid_argument("model: normalizer dimensions do not match the action spaces");
  }
  arm_proprio_ = nn::Mlp(kArmProprioDim, cfg_.proprio_hidden, cfg_.proprio_embed, rng);
  base_proprio_ = nn::Mlp(kBaseProprioDim, cfg_.proprio_hidden, cfg_.proprio_embed, rng);
  arm_ = diffusion::DiffusionPolicy::make(policy_spec(cfg_, diffusion::Subsystem::kArm, cond_dim()), rng);
  base_ = diffusion::DiffusionPolicy::make(policy_spec(cfg_, diffusion::Subsystem::kBase, cond_dim()), rng);
  closs_ = coordloss::CoordinationLoss(z_dim(), data::kArmActionDim + data::kBaseActionDim, cfg_.coord, rng);
  refresh_text_cache();
}

void FalconModel::refresh_text_cache() {
  coord_.encode_prompts(prompts_);
  instruction_emb_ = coord_.instruction_embedding(instruction_).transpose();
}

int FalconModel::z_dim() const { return coord_.z_dim(prompts_.size()); }

int FalconModel::cond_dim() const {
  return cfg_.t_obs * (2 * coord_.config().embed_dim + cfg_.proprio_embed) + z_dim();
}

Var FalconModel::text_rows(const std::vector<std::string>& texts, const Matrix& cached) const {
  if (coord_.config().freeze_text) return nn::constant(cached);
  return coord_.text_embeddings(texts);
}

Latent FalconModel::latent(const Var& views, const Matrix& proprio) const {
  const Eigen::Index m = proprio.rows();
  if (views.rows() != m * coordinator::kViews) throw std::invalid_argument("latent: views/proprio mismatch");
  std::vector<std::string> ongoing, done;
  for (const auto& ph : prompts_.phases) {
    ongoing.push_back(ph.ongoing);
    done.push_back(ph.done);
  }
  const Var e_on = text_rows(ongoing, prompts_.e_ongoing);
  const Var e_done = text_rows(done, prompts_.e_done);
  const Var instr = nn::repeat_rows(text_rows({instruction_}, instruction_emb_), m);

  Latent out;
  out.h = coord_.fuse(views, nn::constant(proprio), instr);
  const Var f = coordinator::Coordinator::pooled_embedding(views);
  const Var logits = nn::matmul_nt(f, e_on);
  out.rho = nn::softmax_rows(logits);
  out.c = nn::sigmoid(nn::scale(nn::sub(nn::matmul_nt(f, e_done), logits), coord_.config().alpha));

  const int k = prompts_.size();
  Matrix mask = Matrix::Zero(m, k);
  out.k_star.resize(m, 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto row = out.rho.value().row(i);
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < k; ++j) {
      if (row(j) > row(best)) best = j;
    }
    mask(i, best) = 1.0;
    out.k_star(i, 0) = static_cast<double>(best);
  }
  out.p = nn::scale(nn::add(nn::row_sum(nn::mul(out.c, nn::constant(mask))), nn::constant(out.k_star)),
                    1.0 / k);
  if (cfg_.variant == Variant::kNoPhaseCl) {
    const Var parts[] = {out.h, nn::constant(Matrix::Zero(m, k + 1))};
    out.z = nn::concat_cols(parts);
  } else {
    const Var parts[] = {out.h, out.rho, out.p};
    out.z = nn::concat_cols(parts);
  }
  return out;
}

Var FalconModel::frame_features(const Var& views, const Matrix& proprio, int view_a, int view_b,
                                const nn::Mlp& enc, int begin, int dim) const {
  const Eigen::Index m = proprio.rows();
  const Var parts[] = {nn::select_rows(views, view_rows(m, view_a)),
                       nn::select_rows(views, view_rows(m, view_b)),
                       enc.forward(nn::constant(proprio.middleCols(begin, dim)))};
  return nn::concat_cols(parts);
}

namespace {

Var assemble(const Var& frames, const Var& z, int samples, int t_obs) {
  std::vector<Eigen::Index> last(static_cast<size_t>(samples));
  for (int i = 0; i < samples; ++i) last[static_cast<size_t>(i)] = static_cast<Eigen::Index>(i) * t_obs + t_obs - 1;
  const Var parts[] = {nn::reshape(frames, samples, frames.value().size() / samples), nn::select_rows(z, last)};
  return nn::concat_cols(parts);
}

}  // namespace

Var FalconModel::arm_condition(const Var& views, const Matrix& proprio, const Var& z, int samples) const {
  // wrist and body views
  return assemble(frame_features(views, proprio, 0, 1, arm_proprio_, kArmProprioBegin, kArmProprioDim), z,
                  samples, cfg_.t_obs);
}

Var FalconModel::base_condition(const Var& views, const Matrix& proprio, const Var& z, int samples) const {
  // head and body views
  return assemble(frame_features(views, proprio, 2, 1, base_proprio_, kBaseProprioBegin, kBaseProprioDim), z,
                  samples, cfg_.t_obs);
}

Losses FalconModel::losses(const Batch& b, std::mt19937_64& rng, std::vector<int> lambda) const {
  const int n = b.samples;
  const Eigen::Index frames = static_cast<Eigen::Index>(n) * cfg_.t_obs;
  if (b.proprio.rows() != frames || b.arm_chunks.rows() != static_cast<Eigen::Index>(n) * cfg_.horizon ||
      b.base_chunks.rows() != b.arm_chunks.rows()) {
    throw std::invalid_argument("losses: batch shape mismatch");
  }
  const Var views = b.pixels.size() > 0 ? coord_.view_embeddings(nn::constant(b.pixels)) : nn::constant(b.views);
  const Latent lat = latent(views, b.proprio);
  Losses out;
  out.arm = arm_.training_loss(arm_condition(views, b.proprio, lat.z, n), b.arm_chunks, rng);
  out.base = base_.training_loss(base_condition(views, b.proprio, lat.z, n), b.base_chunks, rng);
  const double delta = cfg_.effective_delta();
  if (delta > 0.0) {
    if (lambda.empty()) lambda = coordloss::sample_derangement(n, rng);
    out.coord = closs_.forward(lat.z, cfg_.t_obs, nn::constant(b.arm_chunks), nn::constant(b.base_chunks),
                               cfg_.horizon, lambda)
                    .coord;
    out.total = coordloss::total_loss(out.arm, out.base, out.coord, delta);
  } else {
    out.total = nn::add(out.arm, out.base);
  }
  return out;
}

Plan FalconModel::plan(const Matrix& views, const Matrix& proprio, std::mt19937_64& arm_rng,
                       std::mt19937_64& base_rng) const {
  nn::NoGradGuard guard;
  const Var v = nn::constant(views);
  const Latent lat = latent(v, proprio);
  Plan out;
  out.arm = norms_.arm.invert(arm_.sample_chunk(arm_condition(v, proprio, lat.z, 1).value(), arm_rng));
  out.base = norms_.base.invert(base_.sample_chunk(base_condition(v, proprio, lat.z, 1).value(), base_rng));
  const Eigen::Index last = proprio.rows() - 1;
  out.latent.h = lat.h.value().row(last).transpose();
  out.latent.rho = lat.rho.value().row(last).transpose();
  out.latent.c = lat.c.value().row(last).transpose();
  out.latent.k_star = static_cast<int>(lat.k_star(last, 0));
  out.latent.p = lat.p.value()(last, 0);
  return out;
}

Matrix FalconModel::sample_arm(const Matrix& views, const Matrix& proprio, std::mt19937_64& rng) const {
  nn::NoGradGuard guard;
  const Var v = nn::constant(views);
  const Latent lat = latent(v, proprio);
  return norms_.arm.invert(arm_.sample_chunk(arm_condition(v, proprio, lat.z, 1).value(), rng));
}

Matrix FalconModel::sample_base(const Matrix& views, const Matrix& proprio, std::mt19937_64& rng) const {
  nn::NoGradGuard guard;
  const Var v = nn::constant(views);
  const Latent lat = latent(v, proprio);
  return norms_.base.invert(base_.sample_chunk(base_condition(v, proprio, lat.z, 1).value(), rng));
}

nn::ParameterSet FalconModel::trainable_parameters() const {
  nn::ParameterSet p;
  p.extend("coord.", coord_.trainable_parameters());
  arm_proprio_.collect(p, "arm.proprio.");
  p.extend("arm.policy.", arm_.parameters());
  base_proprio_.collect(p, "base.proprio.");
  p.extend("base.policy.", base_.parameters());
  if (cfg_.effective_delta() > 0.0) closs_.collect(p, "closs.");
  return p;
}

nn::ParameterSet FalconModel::parameters() const {
  nn::ParameterSet p;
  p.extend("coord.", coord_.parameters());
  arm_proprio_.collect(p, "arm.proprio.");
  p.extend("arm.policy.", arm_.parameters());
  base_proprio_.collect(p, "base.proprio.");
  p.extend("base.policy.", base_.parameters());
  closs_.collect(p, "closs.");
  return p;
}

void save_model(const FalconModel& m, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json meta = {{"config", m.config()},
                         {"prompts", m.prompts().to_json()},
                         {"instruction", m.instruction()},
                         {"normalizers", {{"arm", m.normalizers().arm.to_json()},
                                          {"base", m.normalizers().base.to_json()}}},
                         {"delta", m.config().effective_delta()},
                         {"extra", extra}};
  nn::save_checkpoint(path, "falcon_bundle", meta, m.parameters());
}

FalconModel load_model(const std::filesystem::path& path, nlohmann::json* extra) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "falcon_bundle") throw std::runtime_error("checkpoint is not a falcon bundle: " + ck.kind);
  const ModelConfig cfg = ck.meta.at("config").get<ModelConfig>();
  std::mt19937_64 rng(0);
  coordinator::Coordinator coord(cfg.coordinator, rng);
  data::ActionNormalizers norms{diffusion::Normalizer::from_json(ck.meta.at("normalizers").at("arm")),
                                diffusion::Normalizer::from_json(ck.meta.at("normalizers").at("base"))};
  FalconModel m(cfg, coord, coordinator::PhasePromptSet::from_json(ck.meta.at("prompts")),
                ck.meta.at("instruction").get<std::string>(), norms, rng);
  nn::ParameterSet p = m.parameters();
  nn::assign(p, ck);
  m.refresh_text_cache();
  if (extra) *extra = ck.meta.value("extra", nlohmann::json{});
  return m;
}

}  // namespace falcon::model
