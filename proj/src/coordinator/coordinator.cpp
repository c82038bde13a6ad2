#include "falcon/coordinator/coordinator.hpp"

#include "falcon/common/bytes.hpp"
#include "falcon/nn/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace falcon::coordinator {

void CoordinatorConfig::validate() const {
  if (raster < 1 || pool < 1 || raster % pool != 0) {
    throw std::invalid_argument("coordinator: raster must be a positive multiple of pool");
  }
  if (pooled() % 8 != 0) throw std::invalid_argument("coordinator: pooled size must be divisible by 8");
  if (embed_dim < 1 || latent_dim < 1 || text_buckets < 1 || proprio_hidden < 1 || fusion_hidden < 1) {
    throw std::invalid_argument("coordinator: dimensions must be positive");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("coordinator: alpha must be > 0");
}

void to_json(nlohmann::json& j, const CoordinatorConfig& c) {
  j = {{"raster", c.raster},           {"pool", c.pool},
       {"embed_dim", c.embed_dim},     {"latent_dim", c.latent_dim},
       {"text_buckets", c.text_buckets}, {"proprio_hidden", c.proprio_hidden},
       {"fusion_hidden", c.fusion_hidden}, {"alpha", c.alpha},
       {"freeze_image", c.freeze_image}, {"freeze_text", c.freeze_text}};
}

void from_json(const nlohmann::json& j, CoordinatorConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "raster") c.raster = value.get<int>();
    else if (key == "pool") c.pool = value.get<int>();
    else if (key == "embed_dim") c.embed_dim = value.get<int>();
    else if (key == "latent_dim") c.latent_dim = value.get<int>();
    else if (key == "text_buckets") c.text_buckets = value.get<int>();
    else if (key == "proprio_hidden") c.proprio_hidden = value.get<int>();
    else if (key == "fusion_hidden") c.fusion_hidden = value.get<int>();
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "freeze_image") c.freeze_image = value.get<bool>();
    else if (key == "freeze_text") c.freeze_text = value.get<bool>();
    else throw std::invalid_argument("coordinator config: unknown key '" + key + "'");
  }
}

Matrix preprocess(const world::Raster& r, const CoordinatorConfig& cfg) {
  if (r.height != cfg.raster || r.width != cfg.raster ||
      r.rgb.size() != static_cast<size_t>(r.height) * r.width * 3) {
    throw std::invalid_argument("raster size " + std::to_string(r.height) + "x" +
                                std::to_string(r.width) + " does not match encoder input " +
                                std::to_string(cfg.raster));
  }
  const int s = cfg.pooled(), k = cfg.pool;
  Matrix out(1, s * s * 3);
  const double norm = 1.0 / (255.0 * k * k);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      for (int c = 0; c < 3; ++c) {
        int acc = 0;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            acc += r.rgb[(static_cast<size_t>(y * k + dy) * r.width + (x * k + dx)) * 3 + c];
          }
        }
        out(0, (y * s + x) * 3 + c) = acc * norm - 0.5;
      }
    }
  }
  return out;
}

// --- image encoder ------------------------------------------------------------------

ImageEncoder::ImageEncoder(int input_size, int embed_dim, std::mt19937_64& rng) {
  const int channels[] = {3, 16, 32, 32};
  int size = input_size;
  for (int i = 0; i < 3; ++i) {
    Conv c;
    c.geom = {size, size, channels[i], 4, 2, 1};
    c.map = nn::Linear(c.geom.patch_size(), channels[i + 1], rng);
    size = c.geom.out_height();
    convs_.push_back(std::move(c));
  }
  head_ = nn::Linear(static_cast<Eigen::Index>(size) * size * channels[3], embed_dim, rng);
}

Var ImageEncoder::forward(const Var& images) const {
  const Eigen::Index n = images.rows();
  Var x = images;
  for (const Conv& c : convs_) {
    const Var y = nn::relu(c.map.forward(nn::im2col(x, c.geom)));
    x = nn::reshape(y, n, y.value().size() / n);
  }
  return head_.forward(x);
}

void ImageEncoder::collect(nn::ParameterSet& p, const std::string& prefix) const {
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].map.collect(p, prefix + "conv" + std::to_string(i) + ".");
  }
  head_.collect(p, prefix + "head.");
}

// --- text encoder -------------------------------------------------------------------

std::vector<int> tokenize(const std::string& text, int buckets) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  std::vector<int> ids;
  for (size_t i = 0; i < words.size(); ++i) {
    ids.push_back(static_cast<int>(falcon::crc32(words[i]) % static_cast<uint32_t>(buckets)));
    if (i + 1 < words.size()) {
      const std::string bigram = words[i] + " " + words[i + 1];
      ids.push_back(static_cast<int>(falcon::crc32(bigram) % static_cast<uint32_t>(buckets)));
    }
  }
  return ids;
}

TextEncoder::TextEncoder(int buckets, int embed_dim, std::mt19937_64& rng)
    : buckets_(buckets),
      table_(nn::make_param(nn::uniform_init(buckets, embed_dim, 1.0, rng))),
      out_(embed_dim, embed_dim, rng) {}

Var TextEncoder::forward(const std::vector<std::string>& texts) const {
  std::vector<std::vector<int>> bags;
  bags.reserve(texts.size());
  for (const auto& t : texts) bags.push_back(tokenize(t, buckets_));
  return out_.forward(nn::embedding_bag_mean(table_, bags));
}

void TextEncoder::collect(nn::ParameterSet& p, const std::string& prefix) const {
  p.add(prefix + "table", table_);
  out_.collect(p, prefix + "out.");
}

// --- fusion -------------------------------------------------------------------------

namespace {

constexpr int kTokens = kViews + 2;

// (n*rows) x rows selector repeating a per-token table for every sample.
Matrix tile_selector(Eigen::Index n, Eigen::Index rows) {
  Matrix t = Matrix::Zero(n * rows, rows);
  for (Eigen::Index i = 0; i < n * rows; ++i) t(i, i % rows) = 1.0;
  return t;
}

}  // namespace

FusionEncoder::FusionEncoder(const CoordinatorConfig& cfg, std::mt19937_64& rng)
    : view_in_(cfg.embed_dim, cfg.latent_dim, rng),
      view_embed_(nn::make_param(nn::uniform_init(kViews, cfg.latent_dim, 0.1, rng))),
      proprio_(world::kProprioDim, cfg.proprio_hidden, cfg.latent_dim, rng, nn::Activation::kSilu),
      instr_in_(cfg.embed_dim, cfg.latent_dim, rng),
      norm_attn_(cfg.latent_dim),
      q_(cfg.latent_dim, cfg.latent_dim, rng),
      k_(cfg.latent_dim, cfg.latent_dim, rng),
      v_(cfg.latent_dim, cfg.latent_dim, rng),
      o_(cfg.latent_dim, cfg.latent_dim, rng),
      norm_mlp_(cfg.latent_dim),
      mlp_(cfg.latent_dim, cfg.fusion_hidden, cfg.latent_dim, rng, nn::Activation::kSilu),
      norm_out_(cfg.latent_dim),
      d_(cfg.latent_dim) {}

Var FusionEncoder::forward(const Var& views, const Var& proprio, const Var& instruction) const {
  const Eigen::Index n = proprio.rows();
  if (views.rows() != n * kViews || instruction.rows() != n) {
    throw std::invalid_argument("fusion: batch sizes differ");
  }
  const Var vt = nn::add(view_in_.forward(views),
                         nn::matmul(nn::constant(tile_selector(n, kViews)), view_embed_));
  const Var parts[] = {vt, proprio_.forward(proprio), instr_in_.forward(instruction)};
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<size_t>(n * kTokens));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int v = 0; v < kViews; ++v) order.push_back(i * kViews + v);
    order.push_back(n * kViews + i);
    order.push_back(n * (kViews + 1) + i);
  }
  Var x = nn::select_rows(nn::concat_rows(parts), order);

  const Var xn = norm_attn_.forward(x);
  const Var scores = nn::scale(nn::block_matmul_nt(q_.forward(xn), k_.forward(xn), kTokens),
                               1.0 / std::sqrt(static_cast<double>(d_)));
  const Var attn = nn::block_matmul(nn::softmax_rows(scores), v_.forward(xn), kTokens);
  x = nn::add(x, o_.forward(attn));
  x = nn::add(x, mlp_.forward(norm_mlp_.forward(x)));
  return nn::group_mean_rows(norm_out_.forward(x), kTokens);
}

void FusionEncoder::collect(nn::ParameterSet& p, const std::string& prefix) const {
  view_in_.collect(p, prefix + "view_in.");
  p.add(prefix + "view_embed", view_embed_);
  proprio_.collect(p, prefix + "proprio.");
  instr_in_.collect(p, prefix + "instr_in.");
  norm_attn_.collect(p, prefix + "norm_attn.");
  q_.collect(p, prefix + "q.");
  k_.collect(p, prefix + "k.");
  v_.collect(p, prefix + "v.");
  o_.collect(p, prefix + "o.");
  norm_mlp_.collect(p, prefix + "norm_mlp.");
  mlp_.collect(p, prefix + "mlp.");
  norm_out_.collect(p, prefix + "norm_out.");
}

// --- prompts ------------------------------------------------------------------------

PhasePromptSet PhasePromptSet::from_json(const nlohmann::json& j) {
  PhasePromptSet s;
  s.task = j.at("task").get<std::string>();
  for (const auto& ph : j.at("phases")) {
    s.phases.push_back({ph.at("name").get<std::string>(), ph.at("ongoing").get<std::string>(),
                        ph.at("done").get<std::string>()});
  }
  if (s.phases.size() < 2) throw std::invalid_argument("prompt set needs at least 2 phases");
  return s;
}

PhasePromptSet PhasePromptSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prompt file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json PhasePromptSet::to_json() const {
  nlohmann::json j = {{"task", task}, {"phases", nlohmann::json::array()}};
  for (const auto& p : phases) {
    j["phases"].push_back({{"name", p.name}, {"ongoing", p.ongoing}, {"done", p.done}});
  }
  return j;
}

PhaseScores phase_scores(const Vector& f, const PhasePromptSet& prompts) {
  if (!prompts.encoded()) throw std::logic_error("phase_scores: prompts not encoded");
  PhaseScores s;
  s.logits = prompts.e_ongoing * f;
  const double m = s.logits.maxCoeff();
  s.rho = (s.logits.array() - m).exp().matrix();
  s.rho /= s.rho.sum();
  return s;
}

Vector phase_completion(const Vector& f, const PhasePromptSet& prompts, double alpha) {
  if (!prompts.encoded()) throw std::logic_error("phase_completion: prompts not encoded");
  if (!(alpha > 0.0)) throw std::invalid_argument("phase_completion: alpha must be > 0");
  const Vector gap = prompts.e_done * f - prompts.e_ongoing * f;
  return (1.0 / (1.0 + (-alpha * gap.array()).exp())).matrix();
}

Progress progress(const Vector& rho, const Vector& c) {
  if (rho.size() < 1 || rho.size() != c.size()) throw std::invalid_argument("progress: size mismatch");
  Progress p;
  for (Eigen::Index k = 1; k < rho.size(); ++k) {
    if (rho[k] > rho[p.k_star]) p.k_star = static_cast<int>(k);
  }
  p.p = (p.k_star + c[p.k_star]) / static_cast<double>(rho.size());
  return p;
}

Vector ConditioningLatent::z() const {
  Vector out(h.size() + rho.size() + 1);
  out << h, rho, p;
  return out;
}

// --- coordinator --------------------------------------------------------------------

Coordinator::Coordinator(CoordinatorConfig cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  image_ = ImageEncoder(cfg_.pooled(), cfg_.embed_dim, rng);
  text_ = TextEncoder(cfg_.text_buckets, cfg_.embed_dim, rng);
  fusion_ = FusionEncoder(cfg_, rng);
}

Var Coordinator::view_embeddings(const Var& images) const {
  if (images.rows() % kViews != 0) throw std::invalid_argument("view_embeddings: rows not a multiple of 3");
  return nn::l2_normalize_rows(image_.forward(images));
}

Var Coordinator::pooled_embedding(const Var& views) {
  return nn::l2_normalize_rows(nn::group_mean_rows(views, kViews));
}

Var Coordinator::fuse(const Var& views, const Var& proprio, const Var& instruction) const {
  return fusion_.forward(views, proprio, instruction);
}

Var Coordinator::text_embeddings(const std::vector<std::string>& texts) const {
  return nn::l2_normalize_rows(text_.forward(texts));
}

FrameFeatures Coordinator::image_features(const world::ObservationBundle& obs) const {
  nn::NoGradGuard guard;
  Matrix px(kViews, static_cast<Eigen::Index>(cfg_.pooled()) * cfg_.pooled() * 3);
  px.row(0) = preprocess(obs.wrist, cfg_);
  px.row(1) = preprocess(obs.body, cfg_);
  px.row(2) = preprocess(obs.head, cfg_);
  const Var views = view_embeddings(nn::constant(px));
  FrameFeatures out;
  out.views = views.value();
  out.f = pooled_embedding(views).value().row(0).transpose();
  return out;
}

void Coordinator::encode_prompts(PhasePromptSet& prompts) const {
  nn::NoGradGuard guard;
  std::vector<std::string> ongoing, done;
  for (const auto& p : prompts.phases) {
    ongoing.push_back(p.ongoing);
    done.push_back(p.done);
  }
  prompts.e_ongoing = text_embeddings(ongoing).value();
  prompts.e_done = text_embeddings(done).value();
}

Vector Coordinator::instruction_embedding(const std::string& instruction) const {
  nn::NoGradGuard guard;
  return text_embeddings({instruction}).value().row(0).transpose();
}

ConditioningLatent Coordinator::phase_head(const Vector& f, const PhasePromptSet& prompts) const {
  ConditioningLatent z;
  const PhaseScores s = phase_scores(f, prompts);
  z.rho = s.rho;
  z.c = phase_completion(f, prompts, cfg_.alpha);
  const Progress pr = progress(z.rho, z.c);
  z.k_star = pr.k_star;
  z.p = pr.p;
  return z;
}

ConditioningLatent Coordinator::encode_frame(const world::ObservationBundle& obs,
                                             const PhasePromptSet& prompts,
                                             const std::string& instruction) const {
  nn::NoGradGuard guard;
  const FrameFeatures ff = image_features(obs);
  ConditioningLatent z = phase_head(ff.f, prompts);
  Matrix proprio(1, world::kProprioDim);
  for (int i = 0; i < world::kProprioDim; ++i) proprio(0, i) = obs.proprio[i];
  const Vector instr = instruction_embedding(instruction);
  z.h = fuse(nn::constant(ff.views), nn::constant(proprio), nn::constant(instr.transpose()))
            .value()
            .row(0)
            .transpose();
  return z;
}

nn::ParameterSet Coordinator::image_parameters() const {
  nn::ParameterSet p;
  image_.collect(p, "image.");
  return p;
}

nn::ParameterSet Coordinator::text_parameters() const {
  nn::ParameterSet p;
  text_.collect(p, "text.");
  return p;
}

nn::ParameterSet Coordinator::fusion_parameters() const {
  nn::ParameterSet p;
  fusion_.collect(p, "fusion.");
  return p;
}

nn::ParameterSet Coordinator::parameters() const {
  nn::ParameterSet p;
  p.extend("", image_parameters());
  p.extend("", text_parameters());
  p.extend("", fusion_parameters());
  return p;
}

nn::ParameterSet Coordinator::trainable_parameters() const {
  nn::ParameterSet p;
  if (!cfg_.freeze_image) p.extend("", image_parameters());
  if (!cfg_.freeze_text) p.extend("", text_parameters());
  p.extend("", fusion_parameters());
  return p;
}

void save_coordinator(const Coordinator& c, const std::filesystem::path& path,
                      const nlohmann::json& extra) {
  nlohmann::json meta = {{"config", c.config()}};
  if (!extra.is_null()) meta["extra"] = extra;
  nn::save_checkpoint(path, "coordinator", meta, c.parameters());
}

Coordinator load_coordinator(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "coordinator") throw std::runtime_error("checkpoint is not a coordinator: " + ck.kind);
  const CoordinatorConfig cfg = ck.meta.at("config").get<CoordinatorConfig>();
  std::mt19937_64 rng(0);
  Coordinator c(cfg, rng);
  nn::ParameterSet p = c.parameters();
  nn::assign(p, ck);
  return c;
}

}  // namespace falcon::coordinator
