#include "falcon/nn/checkpoint.hpp"

#include "falcon/common/bytes.hpp"

#include <cstring>

namespace falcon::nn {

namespace {
constexpr char kMagic[8] = {'F', 'A', 'L', 'C', 'N', 'C', 'K', 'P'};
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

std::vector<uint8_t> encode_checkpoint(const std::string& kind, const nlohmann::json& meta,
                                       const ParameterSet& params) {
  nlohmann::json header;
  header["kind"] = kind;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, var] : params.items()) {
    header["tensors"].push_back({{"name", name}, {"rows", var.rows()}, {"cols", var.cols()}});
  }
  const std::string text = header.dump();

  ByteWriter w;
  w.put_bytes(std::span(reinterpret_cast<const uint8_t*>(kMagic), sizeof(kMagic)));
  w.put<uint32_t>(kCheckpointVersion);
  w.put<uint32_t>(static_cast<uint32_t>(text.size()));
  w.put_bytes(std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
  for (const auto& [name, var] : params.items()) {
    const Matrix& m = var.value();
    w.put_bytes(std::span(reinterpret_cast<const uint8_t*>(m.data()),
                          static_cast<size_t>(m.size()) * sizeof(double)));
  }
  w.put<uint32_t>(crc32(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 12) throw FormatError("checkpoint too short", bytes.size());
  const size_t body = bytes.size() - 4;
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc32(bytes.first(body)) != stored_crc) throw FormatError("checkpoint CRC mismatch", body);

  ByteReader r(bytes.first(body));
  auto magic = r.get_bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file", 0);
  }
  const auto version = r.get<uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  }
  const auto header_len = r.get<uint32_t>("header length");
  auto header_bytes = r.get_bytes(header_len, "header");
  const auto header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());

  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    auto data = r.get_bytes(static_cast<size_t>(rows * cols) * sizeof(double), "tensor data");
    std::memcpy(m.data(), data.data(), data.size());
    ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint", r.position());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& meta, const ParameterSet& params) {
  write_file_atomic(path, encode_checkpoint(kind, meta, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void assign(ParameterSet& params, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& [name, var] : params.items()) {
    const Matrix& src = ckpt.tensor(prefix + name);
    if (src.rows() != var.rows() || src.cols() != var.cols()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape mismatch");
    }
    // Var shares its node, so writing through a copy updates the owner.
    Var v = var;
    v.mutable_value() = src;
  }
}

}  // namespace falcon::nn
