#pragma once

// Versioned checkpoint container:
//   "FALCNCKP" | u32 format_version | u32 header_len | header JSON
//   | float64 tensor payloads in header order | u32 CRC32 of all prior bytes
// The JSON header carries {"kind", "meta", "tensors": [{name, rows, cols}]}.

#include "falcon/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace falcon::nn {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const;
};

std::vector<uint8_t> encode_checkpoint(const std::string& kind, const nlohmann::json& meta,
                                       const ParameterSet& params);
Checkpoint decode_checkpoint(std::span<const uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& meta, const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values by name into `params`; every parameter must be present with
// matching shape.
void assign(ParameterSet& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace falcon::nn
