#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

namespace falcon {

uint64_t fnv1a64(std::string_view data);
// 16 hex digits of FNV-1a over the compact JSON dump (keys are sorted by nlohmann::json).
std::string config_hash(const nlohmann::json& config);

}  // namespace falcon
