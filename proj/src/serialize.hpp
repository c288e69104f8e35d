#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nn.hpp"

namespace mitodet {

inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr int kSchemaVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Deterministic byte image of a parameter set (names, shapes, values).
std::string serialize_params(const nn::ParamSet& params);
// Fills `params` in place; names and shapes must match exactly.
void deserialize_params(std::string_view bytes, nn::ParamSet& params, const std::string& origin);

std::string params_hash(const nn::ParamSet& params);

void write_params(const std::string& path, const nn::ParamSet& params);
void read_params(const std::string& path, nn::ParamSet& params);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace mitodet
