#pragma once

// JSON mappings of the configuration and report types. Object readers reject
// unknown keys so that typos in configs fail loudly.

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "dfcn/model.hpp"

namespace dfcn {

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// Hash of the canonical (sorted-key, compact) JSON dump.
std::uint64_t json_hash(const nlohmann::json& j);
std::string hex64(std::uint64_t v);

}  // namespace dfcn
