#include "dfcn/serialization.hpp"

#include <cstdio>

namespace dfcn {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"kernels_per_layer", c.kernels_per_layer},
                     {"num_dilated_layers", c.num_dilated_layers},
                     {"concat_enabled", c.concat_enabled},
                     {"norm_mode", to_string(c.norm_mode)},
                     {"head_widths", c.head_widths},
                     {"num_classes", c.num_classes},
                     {"dropout_rate", c.dropout_rate}};
  if (c.schedule == DilationSchedule::explicit_list) {
    j["dilation_schedule"] = c.explicit_dilations;
  } else {
    j["dilation_schedule"] = to_string(c.schedule);
  }
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  reject_unknown_keys(j,
                      {"kernels_per_layer", "dilation_schedule", "num_dilated_layers", "concat_enabled", "norm_mode",
                       "head_widths", "num_classes", "dropout_rate"},
                      "network");
  c = NetworkConfig{};
  try {
    if (j.contains("kernels_per_layer")) c.kernels_per_layer = j.at("kernels_per_layer").get<int>();
    if (j.contains("num_dilated_layers")) c.num_dilated_layers = j.at("num_dilated_layers").get<int>();
    if (j.contains("dilation_schedule")) {
      const auto& s = j.at("dilation_schedule");
      if (s.is_string()) {
        c.schedule = parse_dilation_schedule(s.get<std::string>());
      } else {
        c.schedule = DilationSchedule::explicit_list;
        c.explicit_dilations = s.get<std::vector<int>>();
        if (!j.contains("num_dilated_layers")) c.num_dilated_layers = static_cast<int>(c.explicit_dilations.size());
      }
    }
    if (j.contains("concat_enabled")) c.concat_enabled = j.at("concat_enabled").get<bool>();
    if (j.contains("norm_mode")) c.norm_mode = parse_norm_mode(j.at("norm_mode").get<std::string>());
    if (j.contains("head_widths")) c.head_widths = j.at("head_widths").get<std::vector<int>>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
    if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
}

std::uint64_t json_hash(const nlohmann::json& j) { return fnv1a64(j.dump()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dfcn
