// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "fusetrack/errors.hpp"
#include "json_util.hpp"

namespace fusetrack::detail {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void require_schema_version(const json& j, int expected, const std::string& what) {
  if (!j.contains("schema_version")) throw ConfigError(what + ": missing schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != expected) {
    throw ConfigError(what + ": schema_version " + std::to_string(v) + " unsupported (expected " +
                      std::to_string(expected) + ")");
  }
}

Vec3 vec3_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + ": expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace fusetrack::detail
