// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "fusetrack/kinematics.hpp"
#include "json.hpp"

namespace fusetrack::detail {

using json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
json parse_json(const std::string& text, const std::string& what);
void require_schema_version(const json& j, int expected, const std::string& what);
Vec3 vec3_from_json(const json& j, const std::string& what);
json vec3_to_json(const Vec3& v);

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace fusetrack::detail
