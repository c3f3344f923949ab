// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoints in the AVHT container: one f64 array per parameter name,
// optimizer moments under "opt/m/<name>" and "opt/v/<name>", the step count in
// "opt/steps", and a JSON text block "meta".

#pragma once

#include <filesystem>
#include <string>

#include "fusetrack/optim.hpp"

namespace fusetrack {

void save_checkpoint(const std::filesystem::path& path, const ad::ParameterSet& params, const ad::Adam* optimizer,
                     const std::string& meta_json);

// Loads values into existing parameters (names and shapes must match) and
// returns the meta text. Optimizer state is restored when `optimizer` is set.
std::string load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params, ad::Adam* optimizer);

// Meta text only.
std::string read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace fusetrack
