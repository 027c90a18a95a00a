#pragma once

#include <string>

#include "dartlab/patchnet.hpp"

namespace dartlab {

/// "dartlab-params v1" text checkpoint: line 1 magic+version, line 2 "C d q",
/// then C lines of d floats at 17 significant digits.
void write_checkpoint(const PatchModel& model, const std::string& path);
PatchModel read_checkpoint(const std::string& path);

}  // namespace dartlab
