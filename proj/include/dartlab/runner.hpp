#pragma once

#include <string>

#include "dartlab/config.hpp"

namespace dartlab {

/// Dispatches a parsed experiment configuration to the matching driver and
/// writes its CSV/JSON artifacts plus summary.json into the output
/// directory. Throws on invalid configuration or runtime failure.
void run_experiment(const ExperimentConfig& cfg);

/// Validates without running: resolves all keys (defaults filled), rejects
/// unknown ones, and returns the canonical resolved key=value text.
std::string validate_config(const ExperimentConfig& cfg);

}  // namespace dartlab
