#pragma once

#include <ostream>
#include <string_view>
#include <vector>

#include "v2c/cli/run_config.hpp"

namespace v2c::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingInput = 3;
inline constexpr int kExitNumeric = 4;

/// vocab, quantset, filter, tokenize, train, eval, explain, synth.
const std::vector<std::string_view>& stage_names();

/// Runs one stage against `cfg.out()`, writing artifacts atomically plus a
/// `<stage>.manifest.json` (resolved config, input and output hashes) and a
/// `<stage>.timings.json`. Errors are reported on `log` and mapped to exit
/// status 2 (config), 3 (missing input), 4 (numeric failure) or 1.
int run_stage(std::string_view name, const RunConfig& cfg, std::ostream& log);

}  // namespace v2c::cli
