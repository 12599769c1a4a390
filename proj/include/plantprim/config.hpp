#pragma once

#include "plantprim/optimizer.hpp"

#include <string>
#include <vector>

namespace plantprim {

/// Every run-config key with its current value, as a flat JSON object with
/// dotted keys ("init.alpha_st", "loss.weight.bind", ...).
std::string run_config_json(const RunConfig& cfg);

/// Overrides fields of `cfg` from a flat JSON object. Unknown keys or
/// ill-typed values -> InvalidArgument naming the key.
void apply_run_config(RunConfig& cfg, const std::string& json_text);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

std::vector<std::string> run_config_keys();

}  // namespace plantprim
