#pragma once

#include "fpirl/io.hpp"

namespace fpirl::cli {

// Each command receives the merged configuration (file plus flag
// overrides) and returns the process exit code.
int cmd_synth(const json& config);
int cmd_infer(const json& config);
int cmd_ingest(const json& config);
int cmd_eval(const json& config);
int cmd_converge(const json& config);

}  // namespace fpirl::cli
