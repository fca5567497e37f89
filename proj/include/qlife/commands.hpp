#pragma once

#include <string>

#include "qlife/config.hpp"

namespace qlife::cli {

// Command implementations. Each validates the config, runs the stage and
// writes report.json (plus artifacts) under the resolved output directory.
// All return 0 on success; failures surface as typed exceptions that
// run_cli maps to exit codes.
int cmd_gen_data(RunConfig cfg);
int cmd_train_baseline(RunConfig cfg);
int cmd_calibrate(RunConfig cfg);
int cmd_detect(RunConfig cfg);
int cmd_incremental(RunConfig cfg);
int cmd_adapt(RunConfig cfg);
int cmd_eval(RunConfig cfg);

// Full argv entry point: subcommand dispatch, config-file loading, flag
// overrides (flags win), machine-readable error JSON on stderr, and
// distinct exit codes: 2 config, 3 data, 4 checkpoint, 5 engine, 1 other.
int run_cli(int argc, const char* const* argv);

// cfg.out when set, otherwise runs/<timestamp>-<command>; created on disk.
std::string resolve_out_dir(const RunConfig& cfg, const std::string& command);

}  // namespace qlife::cli
