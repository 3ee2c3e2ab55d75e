#pragma once

#include <filesystem>
#include <ostream>
#include <string>

#include <json.hpp>

#include "config.hpp"

namespace dcem::cli {

enum class CartpoleMode { train, expert_only, ablate };

/// git describe of the build, or "unknown".
std::string version();

/// cfg.output_dir if set, else $DCEM_OUTPUT_ROOT (default ./runs) / command.
std::filesystem::path output_directory(const RunConfig& cfg, const std::string& command);

int cmd_lml(const RunConfig& cfg, std::ostream& out);
int cmd_topk(const RunConfig& cfg, std::ostream& out);
int cmd_optimize(const RunConfig& cfg, std::ostream& out);
int cmd_regress(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out, std::ostream& log);
int cmd_cartpole(const RunConfig& cfg, CartpoleMode mode, const std::filesystem::path& dir, std::ostream& out,
                 std::ostream& log);

}  // namespace dcem::cli
