#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace moepath {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitInvariant = 3,
};

/// Record of one pipeline stage: what it read, what it wrote, which seeds it used.
struct PipelineManifest {
    std::string stage;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::map<std::string, std::uint64_t> seeds;
    std::string tool_version = kToolVersion;

    /// Throws FormatError naming the first input path that does not exist.
    void check_inputs_exist() const;

    nlohmann::json to_json() const;
    static PipelineManifest from_json(const nlohmann::json& j);
};

/// Worker count: explicit flag, else MOE_PATHFINDER_JOBS, else 1.
std::size_t resolve_jobs(int flag_value);

/// Entry point of `moe-pathfinder`; argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moepath
