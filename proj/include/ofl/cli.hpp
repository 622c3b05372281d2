#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofl/fusion.hpp"
#include "ofl/pipeline.hpp"

namespace ofl {

/// Every pipeline and training knob in one place. File values override the
/// built-in defaults; command-line flags override the file. Unknown keys in
/// a config file are rejected.
struct RunConfig {
    PipelineConfig pipe;
    TrainConfig train;

    static RunConfig defaults() { return {}; }
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

/// Entry point behind the `ofl` binary; takes argv without the program
/// name. Exit codes: 0 success, 1 runtime/IO failure, 2 usage.
int run_cli(const std::vector<std::string>& args);

}  // namespace ofl
