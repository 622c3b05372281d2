#include <fstream>

#include "ofl/errors.hpp"
#include "ofl/pipeline.hpp"

namespace ofl {

void save_model(const std::filesystem::path& dir, const StackParams& stack,
                const AttentionParams& attn, const FusionParams& fusion,
                const nlohmann::json& resolved_config) {
    std::filesystem::create_directories(dir);
    save_stack(stack, dir / "stack");
    save_attention(attn, dir / "attention");
    save_fusion(fusion, dir / "fusion");
    nlohmann::json j;
    j["version"] = kVersionString;
    j["config"] = resolved_config;
    std::ofstream f(dir / "model.json");
    if (!f) throw IoError("cannot write " + (dir / "model.json").string());
    f << j.dump(2) << "\n";
}

Model load_model(const std::filesystem::path& dir) {
    const auto meta_path = dir / "model.json";
    if (!std::filesystem::exists(meta_path)) throw IoError("missing model file: " + meta_path.string());
    std::ifstream f(meta_path);
    if (!f) throw IoError("cannot open " + meta_path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    Model m;
    m.config = j.at("config");
    for (const char* part : {"stack", "attention", "fusion"}) {
        if (!std::filesystem::exists(dir / part)) {
            throw IoError("missing model file: " + (dir / part).string());
        }
    }
    m.stack = load_stack(dir / "stack");
    m.attn = load_attention(dir / "attention");
    m.fusion = load_fusion(dir / "fusion");
    return m;
}

}  // namespace ofl
