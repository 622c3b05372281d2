#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofl/eval_data.hpp"
#include "ofl/few_shot_learner.hpp"
#include "ofl/frozen_stack.hpp"
#include "ofl/fusion.hpp"
#include "ofl/memory_attention.hpp"

namespace ofl {

struct PipelineConfig {
    double gamma = 0.8;
    int k_refs = 2;
    int train_iters = 10;
    int infer_iters = 5;
    double binarize_threshold = 0.5;
    int C = 32;
    int D = 8;
    int k_map = 3;
    int cap_rolling = 6;
    int cap_buffer = 16;
    double lambda = 0.05;
    int heads = 1;
    bool use_learner = true;
    bool use_afm = true;
    bool use_update = true;
    bool reseed_per_frame = false;
    std::uint64_t seed = 42;

    void validate() const;
};

struct Components {
    const StackParams* stack = nullptr;
    const AttentionParams* attn = nullptr;
    const FusionParams* fusion = nullptr;
};

/// Precomputed training-set context for one class: encoded features and
/// memory targets, index-aligned with the training frames.
struct ClassContext {
    std::vector<Tensor> feats;    // C×H'×W'
    std::vector<Tensor> targets;  // D×H'×W'
};

ClassContext build_class_context(const StackParams& stack,
                                 const std::vector<TrainExample>& frames);

/// Loads the train split into per-class groups of (image, binary mask).
TrainSet build_train_set(const SequenceDataset& ds);

/// Online state of one (sequence, class) run.
struct PipelineState {
    MemoryBank bank;
    MappingWeights tau;
    SampleBuffer buffer;
    int frame_index = 0;
    bool initialized = false;

    PipelineState() : bank(6), buffer(16) {}
    std::uint64_t state_checksum() const;
};

struct MaskPrediction {
    Tensor prob;        // H×W in (0,1)
    Tensor binary;      // H×W in {0,1}
    double confidence = 0.0;
    bool accepted = false;
};

/// Mean predicted probability over pixels above the threshold; 0 when no
/// pixel clears it (forces rejection).
double confidence_score(const Tensor& prob, double threshold = 0.5);

PipelineState init_sequence(const PipelineConfig& cfg, const Components& comps,
                            const ClassContext& ctx, const Tensor& first_query_feats);

MaskPrediction infer_frame(const PipelineConfig& cfg, PipelineState& state,
                           const Components& comps, const Tensor& image,
                           const ClassContext& ctx);

std::vector<MaskPrediction> run_sequence(const PipelineConfig& cfg, const Components& comps,
                                         const ClassContext& ctx,
                                         const std::vector<Tensor>& query_images);

// --- experiment -------------------------------------------------------------

struct SequenceScore {
    std::string sequence;
    double mean_dice = 0.0;
    double mean_ahd = 0.0;
    int frames = 0;
    int accepted = 0;
};

struct ClassScore {
    std::string cls;
    double mean_dice = 0.0;
    double mean_ahd = 0.0;
    std::vector<SequenceScore> per_sequence;
};

struct ExperimentReport {
    nlohmann::json config;  // resolved configuration echo
    std::string dataset_id;
    std::string dataset_checksum;
    std::string version;
    std::vector<ClassScore> per_class;
    double overall_dice = 0.0;
    double overall_ahd = 0.0;
    double runtime_s = 0.0;
};

nlohmann::json report_to_json(const ExperimentReport& r);
ExperimentReport report_from_json(const nlohmann::json& j);
void write_report(const ExperimentReport& r, const std::filesystem::path& path);
ExperimentReport read_report(const std::filesystem::path& path);

struct RunOptions {
    std::filesystem::path dump_masks;  // per-frame binary masks when non-empty
    int threads = 0;                   // 0 = auto; OFL_THREADS caps either way
};

/// Runs one pipeline instance per (test sequence, class) and aggregates
/// mean Dice / mean average-Hausdorff per class and overall.
ExperimentReport run_experiment(const PipelineConfig& cfg, const Components& comps,
                                const SequenceDataset& ds, const nlohmann::json& config_echo,
                                const RunOptions& opts = {});

// --- model directory ---------------------------------------------------------

void save_model(const std::filesystem::path& dir, const StackParams& stack,
                const AttentionParams& attn, const FusionParams& fusion,
                const nlohmann::json& resolved_config);

struct Model {
    StackParams stack;
    AttentionParams attn;
    FusionParams fusion;
    nlohmann::json config;
};

Model load_model(const std::filesystem::path& dir);

extern const char* kVersionString;

}  // namespace ofl
