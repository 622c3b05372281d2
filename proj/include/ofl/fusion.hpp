#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ofl/frozen_stack.hpp"
#include "ofl/memory_attention.hpp"
#include "ofl/tape.hpp"
#include "ofl/tensor.hpp"

namespace ofl {

/// The only trainable parameters in the system: the fusion weight network
/// (2C→1 conv, 3×3, sigmoid on top) and the D→C converter (1×1 conv).
struct FusionParams {
    Tensor weight_w;  // 1×2C×3×3
    Tensor weight_b;  // 1
    Tensor conv_w;    // C×D×1×1
    Tensor conv_b;    // C
};

FusionParams init_fusion(std::uint64_t seed, int C, int D);

/// 1×1 conv + bias: D×H'×W' -> C×H'×W'.
Tensor convert(const FusionParams& fp, const Tensor& e2_raw);

struct FuseResult {
    Tensor e_tar;  // C×H'×W'
    Tensor w_map;  // 1×H'×W', entries in (0,1)
};

/// w = sigmoid(weight_net([e1, e2])); e_tar = w*e1 + (1-w)*e2 with the
/// single-channel map broadcast across channels.
FuseResult fuse(const FusionParams& fp, const Tensor& e1, const Tensor& e2);

/// Fusion parameters lifted onto a tape (tracked when training them).
struct TracedFusion {
    TracedTensor weight_w, weight_b, conv_w, conv_b;
    static TracedFusion make(Tape& tape, const FusionParams& fp, bool track);
};

TracedTensor convert(Tape& tape, const TracedFusion& fp, const TracedTensor& e2_raw);

struct TracedFuseResult {
    TracedTensor e_tar;
    TracedTensor w_map;
};

TracedFuseResult fuse(Tape& tape, const TracedFusion& fp, const TracedTensor& e1,
                      const TracedTensor& e2);

std::uint64_t fusion_checksum(const FusionParams& fp);
void save_fusion(const FusionParams& fp, const std::filesystem::path& dir);
FusionParams load_fusion(const std::filesystem::path& dir);

// --- offline training ------------------------------------------------------

/// Decoupled-weight-decay Adam over a fixed set of parameter tensors.
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay);
    void step(double lr, const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads);

private:
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct TrainExample {
    Tensor image;  // 3×H×W in [0,1]
    Tensor mask;   // H×W binary
};

/// Labeled frames grouped per class; references and regression samples
/// never cross groups.
struct TrainSet {
    std::vector<std::vector<TrainExample>> groups;
};

struct LearnerSetup {
    int k_map = 3;
    double lambda = 0.05;
    int train_iters = 10;
    int k_refs = 2;
    int cap_rolling = 6;
    int cap_buffer = 16;
};

struct TrainConfig {
    int epochs = 40;
    double lr0 = 1e-3;
    std::vector<int> decay_epochs = {10, 30};  // lr multiplies by decay_factor after these
    double decay_factor = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    std::uint64_t seed = 42;
};

struct TrainReport {
    std::vector<double> epoch_loss;     // mean combined loss per epoch
    std::vector<double> epoch_lr;
    std::vector<double> epoch_seconds;  // wall time, excluded from determinism checks
    std::uint64_t fusion_checksum = 0;
    std::uint64_t stack_checksum = 0;
    std::uint64_t attention_checksum = 0;
    std::uint64_t tau_checksum = 0;
};

/// Fits FusionParams with BCE + soft-Dice through the frozen decoder.
/// Per frame: references from the other training frames (cosine top-k),
/// mapping weights fit on the seed buffer, then one AdamW step on the
/// fusion parameters. Everything else stays frozen.
std::pair<FusionParams, TrainReport> train_offline(const StackParams& stack,
                                                   const AttentionParams& attn,
                                                   const LearnerSetup& learner,
                                                   const TrainSet& train_set,
                                                   const TrainConfig& cfg);

void save_train_report(const TrainReport& report, const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path);

}  // namespace ofl
