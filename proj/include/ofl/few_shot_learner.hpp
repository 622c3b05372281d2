#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ofl/tensor.hpp"

namespace ofl {

/// Mapping-network parameters: a single bias-free convolution taking
/// C-channel generic features to D-channel target features, plus the
/// ridge regularizer.
struct MappingWeights {
    Tensor tau;           // D×C×k×k
    double lambda = 0.05;  // > 0
};

MappingWeights zero_mapping(int C, int D, int k, double lambda);

struct Sample {
    Tensor features;  // C×H'×W'
    Tensor target;    // D×H'×W'
    double weight = 1.0;
    bool seed_sample = false;
};

/// Regression samples for the mapping network. Seed samples come from the
/// labeled training set and are never evicted; online samples leave
/// oldest-first once the buffer is over capacity.
class SampleBuffer {
public:
    explicit SampleBuffer(int capacity = 16);

    void add_seed(Tensor features, Tensor target, double weight = 1.0);
    void add_online(Tensor features, Tensor target, double weight = 1.0);

    const std::vector<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    int capacity() const { return capacity_; }

    std::uint64_t state_checksum() const;

private:
    void check_shapes(const Tensor& features, const Tensor& target) const;
    int capacity_;
    std::vector<Sample> samples_;
};

/// L(tau) = 1/2 sum_i w_i ||conv(F_i, tau) - M_i||^2 + lambda/2 ||tau||^2,
/// Frobenius norms, f64 accumulation.
double learner_loss(const MappingWeights& mw, const SampleBuffer& buf);

struct SdStepResult {
    MappingWeights weights;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double step_len = 0.0;
};

/// One steepest-descent step with the exact line search for the quadratic
/// objective: alpha = <g,g> / (sum_i w_i ||conv(F_i, g)||^2 + lambda <g,g>).
/// Degenerate gradients (<g,g> < 1e-20) produce a no-op with step_len 0.
SdStepResult sd_step(const MappingWeights& mw, const SampleBuffer& buf);

struct FitResult {
    MappingWeights weights;
    std::vector<double> trace;  // trace[0] = initial loss, then one entry per step
};

FitResult fit(const SampleBuffer& buf, int iters, const MappingWeights& init);

/// conv(fq, tau), no bias: C×H'×W' -> D×H'×W'.
Tensor apply_mapping(const MappingWeights& mw, const Tensor& fq);

/// Appends the sample (weight 1.0), then fits for `iters` steps starting
/// from the current weights.
FitResult online_refine(MappingWeights& mw, SampleBuffer& buf, Tensor features, Tensor target,
                        int iters = 5);

/// "iteration,loss" CSV for convergence plots.
void write_loss_trace_csv(const std::vector<double>& trace, const std::filesystem::path& path);

}  // namespace ofl
