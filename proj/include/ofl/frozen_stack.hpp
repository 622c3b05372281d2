#pragma once

#include <cstdint>
#include <filesystem>

#include "ofl/tape.hpp"
#include "ofl/tensor.hpp"

namespace ofl {

struct ConvLayer {
    Tensor w;  // O×C×k×k
    Tensor b;  // O
};

/// Seeded stand-ins for the frozen video-segmentation backbone: image
/// encoder (two stride-2 conv+relu stages, 3→C/2→C), memory encoder
/// (conv over features + pooled mask, C+1→C→D) and mask decoder
/// (C→C/2→1, two 2x nearest upsamples, sigmoid). Weights are a pure
/// function of (seed, C, D) and are never updated.
struct StackParams {
    std::uint64_t seed = 0;
    int C = 0;
    int D = 0;
    ConvLayer enc1, enc2;  // stride-2
    ConvLayer mem1, mem2;
    ConvLayer dec1, dec2;
};

/// Kaiming-uniform weights (uniform(-a, a), a = sqrt(6/fan_in)) drawn from
/// the SplitMix64 counter stream; biases start at zero.
StackParams init_stack(std::uint64_t seed, int C, int D);

/// 3×H×W image in [0,1] -> C×H/4×W/4 features. Tape-free.
Tensor encode_image(const StackParams& p, const Tensor& image);

/// Features + mask probabilities (H×W in [0,1], pooled to the feature grid)
/// -> D×H'×W' memory feature.
Tensor encode_memory(const StackParams& p, const Tensor& feats, const Tensor& mask_prob);

/// C×H'×W' fused features -> H×W probability map.
Tensor decode_mask(const StackParams& p, const Tensor& fused);

/// Taped variant: gradients flow through to `fused`; decoder parameters
/// stay constants on the tape.
TracedTensor decode_mask(const StackParams& p, Tape& tape, const TracedTensor& fused);

std::uint64_t stack_checksum(const StackParams& p);

/// Directory of .otns files plus a stack.json manifest {seed, C, D, layers}.
void save_stack(const StackParams& p, const std::filesystem::path& dir);
StackParams load_stack(const std::filesystem::path& dir);

}  // namespace ofl
