#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ofl/tensor.hpp"

namespace ofl {

// --- metrics ---------------------------------------------------------------

/// 2|P∩G| / (|P|+|G|); both masks empty -> 1.0.
double dice(const Tensor& pred, const Tensor& gt);

/// Symmetric average Hausdorff distance between 4-connectivity boundaries,
/// Euclidean, in pixels. Exactly one empty boundary -> image diagonal;
/// both empty -> 0.
double avg_hausdorff(const Tensor& pred, const Tensor& gt);

/// Foreground pixels with a background (or out-of-image) 4-neighbour.
std::vector<std::pair<int, int>> boundary_pixels(const Tensor& mask);

// --- dataset ---------------------------------------------------------------

struct SequenceRecord {
    std::string id;
    std::string split;  // "train" or "test"
    std::vector<std::filesystem::path> frames;
    std::map<std::string, std::vector<std::filesystem::path>> masks;
};

struct SequenceDataset {
    int H = 0, W = 0;
    std::vector<std::string> classes;
    std::vector<SequenceRecord> sequences;
    std::filesystem::path manifest_path;
    std::uint64_t manifest_checksum = 0;

    std::vector<const SequenceRecord*> split(const std::string& tag) const;
};

/// Synthetic distractor benchmark: per sequence one drifting bright target
/// ellipse plus nearby distractor ellipses whose intensity sits within
/// `distractor_gap` of the target's, Gaussian boundary blur, additive
/// noise. Fully determined by the parameter set.
struct GenParams {
    std::uint64_t seed = 42;
    int n_sequences = 12;
    int train_sequences = 2;
    int frames_per_sequence = 8;
    int size = 64;  // square, multiple of 4
    double radius_min = 7.0;
    double radius_max = 12.0;
    int n_distractors = 3;
    double distractor_gap = 0.08;  // intensity distance to the target
    double blur_sigma = 1.0;
    double drift = 1.2;  // per-frame center motion, pixels
    double noise_sigma = 0.02;
};

SequenceDataset gen_synthetic(const GenParams& gp, const std::filesystem::path& out_dir);

SequenceDataset load_dataset(const std::filesystem::path& manifest_path);

/// 3×H×W image tensor from an .otns file, validated against the dataset
/// resolution when given.
Tensor load_image(const std::filesystem::path& path, int expect_h = -1, int expect_w = -1);

/// Binary H×W mask from a PGM file, thresholded at 128.
Tensor load_mask(const std::filesystem::path& path, int expect_h = -1, int expect_w = -1);

/// Grayscale PGM of the image with the mask boundary forced to white.
void render_overlay(const Tensor& image, const Tensor& mask, const std::filesystem::path& out);

// --- PGM -------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, int w, int h,
               const std::vector<unsigned char>& data);
struct PgmImage {
    int w = 0, h = 0;
    std::vector<unsigned char> data;
};
PgmImage read_pgm(const std::filesystem::path& path);

/// Binary mask H×W -> PGM with foreground 255.
void write_mask_pgm(const Tensor& mask, const std::filesystem::path& path);

}  // namespace ofl
