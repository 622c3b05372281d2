#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ofl/errors.hpp"

namespace ofl {

/// Dense row-major f32 tensor with 1-4 axes. Value-semantic; reductions
/// that feed scalar decisions accumulate in f64 (see individual ops).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims);
    Tensor(std::vector<int> dims, std::vector<float> data);

    static Tensor full(std::vector<int> dims, float value);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    const std::vector<int>& dims() const { return dims_; }
    int ndim() const { return static_cast<int>(dims_.size()); }
    int extent(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Unchecked row-major indexing.
    float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }
    float& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
    }
    float at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
    std::string shape_str() const;

private:
    std::vector<int> dims_;
    std::vector<float> data_;
};

void require_shape(bool ok, const std::string& what);

// --- convolution ---------------------------------------------------------

/// Same-padded 2-D convolution: input C×H×W, weights O×C×k×k (k odd),
/// optional bias O. stride 1 keeps the spatial size; stride 2 halves it.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor* bias = nullptr,
              int stride = 1);

struct Conv2dGrads {
    Tensor input;    // C×H×W
    Tensor weights;  // O×C×k×k
    Tensor bias;     // O (empty when not requested)
};

/// Backward pass of the stride-1 convolution for the given upstream gradient.
Conv2dGrads conv2d_grads(const Tensor& upstream, const Tensor& input, const Tensor& weights,
                         bool need_input = true, bool need_weights = true,
                         bool need_bias = false);

// --- elementwise ---------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);

/// Stack b's channels after a's; spatial dims must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Multiply a 1×H×W map into every channel of a C×H×W tensor.
Tensor broadcast_mul_spatialmap(const Tensor& map, const Tensor& x);

/// Nearest-neighbour 2x spatial upsampling of a C×H×W tensor.
Tensor upsample2x_nearest(const Tensor& x);

/// Mean over non-overlapping f×f blocks of an H×W map; returns 1×(H/f)×(W/f).
Tensor avgpool_to_channel(const Tensor& mask, int factor);

// --- attention -----------------------------------------------------------

/// softmax(Q K^T / sqrt(d)) V with row-wise softmax. Q: Nq×d, K,V: Nk×d.
/// Scores and softmax accumulate in f64.
Tensor attention_core(const Tensor& queries, const Tensor& keys, const Tensor& values);

/// y = x W^T (+ bias). x: N×In, w: Out×In, bias: Out. f64 row accumulation.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// --- losses --------------------------------------------------------------

/// Binary cross-entropy, mean over pixels; pred clamped to [1e-6, 1-1e-6].
double bce_loss(const Tensor& pred, const Tensor& gt);

/// 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps = 1.
double soft_dice_loss(const Tensor& pred, const Tensor& gt);

/// (bce, soft_dice); the combined training loss is their sum.
std::pair<double, double> losses(const Tensor& pred, const Tensor& gt);

// --- reductions ----------------------------------------------------------

double dot(const Tensor& a, const Tensor& b);    // f64 accumulation
double sum_sq(const Tensor& x);                  // f64 accumulation
double frob_norm(const Tensor& x);

}  // namespace ofl
