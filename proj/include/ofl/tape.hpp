#pragma once

#include <functional>
#include <vector>

#include "ofl/tensor.hpp"

namespace ofl {

/// A tensor flowing through taped computation. slot < 0 means the value is
/// a constant: no gradient is ever materialized for it.
struct TracedTensor {
    Tensor value;
    int slot = -1;
    bool tracked() const { return slot >= 0; }
};

/// Reverse-mode tape over the op set used by the trainable path. Ops record
/// a backward closure only when an operand is tracked; backward() replays
/// the closures in exact reverse execution order. One tape per logical
/// thread of execution.
class Tape {
public:
    TracedTensor leaf(Tensor value, bool track = false);

    TracedTensor conv2d(const TracedTensor& x, const TracedTensor& w,
                        const TracedTensor* bias = nullptr);
    TracedTensor sigmoid(const TracedTensor& x);
    TracedTensor relu(const TracedTensor& x);
    TracedTensor add(const TracedTensor& a, const TracedTensor& b);
    TracedTensor mul(const TracedTensor& a, const TracedTensor& b);
    TracedTensor scale(const TracedTensor& x, float s);
    TracedTensor concat_channels(const TracedTensor& a, const TracedTensor& b);
    TracedTensor broadcast_mul(const TracedTensor& map, const TracedTensor& x);
    TracedTensor upsample2x(const TracedTensor& x);
    TracedTensor reshape(const TracedTensor& x, std::vector<int> dims);

    /// Sum of all entries; dims {1}. f64 accumulation.
    TracedTensor sum(const TracedTensor& x);

    /// Mean binary cross-entropy against a constant binary target; dims {1}.
    TracedTensor bce(const TracedTensor& pred, const Tensor& gt);
    /// Soft Dice loss against a constant binary target; dims {1}.
    TracedTensor soft_dice(const TracedTensor& pred, const Tensor& gt);

    /// Seeds d(root)/d(root) = 1 and replays the tape. root must be a
    /// tracked scalar.
    void backward(const TracedTensor& root);

    /// Accumulated gradient of a tracked tensor after backward().
    const Tensor& grad(const TracedTensor& t) const;

    std::size_t num_ops() const { return ops_.size(); }

private:
    int alloc_slot(const std::vector<int>& dims);
    void accum(int slot, const Tensor& g);

    std::vector<Tensor> grads_;
    std::vector<std::function<void(Tape&)>> ops_;
    bool ran_backward_ = false;
};

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// numeric by central differences with the given step.
using ScalarFn = std::function<TracedTensor(Tape&, const TracedTensor&)>;
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-2);

}  // namespace ofl
