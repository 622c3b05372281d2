#include "ofl/few_shot_learner.hpp"

#include <algorithm>
#include <fstream>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"

namespace ofl {

MappingWeights zero_mapping(int C, int D, int k, double lambda) {
    if (lambda <= 0.0) throw ConfigError("mapping weights: lambda must be > 0");
    if (k < 1 || k % 2 == 0) throw ConfigError("mapping weights: kernel size must be odd");
    MappingWeights mw;
    mw.tau = Tensor({D, C, k, k});
    mw.lambda = lambda;
    return mw;
}

SampleBuffer::SampleBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("sample buffer: capacity must be >= 1");
}

void SampleBuffer::check_shapes(const Tensor& features, const Tensor& target) const {
    require_shape(features.ndim() == 3 && target.ndim() == 3,
                  "sample buffer: features and target must be 3-D maps");
    require_shape(features.extent(1) == target.extent(1) && features.extent(2) == target.extent(2),
                  "sample buffer: feature/target spatial dims differ");
    if (!samples_.empty()) {
        require_shape(features.same_shape(samples_.front().features) &&
                          target.same_shape(samples_.front().target),
                      "sample buffer: sample shape does not match buffer");
    }
}

void SampleBuffer::add_seed(Tensor features, Tensor target, double weight) {
    check_shapes(features, target);
    samples_.push_back({std::move(features), std::move(target), weight, true});
}

void SampleBuffer::add_online(Tensor features, Tensor target, double weight) {
    check_shapes(features, target);
    samples_.push_back({std::move(features), std::move(target), weight, false});
    while (samples_.size() > static_cast<std::size_t>(capacity_)) {
        auto victim = std::find_if(samples_.begin(), samples_.end(),
                                   [](const Sample& s) { return !s.seed_sample; });
        if (victim == samples_.end()) break;  // all seeds; allow overflow
        samples_.erase(victim);
    }
}

std::uint64_t SampleBuffer::state_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const Sample& s : samples_) {
        h = checksum(s.features, h);
        h = checksum(s.target, h);
        h = fnv1a64(&s.weight, sizeof(s.weight), h);
        const unsigned char seed = s.seed_sample ? 1 : 0;
        h = fnv1a64(&seed, 1, h);
    }
    return h;
}

double learner_loss(const MappingWeights& mw, const SampleBuffer& buf) {
    if (buf.empty()) throw StateError("learner loss: empty sample buffer");
    double acc = 0.0;
    for (const Sample& s : buf.samples()) {
        Tensor pred = conv2d(s.features, mw.tau);
        require_shape(pred.same_shape(s.target), "learner loss: target shape mismatch");
        double r2 = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const double r = static_cast<double>(pred[i]) - s.target[i];
            r2 += r * r;
        }
        acc += 0.5 * s.weight * r2;
    }
    acc += 0.5 * mw.lambda * sum_sq(mw.tau);
    return acc;
}

SdStepResult sd_step(const MappingWeights& mw, const SampleBuffer& buf) {
    if (buf.empty()) throw StateError("sd step: empty sample buffer");
    SdStepResult res;

    // One residual pass feeds both the loss and the gradient:
    // g = sum_i w_i * dconv/dtau(F_i, residual_i) + lambda * tau
    Tensor g = scale(mw.tau, static_cast<float>(mw.lambda));
    double data_loss = 0.0;
    for (const Sample& s : buf.samples()) {
        Tensor pred = conv2d(s.features, mw.tau);
        require_shape(pred.same_shape(s.target), "sd step: target shape mismatch");
        double r2 = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const double r = static_cast<double>(pred[i]) - s.target[i];
            r2 += r * r;
        }
        data_loss += 0.5 * s.weight * r2;
        Tensor residual = sub(pred, s.target);
        Conv2dGrads cg = conv2d_grads(residual, s.features, mw.tau,
                                      /*need_input=*/false, /*need_weights=*/true);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            g[i] += static_cast<float>(s.weight) * cg.weights[i];
        }
    }
    res.loss_before = data_loss + 0.5 * mw.lambda * sum_sq(mw.tau);

    const double gg = sum_sq(g);
    if (gg < 1e-20) {
        res.weights = mw;
        res.loss_after = res.loss_before;
        res.step_len = 0.0;
        return res;
    }

    // Exact line search on the quadratic: alpha = <g,g> / (g^T H g).
    double denom = mw.lambda * gg;
    for (const Sample& s : buf.samples()) {
        denom += s.weight * sum_sq(conv2d(s.features, g));
    }
    const double alpha = gg / denom;

    res.weights.lambda = mw.lambda;
    res.weights.tau = mw.tau;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        res.weights.tau[i] -= static_cast<float>(alpha * g[i]);
    }
    res.loss_after = learner_loss(res.weights, buf);
    res.step_len = alpha;
    return res;
}

FitResult fit(const SampleBuffer& buf, int iters, const MappingWeights& init) {
    if (buf.empty()) throw StateError("fit: empty sample buffer");
    if (iters < 0) throw ConfigError("fit: iteration count must be >= 0");
    FitResult res;
    res.weights = init;
    res.trace.reserve(static_cast<std::size_t>(iters) + 1);
    res.trace.push_back(learner_loss(res.weights, buf));
    for (int i = 0; i < iters; ++i) {
        SdStepResult step = sd_step(res.weights, buf);
        res.weights = std::move(step.weights);
        res.trace.push_back(step.loss_after);
    }
    return res;
}

Tensor apply_mapping(const MappingWeights& mw, const Tensor& fq) {
    return conv2d(fq, mw.tau);
}

FitResult online_refine(MappingWeights& mw, SampleBuffer& buf, Tensor features, Tensor target,
                        int iters) {
    buf.add_online(std::move(features), std::move(target));
    FitResult res = fit(buf, iters, mw);
    mw = res.weights;
    return res;
}

void write_loss_trace_csv(const std::vector<double>& trace, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "iteration,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        f << i << ',' << trace[i] << '\n';
    }
}

}  // namespace ofl
