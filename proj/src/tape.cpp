#include "ofl/tape.hpp"

#include <algorithm>
#include <cmath>

#include "ofl/errors.hpp"

namespace ofl {

int Tape::alloc_slot(const std::vector<int>& dims) {
    grads_.emplace_back(dims);
    return static_cast<int>(grads_.size()) - 1;
}

void Tape::accum(int slot, const Tensor& g) {
    Tensor& dst = grads_[static_cast<std::size_t>(slot)];
    require_shape(dst.same_shape(g), "tape: gradient shape mismatch");
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

TracedTensor Tape::leaf(Tensor value, bool track) {
    TracedTensor t;
    t.slot = track ? alloc_slot(value.dims()) : -1;
    t.value = std::move(value);
    return t;
}

TracedTensor Tape::conv2d(const TracedTensor& x, const TracedTensor& w, const TracedTensor* bias) {
    TracedTensor out;
    out.value = ofl::conv2d(x.value, w.value, bias ? &bias->value : nullptr);
    const bool bias_tracked = bias && bias->tracked();
    if (x.tracked() || w.tracked() || bias_tracked) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, xs = x.slot, ws = w.slot;
        const int bs = bias_tracked ? bias->slot : -1;
        Tensor sx = x.value, sw = w.value;
        ops_.push_back([os, xs, ws, bs, sx = std::move(sx), sw = std::move(sw)](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            Conv2dGrads g = conv2d_grads(up, sx, sw, xs >= 0, ws >= 0, bs >= 0);
            if (xs >= 0) t.accum(xs, g.input);
            if (ws >= 0) t.accum(ws, g.weights);
            if (bs >= 0) t.accum(bs, g.bias);
        });
    }
    return out;
}

TracedTensor Tape::sigmoid(const TracedTensor& x) {
    TracedTensor out;
    out.value = ofl::sigmoid(x.value);
    if (x.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, xs = x.slot;
        Tensor y = out.value;
        ops_.push_back([os, xs, y = std::move(y)](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            Tensor g(y.dims());
            for (std::size_t i = 0; i < y.numel(); ++i) g[i] = up[i] * y[i] * (1.0f - y[i]);
            t.accum(xs, g);
        });
    }
    return out;
}

TracedTensor Tape::relu(const TracedTensor& x) {
    TracedTensor out;
    out.value = ofl::relu(x.value);
    if (x.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, xs = x.slot;
        Tensor sx = x.value;
        ops_.push_back([os, xs, sx = std::move(sx)](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            Tensor g(sx.dims());
            for (std::size_t i = 0; i < sx.numel(); ++i) g[i] = sx[i] > 0.0f ? up[i] : 0.0f;
            t.accum(xs, g);
        });
    }
    return out;
}

TracedTensor Tape::add(const TracedTensor& a, const TracedTensor& b) {
    TracedTensor out;
    out.value = ofl::add(a.value, b.value);
    if (a.tracked() || b.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, as = a.slot, bs = b.slot;
        ops_.push_back([os, as, bs](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            if (as >= 0) t.accum(as, up);
            if (bs >= 0) t.accum(bs, up);
        });
    }
    return out;
}

TracedTensor Tape::mul(const TracedTensor& a, const TracedTensor& b) {
    TracedTensor out;
    out.value = ofl::mul(a.value, b.value);
    if (a.tracked() || b.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, as = a.slot, bs = b.slot;
        Tensor sa = a.value, sb = b.value;
        ops_.push_back([os, as, bs, sa = std::move(sa), sb = std::move(sb)](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            if (as >= 0) t.accum(as, ofl::mul(up, sb));
            if (bs >= 0) t.accum(bs, ofl::mul(up, sa));
        });
    }
    return out;
}

TracedTensor Tape::scale(const TracedTensor& x, float s) {
    TracedTensor out;
    out.value = ofl::scale(x.value, s);
    if (x.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, xs = x.slot;
        ops_.push_back([os, xs, s](Tape& t) {
            t.accum(xs, ofl::scale(t.grads_[static_cast<std::size_t>(os)], s));
        });
    }
    return out;
}

TracedTensor Tape::concat_channels(const TracedTensor& a, const TracedTensor& b) {
    TracedTensor out;
    out.value = ofl::concat_channels(a.value, b.value);
    if (a.tracked() || b.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, as = a.slot, bs = b.slot;
        const auto adims = a.value.dims(), bdims = b.value.dims();
        ops_.push_back([os, as, bs, adims, bdims](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            std::size_t an = 1;
            for (int d : adims) an *= static_cast<std::size_t>(d);
            if (as >= 0) {
                Tensor ga(adims);
                std::copy(up.data(), up.data() + an, ga.data());
                t.accum(as, ga);
            }
            if (bs >= 0) {
                Tensor gb(bdims);
                std::copy(up.data() + an, up.data() + up.numel(), gb.data());
                t.accum(bs, gb);
            }
        });
    }
    return out;
}

TracedTensor Tape::broadcast_mul(const TracedTensor& map, const TracedTensor& x) {
    TracedTensor out;
    out.value = ofl::broadcast_mul_spatialmap(map.value, x.value);
    if (map.tracked() || x.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, ms = map.slot, xs = x.slot;
        Tensor sm = map.value, sx = x.value;
        ops_.push_back([os, ms, xs, sm = std::move(sm), sx = std::move(sx)](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            const int C = sx.extent(0);
            const std::size_t hw = static_cast<std::size_t>(sx.extent(1)) * sx.extent(2);
            if (ms >= 0) {
                Tensor gm(sm.dims());
                for (int c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < hw; ++i) gm[i] += up[c * hw + i] * sx[c * hw + i];
                }
                t.accum(ms, gm);
            }
            if (xs >= 0) {
                Tensor gx(sx.dims());
                for (int c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] = up[c * hw + i] * sm[i];
                }
                t.accum(xs, gx);
            }
        });
    }
    return out;
}

TracedTensor Tape::upsample2x(const TracedTensor& x) {
    TracedTensor out;
    out.value = ofl::upsample2x_nearest(x.value);
    if (x.tracked()) {
        out.slot = alloc_slot(out.value.dims());
        const int os = out.slot, xs = x.slot;
        const auto xdims = x.value.dims();
        ops_.push_back([os, xs, xdims](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            const int C = xdims[0], H = xdims[1], W = xdims[2];
            Tensor g(xdims);
            for (int c = 0; c < C; ++c) {
                for (int y = 0; y < 2 * H; ++y) {
                    const float* urow = up.data() + (static_cast<std::size_t>(c) * 2 * H + y) * 2 * W;
                    float* grow = g.data() + (static_cast<std::size_t>(c) * H + y / 2) * W;
                    for (int xq = 0; xq < 2 * W; ++xq) grow[xq / 2] += urow[xq];
                }
            }
            t.accum(xs, g);
        });
    }
    return out;
}

TracedTensor Tape::reshape(const TracedTensor& x, std::vector<int> dims) {
    TracedTensor out;
    out.value = Tensor(dims, x.value.vec());
    if (x.tracked()) {
        out.slot = alloc_slot(dims);
        const int os = out.slot, xs = x.slot;
        const auto xdims = x.value.dims();
        ops_.push_back([os, xs, xdims](Tape& t) {
            const Tensor& up = t.grads_[static_cast<std::size_t>(os)];
            t.accum(xs, Tensor(xdims, up.vec()));
        });
    }
    return out;
}

TracedTensor Tape::sum(const TracedTensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.value.numel(); ++i) acc += x.value[i];
    TracedTensor out;
    out.value = Tensor::scalar(static_cast<float>(acc));
    if (x.tracked()) {
        out.slot = alloc_slot({1});
        const int os = out.slot, xs = x.slot;
        const auto xdims = x.value.dims();
        ops_.push_back([os, xs, xdims](Tape& t) {
            const float up = t.grads_[static_cast<std::size_t>(os)][0];
            t.accum(xs, Tensor::full(xdims, up));
        });
    }
    return out;
}

namespace {
constexpr double kClamp = 1e-6;
}

TracedTensor Tape::bce(const TracedTensor& pred, const Tensor& gt) {
    TracedTensor out;
    out.value = Tensor::scalar(static_cast<float>(bce_loss(pred.value, gt)));
    if (pred.tracked()) {
        out.slot = alloc_slot({1});
        const int os = out.slot, ps = pred.slot;
        Tensor sp = pred.value, sg = gt;
        ops_.push_back([os, ps, sp = std::move(sp), sg = std::move(sg)](Tape& t) {
            const float up = t.grads_[static_cast<std::size_t>(os)][0];
            const double n = static_cast<double>(sp.numel());
            Tensor g(sp.dims());
            for (std::size_t i = 0; i < sp.numel(); ++i) {
                const double p = sp[i];
                if (p <= kClamp || p >= 1.0 - kClamp) continue;  // clamp plateau
                const double d = (-static_cast<double>(sg[i]) / p +
                                  (1.0 - sg[i]) / (1.0 - p)) / n;
                g[i] = static_cast<float>(up * d);
            }
            t.accum(ps, g);
        });
    }
    return out;
}

TracedTensor Tape::soft_dice(const TracedTensor& pred, const Tensor& gt) {
    TracedTensor out;
    out.value = Tensor::scalar(static_cast<float>(soft_dice_loss(pred.value, gt)));
    if (pred.tracked()) {
        out.slot = alloc_slot({1});
        const int os = out.slot, ps = pred.slot;
        Tensor sp = pred.value, sg = gt;
        ops_.push_back([os, ps, sp = std::move(sp), sg = std::move(sg)](Tape& t) {
            const float up = t.grads_[static_cast<std::size_t>(os)][0];
            constexpr double eps = 1.0;
            double inter = 0.0, psum = 0.0, gsum = 0.0;
            for (std::size_t i = 0; i < sp.numel(); ++i) {
                const double p = std::clamp(static_cast<double>(sp[i]), kClamp, 1.0 - kClamp);
                inter += p * sg[i];
                psum += p;
                gsum += sg[i];
            }
            const double denom = psum + gsum + eps;
            const double num = 2.0 * inter + eps;
            Tensor g(sp.dims());
            for (std::size_t i = 0; i < sp.numel(); ++i) {
                const double p = sp[i];
                if (p <= kClamp || p >= 1.0 - kClamp) continue;
                const double d = (num - 2.0 * sg[i] * denom) / (denom * denom);
                g[i] = static_cast<float>(up * d);
            }
            t.accum(ps, g);
        });
    }
    return out;
}

void Tape::backward(const TracedTensor& root) {
    if (!root.tracked()) throw StateError("tape backward: root is not tracked");
    if (root.value.numel() != 1) throw StateError("tape backward: root must be a scalar");
    if (ran_backward_) throw StateError("tape backward: already ran on this tape");
    ran_backward_ = true;
    grads_[static_cast<std::size_t>(root.slot)][0] = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
}

const Tensor& Tape::grad(const TracedTensor& t) const {
    if (!t.tracked()) throw StateError("tape grad: tensor is not tracked");
    if (!ran_backward_) throw StateError("tape grad: backward has not run");
    return grads_[static_cast<std::size_t>(t.slot)];
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
    Tensor analytic;
    {
        Tape tape;
        TracedTensor tx = tape.leaf(x, true);
        TracedTensor y = f(tape, tx);
        tape.backward(y);
        analytic = tape.grad(tx);
    }
    auto eval = [&f](const Tensor& v) {
        Tape tape;
        TracedTensor y = f(tape, tape.leaf(v, false));
        return static_cast<double>(y.value[0]);
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float orig = probe[i];
        probe[i] = static_cast<float>(orig + eps);
        const double hi = eval(probe);
        probe[i] = static_cast<float>(orig - eps);
        const double lo = eval(probe);
        probe[i] = orig;
        const double numeric = (hi - lo) / (2.0 * eps);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace ofl
