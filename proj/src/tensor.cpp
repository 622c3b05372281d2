#include "ofl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ofl {

namespace {

std::size_t checked_numel(const std::vector<int>& dims) {
    if (dims.empty() || dims.size() > 4) {
        throw ShapeError("tensor must have 1-4 axes, got " + std::to_string(dims.size()));
    }
    std::size_t n = 1;
    for (int d : dims) {
        if (d < 1) throw ShapeError("tensor extents must be >= 1");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    data_.assign(checked_numel(dims_), 0.0f);
}

Tensor::Tensor(std::vector<int> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    if (checked_numel(dims_) != data_.size()) {
        throw ShapeError("tensor data length does not match extents");
    }
}

Tensor Tensor::full(std::vector<int> dims, float value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// --- convolution ---------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor* bias, int stride) {
    require_shape(input.ndim() == 3, "conv2d: input must be C×H×W, got " + input.shape_str());
    require_shape(weights.ndim() == 4, "conv2d: weights must be O×C×k×k, got " + weights.shape_str());
    const int C = input.extent(0), H = input.extent(1), W = input.extent(2);
    const int O = weights.extent(0), k = weights.extent(2);
    require_shape(weights.extent(1) == C, "conv2d: weight channel count " +
                                              std::to_string(weights.extent(1)) +
                                              " does not match input channels " + std::to_string(C));
    require_shape(weights.extent(3) == k, "conv2d: kernel must be square");
    require_shape(k % 2 == 1, "conv2d: kernel size must be odd");
    require_shape(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    if (bias) {
        require_shape(bias->ndim() == 1 && bias->extent(0) == O,
                      "conv2d: bias must have one entry per output channel");
    }
    const int p = k / 2;
    const int Ho = (stride == 1) ? H : (H + 1) / 2;
    const int Wo = (stride == 1) ? W : (W + 1) / 2;

    Tensor out({O, Ho, Wo});
    float* od = out.data();
    const float* id = input.data();
    const float* wd = weights.data();

    for (int o = 0; o < O; ++o) {
        float* oo = od + static_cast<std::size_t>(o) * Ho * Wo;
        if (bias) {
            const float bv = (*bias)[static_cast<std::size_t>(o)];
            std::fill(oo, oo + static_cast<std::size_t>(Ho) * Wo, bv);
        }
        for (int c = 0; c < C; ++c) {
            const float* ic = id + static_cast<std::size_t>(c) * H * W;
            const float* wc = wd + (static_cast<std::size_t>(o) * C + c) * k * k;
            for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                    const float wv = wc[dy * k + dx];
                    if (wv == 0.0f) continue;
                    if (stride == 1) {
                        // out[y][x] += wv * in[y+dy-p][x+dx-p] over in-range pixels
                        const int y0 = std::max(0, p - dy), y1 = std::min(H, H + p - dy);
                        const int x0 = std::max(0, p - dx), x1 = std::min(W, W + p - dx);
                        for (int y = y0; y < y1; ++y) {
                            float* orow = oo + static_cast<std::size_t>(y) * Wo;
                            const float* irow = ic + static_cast<std::size_t>(y + dy - p) * W + (dx - p);
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    } else {
                        for (int y = 0; y < Ho; ++y) {
                            const int iy = 2 * y + dy - p;
                            if (iy < 0 || iy >= H) continue;
                            float* orow = oo + static_cast<std::size_t>(y) * Wo;
                            const float* irow = ic + static_cast<std::size_t>(iy) * W;
                            for (int x = 0; x < Wo; ++x) {
                                const int ix = 2 * x + dx - p;
                                if (ix < 0 || ix >= W) continue;
                                orow[x] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_grads(const Tensor& upstream, const Tensor& input, const Tensor& weights,
                         bool need_input, bool need_weights, bool need_bias) {
    require_shape(upstream.ndim() == 3 && input.ndim() == 3 && weights.ndim() == 4,
                  "conv2d_grads: rank mismatch");
    const int C = input.extent(0), H = input.extent(1), W = input.extent(2);
    const int O = weights.extent(0), k = weights.extent(2);
    require_shape(upstream.extent(0) == O && upstream.extent(1) == H && upstream.extent(2) == W,
                  "conv2d_grads: upstream shape " + upstream.shape_str() +
                      " inconsistent with forward output");
    require_shape(weights.extent(1) == C && weights.extent(3) == k && k % 2 == 1,
                  "conv2d_grads: weight shape inconsistent with input");
    const int p = k / 2;

    Conv2dGrads g;
    const float* ud = upstream.data();
    const float* id = input.data();
    const float* wd = weights.data();

    if (need_input) {
        g.input = Tensor({C, H, W});
        float* gd = g.input.data();
        // gin[c][y][x] = sum_{o,dy,dx} w[o][c][dy][dx] * up[o][y-dy+p][x-dx+p]
        for (int c = 0; c < C; ++c) {
            float* gc = gd + static_cast<std::size_t>(c) * H * W;
            for (int o = 0; o < O; ++o) {
                const float* uo = ud + static_cast<std::size_t>(o) * H * W;
                const float* wc = wd + (static_cast<std::size_t>(o) * C + c) * k * k;
                for (int dy = 0; dy < k; ++dy) {
                    for (int dx = 0; dx < k; ++dx) {
                        const float wv = wc[dy * k + dx];
                        if (wv == 0.0f) continue;
                        const int y0 = std::max(0, dy - p), y1 = std::min(H, H + dy - p);
                        const int x0 = std::max(0, dx - p), x1 = std::min(W, W + dx - p);
                        for (int y = y0; y < y1; ++y) {
                            float* grow = gc + static_cast<std::size_t>(y) * W;
                            const float* urow = uo + static_cast<std::size_t>(y - dy + p) * W + (p - dx);
                            for (int x = x0; x < x1; ++x) grow[x] += wv * urow[x];
                        }
                    }
                }
            }
        }
    }
    if (need_weights) {
        g.weights = Tensor({O, C, k, k});
        float* gw = g.weights.data();
        for (int o = 0; o < O; ++o) {
            const float* uo = ud + static_cast<std::size_t>(o) * H * W;
            for (int c = 0; c < C; ++c) {
                const float* ic = id + static_cast<std::size_t>(c) * H * W;
                float* gwc = gw + (static_cast<std::size_t>(o) * C + c) * k * k;
                for (int dy = 0; dy < k; ++dy) {
                    for (int dx = 0; dx < k; ++dx) {
                        const int y0 = std::max(0, p - dy), y1 = std::min(H, H + p - dy);
                        const int x0 = std::max(0, p - dx), x1 = std::min(W, W + p - dx);
                        float acc = 0.0f;
                        for (int y = y0; y < y1; ++y) {
                            const float* urow = uo + static_cast<std::size_t>(y) * W;
                            const float* irow = ic + static_cast<std::size_t>(y + dy - p) * W + (dx - p);
                            for (int x = x0; x < x1; ++x) acc += urow[x] * irow[x];
                        }
                        gwc[dy * k + dx] = acc;
                    }
                }
            }
        }
    }
    if (need_bias) {
        g.bias = Tensor({O});
        for (int o = 0; o < O; ++o) {
            double acc = 0.0;
            const float* uo = ud + static_cast<std::size_t>(o) * H * W;
            for (int i = 0; i < H * W; ++i) acc += uo[i];
            g.bias[static_cast<std::size_t>(o)] = static_cast<float>(acc);
        }
    }
    return g;
}

// --- elementwise ---------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        y[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    }
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_shape(a.same_shape(b), "add: shapes " + a.shape_str() + " vs " + b.shape_str());
    Tensor y(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_shape(a.same_shape(b), "sub: shapes " + a.shape_str() + " vs " + b.shape_str());
    Tensor y(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] - b[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_shape(a.same_shape(b), "mul: shapes " + a.shape_str() + " vs " + b.shape_str());
    Tensor y(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
    return y;
}

Tensor scale(const Tensor& x, float s) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = s * x[i];
    return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_shape(a.ndim() == 3 && b.ndim() == 3, "concat_channels: operands must be C×H×W");
    require_shape(a.extent(1) == b.extent(1) && a.extent(2) == b.extent(2),
                  "concat_channels: spatial dims " + a.shape_str() + " vs " + b.shape_str());
    const int C1 = a.extent(0), C2 = b.extent(0), H = a.extent(1), W = a.extent(2);
    Tensor y({C1 + C2, H, W});
    std::copy(a.data(), a.data() + a.numel(), y.data());
    std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
    return y;
}

Tensor broadcast_mul_spatialmap(const Tensor& map, const Tensor& x) {
    require_shape(map.ndim() == 3 && map.extent(0) == 1, "broadcast_mul: map must be 1×H×W");
    require_shape(x.ndim() == 3 && x.extent(1) == map.extent(1) && x.extent(2) == map.extent(2),
                  "broadcast_mul: spatial dims " + map.shape_str() + " vs " + x.shape_str());
    const int C = x.extent(0);
    const std::size_t hw = static_cast<std::size_t>(x.extent(1)) * x.extent(2);
    Tensor y(x.dims());
    for (int c = 0; c < C; ++c) {
        const float* xc = x.data() + c * hw;
        float* yc = y.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) yc[i] = map[i] * xc[i];
    }
    return y;
}

Tensor upsample2x_nearest(const Tensor& x) {
    require_shape(x.ndim() == 3, "upsample2x: input must be C×H×W");
    const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
    Tensor y({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c) {
        for (int yy = 0; yy < 2 * H; ++yy) {
            const float* irow = x.data() + (static_cast<std::size_t>(c) * H + yy / 2) * W;
            float* orow = y.data() + (static_cast<std::size_t>(c) * 2 * H + yy) * 2 * W;
            for (int xx = 0; xx < 2 * W; ++xx) orow[xx] = irow[xx / 2];
        }
    }
    return y;
}

Tensor avgpool_to_channel(const Tensor& mask, int factor) {
    require_shape(mask.ndim() == 2, "avgpool: input must be H×W");
    const int H = mask.extent(0), W = mask.extent(1);
    require_shape(H % factor == 0 && W % factor == 0, "avgpool: dims must divide by factor");
    const int Ho = H / factor, Wo = W / factor;
    Tensor y({1, Ho, Wo});
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
            double acc = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                    acc += mask.at(i * factor + dy, j * factor + dx);
                }
            }
            y[static_cast<std::size_t>(i) * Wo + j] = static_cast<float>(acc * inv);
        }
    }
    return y;
}

// --- attention -----------------------------------------------------------

Tensor attention_core(const Tensor& queries, const Tensor& keys, const Tensor& values) {
    require_shape(queries.ndim() == 2 && keys.ndim() == 2 && values.ndim() == 2,
                  "attention_core: operands must be 2-D");
    const int Nq = queries.extent(0), d = queries.extent(1);
    const int Nk = keys.extent(0);
    require_shape(keys.extent(1) == d, "attention_core: key dim mismatch");
    require_shape(values.extent(0) == Nk && values.extent(1) == d,
                  "attention_core: values must be Nk×d");

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out({Nq, d});
    std::vector<double> row(static_cast<std::size_t>(Nk));
    for (int i = 0; i < Nq; ++i) {
        const float* q = queries.data() + static_cast<std::size_t>(i) * d;
        double mx = -1e300;
        for (int j = 0; j < Nk; ++j) {
            const float* kk = keys.data() + static_cast<std::size_t>(j) * d;
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += static_cast<double>(q[c]) * kk[c];
            row[static_cast<std::size_t>(j)] = s * inv_sqrt_d;
            mx = std::max(mx, row[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (int j = 0; j < Nk; ++j) {
            row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
            z += row[static_cast<std::size_t>(j)];
        }
        float* o = out.data() + static_cast<std::size_t>(i) * d;
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int j = 0; j < Nk; ++j) {
                acc += row[static_cast<std::size_t>(j)] * values.data()[static_cast<std::size_t>(j) * d + c];
            }
            o[c] = static_cast<float>(acc / z);
        }
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    require_shape(x.ndim() == 2 && w.ndim() == 2, "linear: operands must be 2-D");
    const int N = x.extent(0), in = x.extent(1), out = w.extent(0);
    require_shape(w.extent(1) == in, "linear: weight in-dim " + w.shape_str() +
                                         " vs input " + x.shape_str());
    if (bias) require_shape(bias->ndim() == 1 && bias->extent(0) == out, "linear: bias dim");
    Tensor y({N, out});
    for (int i = 0; i < N; ++i) {
        const float* xi = x.data() + static_cast<std::size_t>(i) * in;
        float* yi = y.data() + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            const float* wo = w.data() + static_cast<std::size_t>(o) * in;
            double acc = bias ? static_cast<double>((*bias)[static_cast<std::size_t>(o)]) : 0.0;
            for (int c = 0; c < in; ++c) acc += static_cast<double>(xi[c]) * wo[c];
            yi[o] = static_cast<float>(acc);
        }
    }
    return y;
}

// --- losses --------------------------------------------------------------

namespace {

void require_binary(const Tensor& gt, const char* who) {
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        if (gt[i] != 0.0f && gt[i] != 1.0f) {
            throw ValidationError(std::string(who) + ": ground truth must be binary");
        }
    }
}

constexpr double kClamp = 1e-6;

}  // namespace

double bce_loss(const Tensor& pred, const Tensor& gt) {
    require_shape(pred.same_shape(gt), "bce: shapes " + pred.shape_str() + " vs " + gt.shape_str());
    require_binary(gt, "bce");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), kClamp, 1.0 - kClamp);
        const double g = gt[i];
        acc += g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    }
    return -acc / static_cast<double>(pred.numel());
}

double soft_dice_loss(const Tensor& pred, const Tensor& gt) {
    require_shape(pred.same_shape(gt), "soft_dice: shapes " + pred.shape_str() + " vs " + gt.shape_str());
    require_binary(gt, "soft_dice");
    constexpr double eps = 1.0;
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), kClamp, 1.0 - kClamp);
        inter += p * gt[i];
        psum += p;
        gsum += gt[i];
    }
    return 1.0 - (2.0 * inter + eps) / (psum + gsum + eps);
}

std::pair<double, double> losses(const Tensor& pred, const Tensor& gt) {
    return {bce_loss(pred, gt), soft_dice_loss(pred, gt)};
}

// --- reductions ----------------------------------------------------------

double dot(const Tensor& a, const Tensor& b) {
    require_shape(a.numel() == b.numel(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

double sum_sq(const Tensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x[i]) * x[i];
    return acc;
}

double frob_norm(const Tensor& x) { return std::sqrt(sum_sq(x)); }

}  // namespace ofl
