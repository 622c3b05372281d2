#pragma once

// Test-side oracles for the mapping-network solver: a dense ridge
// normal-equations solve built by materializing the convolution as a
// design matrix, plus small helpers. Independent of the production
// steepest-descent path.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ofl/few_shot_learner.hpp"
#include "ofl/rng.hpp"

namespace ofl::test {

struct Problem {
    SampleBuffer buf;
    int C, D, k;
    double lambda;
};

inline Problem random_problem(std::uint64_t seed, int C, int D, int k, int n_samples, int h, int w,
                              double lambda) {
    Rng rng(seed);
    Problem p{SampleBuffer(16), C, D, k, lambda};
    for (int i = 0; i < n_samples; ++i) {
        Tensor f({C, h, w});
        for (std::size_t j = 0; j < f.numel(); ++j) f[j] = static_cast<float>(rng.normal());
        Tensor m({D, h, w});
        for (std::size_t j = 0; j < m.numel(); ++j) m[j] = static_cast<float>(rng.normal());
        p.buf.add_seed(std::move(f), std::move(m));
    }
    return p;
}

inline std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        }
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        if (std::abs(a[col][col]) <= 1e-12) {
            throw std::runtime_error("ridge oracle: singular system");
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
        x[i] = acc / a[i][i];
    }
    return x;
}

// (A^T A + lambda I) tau = A^T b per output channel.
inline Tensor ridge_solve(const Problem& p) {
    const int C = p.C, D = p.D, k = p.k, pad = k / 2;
    const int m = C * k * k;
    Tensor tau({D, C, k, k});
    for (int d = 0; d < D; ++d) {
        std::vector<std::vector<double>> ata(static_cast<std::size_t>(m),
                                             std::vector<double>(static_cast<std::size_t>(m), 0.0));
        std::vector<double> atb(static_cast<std::size_t>(m), 0.0);
        for (const Sample& s : p.buf.samples()) {
            const int H = s.features.extent(1), W = s.features.extent(2);
            std::vector<double> row(static_cast<std::size_t>(m));
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    for (int c = 0; c < C; ++c) {
                        for (int dy = 0; dy < k; ++dy) {
                            for (int dx = 0; dx < k; ++dx) {
                                const int iy = y + dy - pad, ix = x + dx - pad;
                                row[static_cast<std::size_t>((c * k + dy) * k + dx)] =
                                    (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                        ? 0.0
                                        : s.features.at(c, iy, ix);
                            }
                        }
                    }
                    for (int i = 0; i < m; ++i) {
                        if (row[static_cast<std::size_t>(i)] == 0.0) continue;
                        const double wi = s.weight * row[static_cast<std::size_t>(i)];
                        for (int j = 0; j < m; ++j) {
                            ata[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                                wi * row[static_cast<std::size_t>(j)];
                        }
                        atb[static_cast<std::size_t>(i)] += wi * s.target.at(d, y, x);
                    }
                }
            }
        }
        for (int i = 0; i < m; ++i) {
            ata[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += p.lambda;
        }
        const std::vector<double> x = solve_dense(std::move(ata), std::move(atb));
        for (int i = 0; i < m; ++i) {
            tau[static_cast<std::size_t>(d) * m + static_cast<std::size_t>(i)] =
                static_cast<float>(x[static_cast<std::size_t>(i)]);
        }
    }
    return tau;
}

inline double rel_frob_err(const Tensor& a, const Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        num += d * d;
        den += static_cast<double>(b[i]) * b[i];
    }
    return std::sqrt(num / std::max(den, 1e-30));
}

}  // namespace ofl::test
