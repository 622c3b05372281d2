// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "support/solver_oracles.hpp"

#include "ofl/checksum.hpp"
#include "ofl/cli.hpp"
#include "ofl/eval_data.hpp"
#include "ofl/few_shot_learner.hpp"
#include "ofl/frozen_stack.hpp"
#include "ofl/fusion.hpp"
#include "ofl/memory_attention.hpp"
#include "ofl/pipeline.hpp"
#include "ofl/rng.hpp"
#include "ofl/tape.hpp"

using namespace ofl;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
fs::path g_ws;

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(int idx, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %d. %s (%s)\n", pass ? "PASS" : "FAIL", idx, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

struct Check {
    bool ok = true;
    std::ostringstream why;
    void expect(bool cond, const std::string& msg) {
        if (!cond) {
            if (!ok) why << "; ";
            ok = false;
            why << msg;
        }
    }
};

Tensor random_tensor(Rng& rng, std::vector<int> dims, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_f(lo, hi);
    return t;
}

int cli(const std::vector<std::string>& args) { return run_cli(args); }

std::uint64_t tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& rel : files) {
        const std::string name = rel.string();
        h = fnv1a64(name.data(), name.size(), h);
        std::ifstream f(root / rel, std::ios::binary);
        const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                               std::istreambuf_iterator<char>());
        h ^= fnv1a64(bytes.data(), bytes.size()) * 0x9E3779B97F4A7C15ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// 1 + 2: solver vs dense ridge oracle, and the exact-line-search laws.
// ---------------------------------------------------------------------------
void criteria_solver() {
    Timer timer;
    Check c1, c2;

    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng pick(trial * 101 + 3);
        const int C = 1 + static_cast<int>(pick.below(4));        // <= 4
        const int D = 1 + static_cast<int>(pick.below(2));        // <= 2
        const int k = pick.below(2) ? 3 : 1;
        const int h = 7 + static_cast<int>(pick.below(2));        // maps <= 8x8
        const int w = 7 + static_cast<int>(pick.below(2));
        // keep each per-channel system comfortably overdetermined so the
        // steepest-descent rate bound reaches the tolerance within 5x unknowns
        int n = 1 + static_cast<int>(pick.below(3));              // <= 3 samples
        while (n * h * w < 2 * C * k * k) ++n;
        const double lambda = 0.05;
        test::Problem p = test::random_problem(trial + 211, C, D, k, n, h, w, lambda);
        const int unknowns = D * C * k * k;
        const FitResult res = fit(p.buf, 5 * unknowns, zero_mapping(C, D, k, lambda));
        const double err = test::rel_frob_err(res.weights.tau, test::ridge_solve(p));
        c1.expect(err <= 1e-3, "trial " + std::to_string(trial) + " rel err " + std::to_string(err));
        for (std::size_t i = 1; i < res.trace.size(); ++i) {
            c2.expect(res.trace[i] <= res.trace[i - 1] + 1e-6 * std::abs(res.trace[i - 1]),
                      "loss increased at trial " + std::to_string(trial) + " iter " +
                          std::to_string(i));
        }
    }
    const double secs = timer.seconds();
    c1.expect(secs < 10.0, "runtime " + std::to_string(secs) + "s exceeds 10s");
    report(1, "solver matches the dense ridge oracle on 20 seeded problems", c1.ok,
           c1.ok ? "rel err <= 1e-3, " + std::to_string(secs).substr(0, 4) + "s" : c1.why.str());

    // 1-D scalar problem reaches the closed-form minimizer in one step
    SampleBuffer scalar(4);
    scalar.add_seed(Tensor({1, 1, 1}, {2.0f}), Tensor({1, 1, 1}, {3.0f}));
    const SdStepResult step = sd_step(zero_mapping(1, 1, 1, 1.0), scalar);
    c2.expect(std::abs(step.weights.tau[0] - 1.2f) < 1e-6f,
              "scalar step gave tau = " + std::to_string(step.weights.tau[0]));
    c2.expect(std::abs(step.step_len - 0.2) < 1e-9, "alpha != 0.2");
    report(2, "exact line search is monotone and solves the scalar problem in one step", c2.ok,
           c2.ok ? "tau = 1.2 after one step" : c2.why.str());
}

// ---------------------------------------------------------------------------
// 3: gradient integrity across the differentiable surface.
// ---------------------------------------------------------------------------
void criterion_gradients() {
    Timer timer;
    Check c;
    double worst = 0.0;
    auto track = [&worst, &c](double err, const char* what, std::uint64_t seed) {
        worst = std::max(worst, err);
        c.expect(err < 1e-3, std::string(what) + " seed " + std::to_string(seed) + " err " +
                                 std::to_string(err));
    };

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 17 + 5);
        // conv2d through input and weights
        Tensor x = random_tensor(rng, {2, 4, 4});
        Tensor w = random_tensor(rng, {2, 2, 3, 3});
        Tensor m = random_tensor(rng, {2, 4, 4});
        track(grad_check(
                  [&](Tape& t, const TracedTensor& tx) {
                      return t.sum(t.mul(t.conv2d(tx, t.leaf(w)), t.leaf(m)));
                  },
                  x),
              "conv2d/input", seed);
        track(grad_check(
                  [&](Tape& t, const TracedTensor& tw) {
                      return t.sum(t.mul(t.conv2d(t.leaf(x), tw), t.leaf(m)));
                  },
                  w),
              "conv2d/weights", seed);

        // converter (1x1 conv + bias)
        const FusionParams fp = init_fusion(seed + 40, 4, 2);
        Tensor e2raw = random_tensor(rng, {2, 4, 4});
        Tensor mc = random_tensor(rng, {4, 4, 4});
        track(grad_check(
                  [&](Tape& t, const TracedTensor& tw) {
                      TracedFusion tf = TracedFusion::make(t, fp, false);
                      tf.conv_w = tw;
                      return t.sum(t.mul(convert(t, tf, t.leaf(e2raw)), t.leaf(mc)));
                  },
                  fp.conv_w),
              "converter", seed);

        // weight net through the fused output
        Tensor e1 = random_tensor(rng, {4, 4, 4});
        Tensor e2 = random_tensor(rng, {4, 4, 4});
        track(grad_check(
                  [&](Tape& t, const TracedTensor& tw) {
                      TracedFusion tf = TracedFusion::make(t, fp, false);
                      tf.weight_w = tw;
                      TracedFuseResult r = fuse(t, tf, t.leaf(e1), t.leaf(e2));
                      return t.sum(t.mul(r.e_tar, t.leaf(mc)));
                  },
                  fp.weight_w),
              "weight-net", seed);

        // bce and soft dice
        Tensor prob = random_tensor(rng, {4, 4}, 0.15f, 0.85f);
        Tensor gt({4, 4});
        for (std::size_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        track(grad_check([&](Tape& t, const TracedTensor& tp) { return t.bce(tp, gt); }, prob),
              "bce", seed);
        track(grad_check([&](Tape& t, const TracedTensor& tp) { return t.soft_dice(tp, gt); }, prob),
              "soft-dice", seed);
    }

    // composed offline loss on a micro problem, one vetted seed per trial
    int done = 0;
    for (std::uint64_t probe = 0; done < 20 && probe < 400; ++probe) {
        const std::uint64_t seed = 1000 + probe;
        const StackParams stack = init_stack(seed, 4, 2);
        const FusionParams fp = init_fusion(seed, 4, 2);
        Rng rng(seed);
        const Tensor e1 = random_tensor(rng, {4, 4, 4});
        const Tensor e2raw = random_tensor(rng, {2, 4, 4});
        Tensor gt({16, 16});
        for (std::size_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform() < 0.3 ? 1.0f : 0.0f;

        // skip seeds whose decoder relu inputs sit near the kink
        const Tensor e2v = convert(fp, e2raw);
        const FuseResult fr = fuse(fp, e1, e2v);
        const Tensor pre = conv2d(fr.e_tar, stack.dec1.w, &stack.dec1.b);
        float closest = 1e9f;
        for (std::size_t i = 0; i < pre.numel(); ++i) {
            closest = std::min(closest, std::abs(pre[i]));
        }
        if (closest <= 0.04f) continue;
        ++done;

        Tape tape;
        TracedFusion tf = TracedFusion::make(tape, fp, true);
        TracedTensor te2 = convert(tape, tf, tape.leaf(e2raw));
        TracedFuseResult tfr = fuse(tape, tf, tape.leaf(e1), te2);
        TracedTensor prob = decode_mask(stack, tape, tfr.e_tar);
        TracedTensor loss = tape.add(tape.bce(prob, gt), tape.soft_dice(prob, gt));
        tape.backward(loss);

        auto eval_loss = [&](const FusionParams& params) {
            Tape t;
            TracedFusion f2 = TracedFusion::make(t, params, false);
            TracedTensor ev = convert(t, f2, t.leaf(e2raw));
            TracedFuseResult rv = fuse(t, f2, t.leaf(e1), ev);
            TracedTensor pr = decode_mask(stack, t, rv.e_tar);
            return static_cast<double>(t.add(t.bce(pr, gt), t.soft_dice(pr, gt)).value[0]);
        };
        struct Block {
            Tensor FusionParams::*member;
            const TracedTensor* traced;
        };
        const Block blocks[] = {{&FusionParams::weight_w, &tf.weight_w},
                                {&FusionParams::weight_b, &tf.weight_b},
                                {&FusionParams::conv_w, &tf.conv_w},
                                {&FusionParams::conv_b, &tf.conv_b}};
        const double eps = 1e-2;
        double err = 0.0;
        for (const Block& blk : blocks) {
            const Tensor& analytic = tape.grad(*blk.traced);
            FusionParams probe_params = fp;
            Tensor& tt = probe_params.*(blk.member);
            for (std::size_t i = 0; i < tt.numel(); ++i) {
                const float orig = tt[i];
                tt[i] = static_cast<float>(orig + eps);
                const double hi = eval_loss(probe_params);
                tt[i] = static_cast<float>(orig - eps);
                const double lo = eval_loss(probe_params);
                tt[i] = orig;
                const double numeric = (hi - lo) / (2.0 * eps);
                const double a = analytic[i];
                err = std::max(err, std::abs(a - numeric) /
                                        std::max({1.0, std::abs(a), std::abs(numeric)}));
            }
        }
        track(err, "offline-loss", seed);
    }
    c.expect(done == 20, "vetted only " + std::to_string(done) + " composed-loss seeds");

    const double secs = timer.seconds();
    c.expect(secs < 30.0, "runtime " + std::to_string(secs) + "s exceeds 30s");
    std::ostringstream detail;
    detail << "max rel err " << worst << ", " << static_cast<int>(secs * 10) / 10.0 << "s";
    report(3, "finite differences confirm every gradient path", c.ok,
           c.ok ? detail.str() : c.why.str());
}

// ---------------------------------------------------------------------------
// 4: fusion laws.
// ---------------------------------------------------------------------------
void criterion_fusion_laws() {
    Check c;
    const int C = 4;
    FusionParams fp = init_fusion(17, C, 2);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 31);
        const Tensor a = random_tensor(rng, {C, 4, 4}, -2.0f, 2.0f);
        const Tensor b = random_tensor(rng, {C, 4, 4}, -2.0f, 2.0f);
        const FuseResult r = fuse(fp, a, b);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const float lo = std::min(a[i], b[i]) - 1e-5f;
            const float hi = std::max(a[i], b[i]) + 1e-5f;
            if (r.e_tar[i] < lo || r.e_tar[i] > hi) {
                c.expect(false, "sandwich violated at seed " + std::to_string(seed));
                break;
            }
        }
        const FuseResult same = fuse(fp, a, a);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            if (std::abs(same.e_tar[i] - a[i]) > 1e-6f) {
                c.expect(false, "fuse(e,e) != e at seed " + std::to_string(seed));
                break;
            }
        }
    }
    Rng rng(77);
    const Tensor e1 = random_tensor(rng, {C, 5, 5});
    const Tensor e2 = random_tensor(rng, {C, 5, 5});
    fp.weight_w = Tensor({1, 2 * C, 3, 3});
    fp.weight_b = Tensor({1}, {20.0f});
    const FuseResult pick1 = fuse(fp, e1, e2);
    fp.weight_b = Tensor({1}, {-20.0f});
    const FuseResult pick2 = fuse(fp, e1, e2);
    for (std::size_t i = 0; i < e1.numel(); ++i) {
        if (std::abs(pick1.e_tar[i] - e1[i]) > 1e-4f) {
            c.expect(false, "positive saturation missed e1");
            break;
        }
        if (std::abs(pick2.e_tar[i] - e2[i]) > 1e-4f) {
            c.expect(false, "negative saturation missed e2");
            break;
        }
    }
    report(4, "fusion is a convex per-pixel mixture with working saturation", c.ok,
           c.ok ? "100 random inputs + saturation cases" : c.why.str());
}

// ---------------------------------------------------------------------------
// 5: confidence gate laws on a live fixture.
// ---------------------------------------------------------------------------
void criterion_gate() {
    Check c;
    // worked examples
    {
        Tensor prob({4, 4});
        prob.at(0, 0) = 1.0f;
        c.expect(std::abs(confidence_score(prob) - 1.0) < 1e-12, "certain-pixel example != 1");
        c.expect(confidence_score(Tensor::full({4, 4}, 0.4f)) == 0.0, "sub-threshold example != 0");
        Tensor three = Tensor::full({4, 4}, 0.1f);
        three.at(0, 0) = 0.9f;
        three.at(1, 1) = 0.7f;
        three.at(2, 2) = 0.6f;
        c.expect(std::abs(confidence_score(three) - 0.733333) < 1e-5,
                 "three-pixel example != 0.73333");
    }
    // gate soundness on random maps
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        Tensor prob({8, 8});
        for (std::size_t i = 0; i < prob.numel(); ++i) prob[i] = rng.uniform_f(0.0f, 1.0f);
        const double s = confidence_score(prob);
        if (!(s == 0.0 || (s > 0.5 && s <= 1.0))) {
            c.expect(false, "confidence outside {0} U (0.5,1]");
            break;
        }
    }

    // live fixture: rejection leaves the adaptive state untouched,
    // and the gate count is monotone in gamma on the replayed confidences
    const fs::path dir = g_ws / "gate_fixture";
    GenParams gp;
    gp.seed = 9;
    gp.n_sequences = 3;
    gp.train_sequences = 2;
    gp.frames_per_sequence = 4;
    gp.size = 32;
    gp.radius_min = 5.0;
    gp.radius_max = 8.0;
    gp.n_distractors = 1;
    const SequenceDataset ds = gen_synthetic(gp, dir);
    PipelineConfig cfg;
    cfg.C = 8;
    cfg.D = 4;
    cfg.cap_buffer = 16;
    cfg.seed = 9;
    const StackParams stack = init_stack(9, 8, 4);
    const AttentionParams attn = init_attention(9, 8, 4);
    const FusionParams fusion = init_fusion(9, 8, 4);
    const Components comps{&stack, &attn, &fusion};
    const TrainSet ts = build_train_set(ds);
    const ClassContext ctx = build_class_context(stack, ts.groups[0]);
    std::vector<Tensor> queries;
    for (const auto& p : ds.split("test")[0]->frames) queries.push_back(load_image(p, 32, 32));

    PipelineConfig strict = cfg;
    strict.gamma = 0.999;
    PipelineState state = init_sequence(strict, comps, ctx, encode_image(stack, queries[0]));
    const std::uint64_t before = state.state_checksum();
    const MaskPrediction rejected = infer_frame(strict, state, comps, queries[0], ctx);
    c.expect(rejected.confidence <= strict.gamma, "fixture frame unexpectedly confident");
    c.expect(!rejected.accepted, "rejected frame marked accepted");
    c.expect(state.state_checksum() == before, "rejected frame mutated the adaptive state");

    PipelineState replay = init_sequence(cfg, comps, ctx, encode_image(stack, queries[0]));
    std::vector<double> confidences;
    for (const Tensor& img : queries) {
        confidences.push_back(infer_frame(cfg, replay, comps, img, ctx).confidence);
    }
    auto accepted_at = [&confidences](double gamma) {
        int n = 0;
        for (double s : confidences) n += s > gamma ? 1 : 0;
        return n;
    };
    c.expect(accepted_at(0.7) >= accepted_at(0.8) && accepted_at(0.8) >= accepted_at(0.9),
             "gate count not monotone over the gamma sweep");

    report(5, "confidence gate laws hold (examples, soundness, rejection, monotonicity)", c.ok,
           c.ok ? "gamma sweep 0.7/0.8/0.9" : c.why.str());
}

// ---------------------------------------------------------------------------
// 6: metric oracles.
// ---------------------------------------------------------------------------
std::vector<std::pair<int, int>> boundary_oracle(const Tensor& mask) {
    const int H = mask.extent(0), W = mask.extent(1);
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (mask.at(y, x) == 0.0f) continue;
            bool interior = y > 0 && y < H - 1 && x > 0 && x < W - 1;
            if (interior) {
                interior = mask.at(y - 1, x) != 0.0f && mask.at(y + 1, x) != 0.0f &&
                           mask.at(y, x - 1) != 0.0f && mask.at(y, x + 1) != 0.0f;
            }
            if (!interior) out.emplace_back(y, x);
        }
    }
    return out;
}

void criterion_metrics() {
    Timer timer;
    Check c;
    // worked examples
    {
        Tensor p({4, 4}), g({4, 4});
        p.at(0, 0) = p.at(0, 1) = p.at(1, 0) = p.at(1, 1) = 1.0f;
        g.at(1, 0) = g.at(1, 1) = g.at(2, 0) = g.at(2, 1) = 1.0f;
        c.expect(std::abs(dice(p, g) - 0.5) < 1e-12, "dice example != 0.5");
        Tensor a({8, 8}), b({8, 8});
        a.at(4, 1) = 1.0f;
        b.at(4, 4) = 1.0f;
        c.expect(std::abs(avg_hausdorff(a, b) - 3.0) < 1e-12, "ahd example != 3.0");
    }
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed * 7 + 1);
        Tensor a({16, 16}), b({16, 16});
        for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform() < 0.25 ? 1.0f : 0.0f;
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform() < 0.25 ? 1.0f : 0.0f;

        long inter = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            na += a[i] != 0.0f;
            nb += b[i] != 0.0f;
            inter += a[i] != 0.0f && b[i] != 0.0f;
        }
        const double dice_ref = (na + nb) == 0 ? 1.0 : 2.0 * inter / static_cast<double>(na + nb);
        if (dice(a, b) != dice_ref) {
            c.expect(false, "dice oracle mismatch at seed " + std::to_string(seed));
            break;
        }

        const auto bp = boundary_oracle(a), bg = boundary_oracle(b);
        double ahd_ref;
        if (bp.empty() && bg.empty()) {
            ahd_ref = 0.0;
        } else if (bp.empty() || bg.empty()) {
            ahd_ref = std::hypot(15.0, 15.0);
        } else {
            double fwd = 0.0;
            for (const auto& [y, x] : bp) {
                double best = 1e300;
                for (const auto& [gy, gx] : bg) {
                    best = std::min(best,
                                    static_cast<double>((y - gy) * (y - gy) + (x - gx) * (x - gx)));
                }
                fwd += std::sqrt(best);
            }
            double bwd = 0.0;
            for (const auto& [y, x] : bg) {
                double best = 1e300;
                for (const auto& [py, px] : bp) {
                    best = std::min(best,
                                    static_cast<double>((y - py) * (y - py) + (x - px) * (x - px)));
                }
                bwd += std::sqrt(best);
            }
            ahd_ref = 0.5 * (fwd / static_cast<double>(bp.size()) + bwd / static_cast<double>(bg.size()));
        }
        if (avg_hausdorff(a, b) != ahd_ref) {
            c.expect(false, "ahd oracle mismatch at seed " + std::to_string(seed));
            break;
        }
    }
    const double secs = timer.seconds();
    c.expect(secs < 10.0, "runtime " + std::to_string(secs) + "s exceeds 10s");
    report(6, "dice and average-hausdorff match brute-force oracles on 200 mask pairs", c.ok,
           c.ok ? std::to_string(secs).substr(0, 4) + "s" : c.why.str());
}

// ---------------------------------------------------------------------------
// 7 + 8 + 9: benchmark ablation ordering, k-refs sweep, determinism.
// ---------------------------------------------------------------------------
void criteria_benchmark() {
    Timer timer;
    Check c7;

    const std::string data = (g_ws / "bench").string();
    const std::string model = (g_ws / "model").string();
    const std::string config = std::string(OFL_SOURCE_DIR) + "/configs/desk.json";
    const std::vector<std::string> gen_flags = {
        "gen-data", "--out", data, "--seed", "42", "--sequences", "12", "--train-sequences", "2",
        "--frames", "8", "--distractors", "3", "--size", "64"};

    c7.expect(cli(gen_flags) == 0, "gen-data failed");
    c7.expect(cli({"train", "--data", data, "--config", config, "--model-out", model}) == 0,
              "train failed");
    c7.expect(cli({"ablate", "--data", data, "--model", model, "--out",
                   (g_ws / "ablation").string()}) == 0,
              "ablate failed");

    double base = 0.0, learner = 0.0, full = 0.0;
    if (c7.ok) {
        std::ifstream f(g_ws / "ablation" / "ablation_summary.json");
        const nlohmann::json summary = nlohmann::json::parse(f);
        base = summary.at("reports").at("base").at("mean_dice").get<double>();
        learner = summary.at("reports").at("learner").at("mean_dice").get<double>();
        full = summary.at("reports").at("full").at("mean_dice").get<double>();
        c7.expect(base < learner, "ordering violated: base >= learner");
        c7.expect(learner < full, "ordering violated: learner >= full");
        c7.expect(full - base >= 0.03, "full - base gap below 3 dice points");
    }
    const double secs7 = timer.seconds();
    c7.expect(secs7 < 600.0, "runtime " + std::to_string(secs7) + "s exceeds 10 min");
    {
        std::ostringstream detail;
        detail.precision(4);
        detail << "dice base " << base << " < learner " << learner << " < full " << full << ", "
               << static_cast<int>(secs7) << "s";
        report(7, "ablation ordering on the synthetic benchmark", c7.ok,
               c7.ok ? detail.str() : c7.why.str());
    }

    // 8: k-refs sweep produces well-formed reports
    Check c8;
    for (int k : {1, 2, 3}) {
        const std::string rep_path = (g_ws / ("krefs_" + std::to_string(k) + ".json")).string();
        c8.expect(cli({"eval", "--data", data, "--model", model, "--report", rep_path, "--k-refs",
                       std::to_string(k)}) == 0,
                  "eval failed for k=" + std::to_string(k));
        if (!c8.ok) break;
        const ExperimentReport rep = read_report(rep_path);
        c8.expect(rep.config.at("k_refs").get<int>() == k, "k_refs not echoed");
        c8.expect(rep.per_class.size() == 1 && rep.per_class[0].per_sequence.size() == 10,
                  "unexpected report shape");
        c8.expect(rep.overall_dice >= 0.0 && rep.overall_dice <= 1.0, "dice out of range");
    }
    report(8, "k-refs sweep produces well-formed reports for k in {1,2,3}", c8.ok,
           c8.ok ? "3 reports" : c8.why.str());

    // 9: rerunning every command reproduces bit-identical artifacts
    // (wall-clock report fields excluded; they are the one intentional
    // nondeterminism in the output schema)
    Check c9;
    const std::string data2 = (g_ws / "bench_rerun").string();
    std::vector<std::string> gen_flags2 = gen_flags;
    gen_flags2[2] = data2;
    c9.expect(cli(gen_flags2) == 0, "gen-data rerun failed");
    c9.expect(tree_digest(data) == tree_digest(data2), "generated trees differ");

    const std::string model2 = (g_ws / "model_rerun").string();
    c9.expect(cli({"train", "--data", data2, "--config", config, "--model-out", model2}) == 0,
              "train rerun failed");
    for (const char* part : {"fusion", "stack", "attention"}) {
        c9.expect(tree_digest(fs::path(model) / part) == tree_digest(fs::path(model2) / part),
                  std::string("model ") + part + " differs across reruns");
    }
    {
        std::ifstream fa(fs::path(model) / "train_report.json");
        std::ifstream fb(fs::path(model2) / "train_report.json");
        nlohmann::json a = nlohmann::json::parse(fa);
        nlohmann::json b = nlohmann::json::parse(fb);
        a.erase("epoch_seconds");
        b.erase("epoch_seconds");
        c9.expect(a == b, "train reports differ beyond wall time");
    }

    const std::string masks1 = (g_ws / "masks1").string();
    const std::string masks2 = (g_ws / "masks2").string();
    c9.expect(cli({"eval", "--data", data, "--model", model, "--report",
                   (g_ws / "det1.json").string(), "--dump-masks", masks1}) == 0,
              "eval rerun 1 failed");
    c9.expect(cli({"eval", "--data", data, "--model", model, "--report",
                   (g_ws / "det2.json").string(), "--dump-masks", masks2, "--threads", "1"}) == 0,
              "eval rerun 2 failed");
    if (c9.ok) {
        nlohmann::json a = report_to_json(read_report(g_ws / "det1.json"));
        nlohmann::json b = report_to_json(read_report(g_ws / "det2.json"));
        a["runtime_s"] = 0.0;
        b["runtime_s"] = 0.0;
        c9.expect(a == b, "eval reports differ beyond runtime_s");
        c9.expect(tree_digest(masks1) == tree_digest(masks2), "predicted masks differ");
        c9.expect(cli({"render", "--data", data, "--pred", masks1, "--out",
                       (g_ws / "ovl1").string()}) == 0,
                  "render 1 failed");
        c9.expect(cli({"render", "--data", data, "--pred", masks2, "--out",
                       (g_ws / "ovl2").string()}) == 0,
                  "render 2 failed");
        c9.expect(tree_digest(g_ws / "ovl1") == tree_digest(g_ws / "ovl2"), "overlays differ");
    }
    report(9, "reruns are bit-identical (wall-clock fields excluded)", c9.ok,
           c9.ok ? "gen/train/eval/render replayed" : c9.why.str());
}

}  // namespace

int main() {
    g_ws = fs::temp_directory_path() / "ofl_acceptance";
    fs::remove_all(g_ws);
    fs::create_directories(g_ws);
    std::printf("acceptance workspace: %s\n", g_ws.string().c_str());

    try {
        criteria_solver();
        criterion_gradients();
        criterion_fusion_laws();
        criterion_gate();
        criterion_metrics();
        criteria_benchmark();
    } catch (const std::exception& e) {
        std::printf("[FAIL] unhandled exception: %s\n", e.what());
        ++g_failures;
    }

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failures);
    return 1;
}
