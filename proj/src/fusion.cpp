#include "ofl/fusion.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"
#include "ofl/few_shot_learner.hpp"
#include "ofl/rng.hpp"
#include "ofl/tensor_io.hpp"

namespace ofl {

FusionParams init_fusion(std::uint64_t seed, int C, int D) {
    if (C < 1 || D < 1) throw ConfigError("init_fusion: invalid dims");
    FusionParams fp;
    Rng rng = Rng(seed).fork(0xF05EULL);
    fp.weight_w = Tensor({1, 2 * C, 3, 3});
    const float aw = static_cast<float>(std::sqrt(6.0 / (2.0 * C * 9.0)));
    for (std::size_t i = 0; i < fp.weight_w.numel(); ++i) fp.weight_w[i] = rng.uniform_f(-aw, aw);
    fp.weight_b = Tensor({1});
    fp.conv_w = Tensor({C, D, 1, 1});
    const float ac = static_cast<float>(std::sqrt(6.0 / static_cast<double>(D)));
    for (std::size_t i = 0; i < fp.conv_w.numel(); ++i) fp.conv_w[i] = rng.uniform_f(-ac, ac);
    fp.conv_b = Tensor({C});
    return fp;
}

TracedFusion TracedFusion::make(Tape& tape, const FusionParams& fp, bool track) {
    TracedFusion t;
    t.weight_w = tape.leaf(fp.weight_w, track);
    t.weight_b = tape.leaf(fp.weight_b, track);
    t.conv_w = tape.leaf(fp.conv_w, track);
    t.conv_b = tape.leaf(fp.conv_b, track);
    return t;
}

TracedTensor convert(Tape& tape, const TracedFusion& fp, const TracedTensor& e2_raw) {
    return tape.conv2d(e2_raw, fp.conv_w, &fp.conv_b);
}

TracedFuseResult fuse(Tape& tape, const TracedFusion& fp, const TracedTensor& e1,
                      const TracedTensor& e2) {
    require_shape(e1.value.same_shape(e2.value),
                  "fuse: operand shapes " + e1.value.shape_str() + " vs " + e2.value.shape_str());
    TracedTensor cat = tape.concat_channels(e1, e2);
    TracedTensor logits = tape.conv2d(cat, fp.weight_w, &fp.weight_b);
    TracedTensor w = tape.sigmoid(logits);
    TracedTensor ones = tape.leaf(Tensor::full(w.value.dims(), 1.0f), false);
    TracedTensor w_compl = tape.add(tape.scale(w, -1.0f), ones);
    TracedTensor e_tar = tape.add(tape.broadcast_mul(w, e1), tape.broadcast_mul(w_compl, e2));
    return {e_tar, w};
}

Tensor convert(const FusionParams& fp, const Tensor& e2_raw) {
    return conv2d(e2_raw, fp.conv_w, &fp.conv_b);
}

FuseResult fuse(const FusionParams& fp, const Tensor& e1, const Tensor& e2) {
    Tape tape;
    TracedFusion tf = TracedFusion::make(tape, fp, false);
    TracedFuseResult r = fuse(tape, tf, tape.leaf(e1, false), tape.leaf(e2, false));
    return {std::move(r.e_tar.value), std::move(r.w_map.value)};
}

std::uint64_t fusion_checksum(const FusionParams& fp) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    h = checksum(fp.weight_w, h);
    h = checksum(fp.weight_b, h);
    h = checksum(fp.conv_w, h);
    h = checksum(fp.conv_b, h);
    return h;
}

void save_fusion(const FusionParams& fp, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_tensor(fp.weight_w, dir / "weight_net_w.otns");
    write_tensor(fp.weight_b, dir / "weight_net_b.otns");
    write_tensor(fp.conv_w, dir / "converter_w.otns");
    write_tensor(fp.conv_b, dir / "converter_b.otns");
    nlohmann::json manifest;
    manifest["checksum"] = checksum_hex(fusion_checksum(fp));
    manifest["tensors"] = {"weight_net_w", "weight_net_b", "converter_w", "converter_b"};
    std::ofstream f(dir / "fusion.json");
    if (!f) throw IoError("cannot write " + (dir / "fusion.json").string());
    f << manifest.dump(2) << "\n";
}

FusionParams load_fusion(const std::filesystem::path& dir) {
    FusionParams fp;
    fp.weight_w = read_tensor(dir / "weight_net_w.otns");
    fp.weight_b = read_tensor(dir / "weight_net_b.otns");
    fp.conv_w = read_tensor(dir / "converter_w.otns");
    fp.conv_b = read_tensor(dir / "converter_b.otns");
    return fp;
}

// --- AdamW -----------------------------------------------------------------

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(double lr, const std::vector<Tensor*>& params,
                 const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw StateError("adamw: params/grads size mismatch");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->dims());
            v_.emplace_back(p->dims());
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t j = 0; j < params.size(); ++j) {
        Tensor& p = *params[j];
        const Tensor& g = *grads[j];
        Tensor& m = m_[j];
        Tensor& v = v_[j];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
            const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = static_cast<float>(p[i] - lr * (mhat / (std::sqrt(vhat) + eps_) +
                                                   weight_decay_ * p[i]));
        }
    }
}

// --- offline training --------------------------------------------------------

namespace {

double lr_at_epoch(const TrainConfig& cfg, int epoch /*1-based*/) {
    double lr = cfg.lr0;
    for (int e : cfg.decay_epochs) {
        if (epoch > e) lr *= cfg.decay_factor;
    }
    return lr;
}

struct PreparedFrame {
    Tensor e1;      // attention output, fixed across epochs (all inputs frozen)
    Tensor e2_raw;  // mapping output, fixed across epochs
    Tensor mask;
};

}  // namespace

std::pair<FusionParams, TrainReport> train_offline(const StackParams& stack,
                                                   const AttentionParams& attn,
                                                   const LearnerSetup& learner,
                                                   const TrainSet& train_set,
                                                   const TrainConfig& cfg) {
    if (train_set.groups.empty()) throw ConfigError("train_offline: empty training set");
    for (const auto& g : train_set.groups) {
        if (g.size() < 2) {
            throw ConfigError("train_offline: each class needs at least 2 labeled frames");
        }
    }
    if (cfg.epochs < 1) throw ConfigError("train_offline: epochs must be >= 1");

    // The frozen stack, attention weights and fitted mapping never change
    // during training, so the inputs seen by the trainable blocks can be
    // computed once per frame.
    std::vector<PreparedFrame> frames;
    std::uint64_t tau_hash = 0xCBF29CE484222325ULL;
    for (const auto& group : train_set.groups) {
        const int n = static_cast<int>(group.size());
        std::vector<Tensor> feats(group.size()), targets(group.size());
        for (int i = 0; i < n; ++i) {
            feats[static_cast<std::size_t>(i)] = encode_image(stack, group[static_cast<std::size_t>(i)].image);
            targets[static_cast<std::size_t>(i)] =
                encode_memory(stack, feats[static_cast<std::size_t>(i)], group[static_cast<std::size_t>(i)].mask);
        }
        SampleBuffer buffer(learner.cap_buffer);
        for (int i = 0; i < n; ++i) {
            buffer.add_seed(feats[static_cast<std::size_t>(i)], targets[static_cast<std::size_t>(i)]);
        }
        MappingWeights tau =
            fit(buffer, learner.train_iters, zero_mapping(stack.C, stack.D, learner.k_map, learner.lambda))
                .weights;
        tau_hash = checksum(tau.tau, tau_hash);

        for (int i = 0; i < n; ++i) {
            std::vector<Tensor> others;
            std::vector<int> other_idx;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                others.push_back(feats[static_cast<std::size_t>(j)]);
                other_idx.push_back(j);
            }
            const std::vector<int> refs =
                select_references(feats[static_cast<std::size_t>(i)], others, learner.k_refs);
            MemoryBank bank(learner.cap_rolling);
            for (int r : refs) {
                const int j = other_idx[static_cast<std::size_t>(r)];
                bank.insert({targets[static_cast<std::size_t>(j)], 0, true});
            }
            PreparedFrame pf;
            pf.e1 = attend(attn, feats[static_cast<std::size_t>(i)], bank);
            pf.e2_raw = apply_mapping(tau, feats[static_cast<std::size_t>(i)]);
            pf.mask = group[static_cast<std::size_t>(i)].mask;
            frames.push_back(std::move(pf));
        }
    }

    FusionParams fp = init_fusion(cfg.seed, stack.C, stack.D);
    AdamW opt(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    Rng shuffle_rng = Rng(cfg.seed).fork(0x5F0FFULL);

    TrainReport report;
    report.stack_checksum = stack_checksum(stack);
    report.attention_checksum = attention_checksum(attn);
    report.tau_checksum = tau_hash;

    std::vector<std::size_t> order(frames.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(cfg, epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t idx : order) {
            const PreparedFrame& pf = frames[idx];
            Tape tape;
            TracedFusion tf = TracedFusion::make(tape, fp, true);
            TracedTensor e1 = tape.leaf(pf.e1, false);
            TracedTensor e2 = convert(tape, tf, tape.leaf(pf.e2_raw, false));
            TracedFuseResult fused = fuse(tape, tf, e1, e2);
            TracedTensor prob = decode_mask(stack, tape, fused.e_tar);
            TracedTensor loss = tape.add(tape.bce(prob, pf.mask), tape.soft_dice(prob, pf.mask));
            tape.backward(loss);
            loss_sum += loss.value[0];
            opt.step(lr,
                     {&fp.weight_w, &fp.weight_b, &fp.conv_w, &fp.conv_b},
                     {&tape.grad(tf.weight_w), &tape.grad(tf.weight_b), &tape.grad(tf.conv_w),
                      &tape.grad(tf.conv_b)});
        }
        const auto t1 = std::chrono::steady_clock::now();
        report.epoch_loss.push_back(loss_sum / static_cast<double>(frames.size()));
        report.epoch_lr.push_back(lr);
        report.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }

    report.fusion_checksum = fusion_checksum(fp);
    return {std::move(fp), std::move(report)};
}

void save_train_report(const TrainReport& report, const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path) {
    nlohmann::json j;
    j["epochs"] = report.epoch_loss.size();
    j["epoch_loss"] = report.epoch_loss;
    j["epoch_lr"] = report.epoch_lr;
    j["epoch_seconds"] = report.epoch_seconds;
    j["fusion_checksum"] = checksum_hex(report.fusion_checksum);
    j["stack_checksum"] = checksum_hex(report.stack_checksum);
    j["attention_checksum"] = checksum_hex(report.attention_checksum);
    j["tau_checksum"] = checksum_hex(report.tau_checksum);
    std::ofstream f(json_path);
    if (!f) throw IoError("cannot write " + json_path.string());
    f << j.dump(2) << "\n";

    std::ofstream c(csv_path);
    if (!c) throw IoError("cannot write " + csv_path.string());
    c << "epoch,loss,lr,seconds\n";
    for (std::size_t i = 0; i < report.epoch_loss.size(); ++i) {
        c << (i + 1) << ',' << report.epoch_loss[i] << ',' << report.epoch_lr[i] << ','
          << report.epoch_seconds[i] << '\n';
    }
}

}  // namespace ofl
