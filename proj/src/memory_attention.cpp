#include "ofl/memory_attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"
#include "ofl/rng.hpp"
#include "ofl/tensor_io.hpp"

namespace ofl {

MemoryBank::MemoryBank(int cap_rolling) : cap_rolling_(cap_rolling) {
    if (cap_rolling < 1) throw ConfigError("memory bank: rolling capacity must be >= 1");
}

void MemoryBank::insert(MemoryEntry entry) {
    require_shape(entry.memory.ndim() == 3, "bank insert: entry must be D×H'×W'");
    const Tensor* ref = nullptr;
    if (!pinned_.empty()) ref = &pinned_.front().memory;
    else if (!rolling_.empty()) ref = &rolling_.front().memory;
    if (ref) {
        require_shape(entry.memory.same_shape(*ref),
                      "bank insert: entry shape " + entry.memory.shape_str() +
                          " does not match bank " + ref->shape_str());
    }
    if (entry.pinned) {
        if (entry.temporal_pos != 0) throw StateError("bank insert: pinned entries carry temporal_pos 0");
        pinned_.push_back(std::move(entry));
        return;
    }
    if (entry.temporal_pos < 0) throw StateError("bank insert: temporal_pos must be >= 0");
    rolling_.push_back(std::move(entry));
    while (static_cast<int>(rolling_.size()) > cap_rolling_) rolling_.pop_front();
}

void MemoryBank::reset_pinned(std::vector<MemoryEntry> entries) {
    pinned_.clear();
    for (auto& e : entries) {
        e.pinned = true;
        e.temporal_pos = 0;
        insert(std::move(e));
    }
}

std::vector<const MemoryEntry*> MemoryBank::entries() const {
    std::vector<const MemoryEntry*> out;
    out.reserve(size());
    for (const auto& e : pinned_) out.push_back(&e);
    for (const auto& e : rolling_) out.push_back(&e);
    return out;
}

std::uint64_t MemoryBank::state_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const MemoryEntry* e : entries()) {
        h = checksum(e->memory, h);
        h = fnv1a64(&e->temporal_pos, sizeof(e->temporal_pos), h);
        const unsigned char pin = e->pinned ? 1 : 0;
        h = fnv1a64(&pin, 1, h);
    }
    return h;
}

namespace {

Tensor xavier(Rng& rng, int out, int in) {
    Tensor w({out, in});
    const float a = static_cast<float>(std::sqrt(6.0 / (static_cast<double>(in) + out)));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform_f(-a, a);
    return w;
}

constexpr int kLayers = 4;
constexpr int kMaxTemporal = 4096;

Tensor sinusoidal_table(int rows, int dim) {
    Tensor pe({rows, dim});
    for (int t = 0; t < rows; ++t) {
        for (int i = 0; i < dim; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
            pe.at(t, i) = static_cast<float>(std::sin(t * freq));
            if (i + 1 < dim) pe.at(t, i + 1) = static_cast<float>(std::cos(t * freq));
        }
    }
    return pe;
}

}  // namespace

AttentionParams init_attention(std::uint64_t seed, int C, int D, int heads) {
    if (C < 2 || D < 1) throw ConfigError("init_attention: need C >= 2, D >= 1");
    if (heads < 1 || C % heads != 0) throw ConfigError("init_attention: heads must divide C");
    AttentionParams p;
    p.seed = seed;
    p.C = C;
    p.D = D;
    p.heads = heads;
    Rng rng = Rng(seed).fork(0xA77EULL);
    p.layers.resize(kLayers);
    for (auto& l : p.layers) {
        l.self_wq = xavier(rng, C, C);
        l.self_wk = xavier(rng, C, C);
        l.self_wv = xavier(rng, C, C);
        l.self_wo = xavier(rng, C, C);
        l.cross_wq = xavier(rng, C, C);
        l.cross_wk = xavier(rng, C, D);
        l.cross_wv = xavier(rng, C, D);
        l.cross_wo = xavier(rng, C, C);
        l.ffn_w1 = xavier(rng, 2 * C, C);
        l.ffn_b1 = Tensor({2 * C});
        l.ffn_w2 = xavier(rng, C, 2 * C);
        l.ffn_b2 = Tensor({C});
    }
    p.temporal_pe = sinusoidal_table(kMaxTemporal, C);
    return p;
}

double cosine_similarity(const Tensor& fq, const Tensor& fs) {
    require_shape(fq.same_shape(fs), "cosine_similarity: shapes " + fq.shape_str() + " vs " +
                                         fs.shape_str());
    const double nq = frob_norm(fq), ns = frob_norm(fs);
    if (nq == 0.0 || ns == 0.0) return 0.0;  // documented sentinel
    return dot(fq, fs) / (nq * ns);
}

std::vector<int> select_references(const Tensor& fq, const std::vector<Tensor>& candidates, int k) {
    if (candidates.empty()) throw ConfigError("select_references: empty candidate set");
    if (k < 1) throw ConfigError("select_references: k must be >= 1");
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sims(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        sims[i] = cosine_similarity(fq, candidates[i]);
    }
    std::stable_sort(order.begin(), order.end(), [&sims](int a, int b) {
        if (sims[static_cast<std::size_t>(a)] != sims[static_cast<std::size_t>(b)]) {
            return sims[static_cast<std::size_t>(a)] > sims[static_cast<std::size_t>(b)];
        }
        return a < b;
    });
    order.resize(std::min<std::size_t>(static_cast<std::size_t>(k), order.size()));
    return order;
}

namespace {

// Multi-head softmax attention over precomputed projections.
Tensor headed_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (heads == 1) return attention_core(q, k, v);
    const int Nq = q.extent(0), C = q.extent(1), Nk = k.extent(0);
    const int hd = C / heads;
    Tensor out({Nq, C});
    for (int h = 0; h < heads; ++h) {
        Tensor qh({Nq, hd}), kh({Nk, hd}), vh({Nk, hd});
        for (int i = 0; i < Nq; ++i) {
            for (int c = 0; c < hd; ++c) qh.at(i, c) = q.at(i, h * hd + c);
        }
        for (int i = 0; i < Nk; ++i) {
            for (int c = 0; c < hd; ++c) {
                kh.at(i, c) = k.at(i, h * hd + c);
                vh.at(i, c) = v.at(i, h * hd + c);
            }
        }
        Tensor oh = attention_core(qh, kh, vh);
        for (int i = 0; i < Nq; ++i) {
            for (int c = 0; c < hd; ++c) out.at(i, h * hd + c) = oh.at(i, c);
        }
    }
    return out;
}

Tensor tokens_from_map(const Tensor& m) {
    const int C = m.extent(0), H = m.extent(1), W = m.extent(2);
    Tensor t({H * W, C});
    for (int c = 0; c < C; ++c) {
        for (int p = 0; p < H * W; ++p) t.at(p, c) = m[static_cast<std::size_t>(c) * H * W + p];
    }
    return t;
}

Tensor map_from_tokens(const Tensor& t, int C, int H, int W) {
    Tensor m({C, H, W});
    for (int c = 0; c < C; ++c) {
        for (int p = 0; p < H * W; ++p) m[static_cast<std::size_t>(c) * H * W + p] = t.at(p, c);
    }
    return m;
}

}  // namespace

Tensor attend(const AttentionParams& params, const Tensor& fq, const MemoryBank& bank) {
    if (bank.empty()) throw StateError("memory attention launched with no references");
    require_shape(fq.ndim() == 3 && fq.extent(0) == params.C,
                  "attend: query features must be C×H'×W', got " + fq.shape_str());
    const int C = params.C, H = fq.extent(1), W = fq.extent(2);
    const int hw = H * W;

    // Memory tokens: one row per (entry, spatial position), entry order
    // pinned-first. Temporal encodings are added to keys post-projection,
    // so attend is deliberately sensitive to entry order and age.
    const auto entries = bank.entries();
    const int n_mem = static_cast<int>(entries.size()) * hw;
    Tensor mem_tokens({n_mem, params.D});
    std::vector<int> token_pos(static_cast<std::size_t>(n_mem));
    int row = 0;
    for (const MemoryEntry* e : entries) {
        require_shape(e->memory.extent(0) == params.D && e->memory.extent(1) == H &&
                          e->memory.extent(2) == W,
                      "attend: bank entry shape mismatch");
        for (int p = 0; p < hw; ++p, ++row) {
            for (int d = 0; d < params.D; ++d) {
                mem_tokens.at(row, d) = e->memory[static_cast<std::size_t>(d) * hw + p];
            }
            token_pos[static_cast<std::size_t>(row)] = e->temporal_pos;
        }
    }

    Tensor x = tokens_from_map(fq);
    for (const AttentionLayer& l : params.layers) {
        // self-attention
        Tensor q = linear(x, l.self_wq), k = linear(x, l.self_wk), v = linear(x, l.self_wv);
        x = add(x, linear(headed_attention(q, k, v, params.heads), l.self_wo));
        // cross-attention over the bank
        Tensor cq = linear(x, l.cross_wq);
        Tensor ck = linear(mem_tokens, l.cross_wk);
        Tensor cv = linear(mem_tokens, l.cross_wv);
        for (int r = 0; r < n_mem; ++r) {
            const int tpos = std::min(token_pos[static_cast<std::size_t>(r)],
                                      params.temporal_pe.extent(0) - 1);
            for (int c = 0; c < C; ++c) ck.at(r, c) += params.temporal_pe.at(tpos, c);
        }
        x = add(x, linear(headed_attention(cq, ck, cv, params.heads), l.cross_wo));
        // feed-forward
        Tensor h = relu(linear(x, l.ffn_w1, &l.ffn_b1));
        x = add(x, linear(h, l.ffn_w2, &l.ffn_b2));
    }
    return map_from_tokens(x, C, H, W);
}

std::uint64_t attention_checksum(const AttentionParams& params) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& l : params.layers) {
        for (const Tensor* t : {&l.self_wq, &l.self_wk, &l.self_wv, &l.self_wo, &l.cross_wq,
                                &l.cross_wk, &l.cross_wv, &l.cross_wo, &l.ffn_w1, &l.ffn_b1,
                                &l.ffn_w2, &l.ffn_b2}) {
            h = checksum(*t, h);
        }
    }
    return h;
}

namespace {

const char* kAttnTensorNames[] = {"self_wq", "self_wk", "self_wv", "self_wo",
                                  "cross_wq", "cross_wk", "cross_wv", "cross_wo",
                                  "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"};

std::vector<Tensor*> layer_tensors(AttentionLayer& l) {
    return {&l.self_wq, &l.self_wk, &l.self_wv, &l.self_wo, &l.cross_wq, &l.cross_wk,
            &l.cross_wv, &l.cross_wo, &l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2};
}

}  // namespace

void save_attention(const AttentionParams& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = params.seed;
    manifest["C"] = params.C;
    manifest["D"] = params.D;
    manifest["heads"] = params.heads;
    manifest["layers"] = params.layers.size();
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto tensors = layer_tensors(const_cast<AttentionLayer&>(params.layers[i]));
        for (std::size_t j = 0; j < tensors.size(); ++j) {
            write_tensor(*tensors[j], dir / ("layer" + std::to_string(i) + "_" +
                                             kAttnTensorNames[j] + ".otns"));
        }
    }
    std::ofstream f(dir / "attention.json");
    if (!f) throw IoError("cannot write " + (dir / "attention.json").string());
    f << manifest.dump(2) << "\n";
}

AttentionParams load_attention(const std::filesystem::path& dir) {
    std::ifstream f(dir / "attention.json");
    if (!f) throw IoError("cannot open " + (dir / "attention.json").string());
    nlohmann::json manifest = nlohmann::json::parse(f);
    AttentionParams p;
    p.seed = manifest.at("seed").get<std::uint64_t>();
    p.C = manifest.at("C").get<int>();
    p.D = manifest.at("D").get<int>();
    p.heads = manifest.at("heads").get<int>();
    p.layers.resize(manifest.at("layers").get<std::size_t>());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto tensors = layer_tensors(p.layers[i]);
        for (std::size_t j = 0; j < tensors.size(); ++j) {
            *tensors[j] = read_tensor(dir / ("layer" + std::to_string(i) + "_" +
                                             kAttnTensorNames[j] + ".otns"));
        }
    }
    p.temporal_pe = sinusoidal_table(kMaxTemporal, p.C);
    return p;
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["cap_rolling"] = bank.cap_rolling();
    auto list = nlohmann::json::array();
    const auto entries = bank.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string file = "entry" + std::to_string(i) + ".otns";
        write_tensor(entries[i]->memory, dir / file);
        list.push_back({{"file", file},
                        {"temporal_pos", entries[i]->temporal_pos},
                        {"pinned", entries[i]->pinned}});
    }
    manifest["entries"] = list;
    std::ofstream f(dir / "bank.json");
    if (!f) throw IoError("cannot write " + (dir / "bank.json").string());
    f << manifest.dump(2) << "\n";
}

MemoryBank load_bank(const std::filesystem::path& dir) {
    std::ifstream f(dir / "bank.json");
    if (!f) throw IoError("cannot open " + (dir / "bank.json").string());
    nlohmann::json manifest = nlohmann::json::parse(f);
    MemoryBank bank(manifest.at("cap_rolling").get<int>());
    for (const auto& e : manifest.at("entries")) {
        MemoryEntry entry;
        entry.memory = read_tensor(dir / e.at("file").get<std::string>());
        entry.temporal_pos = e.at("temporal_pos").get<int>();
        entry.pinned = e.at("pinned").get<bool>();
        bank.insert(std::move(entry));
    }
    return bank;
}

}  // namespace ofl
