#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <vector>

#include "ofl/tensor.hpp"

namespace ofl {

struct MemoryEntry {
    Tensor memory;         // D×H'×W'
    int temporal_pos = 0;  // 0 for pinned references, frame index otherwise
    bool pinned = false;
};

/// Pinned reference entries plus a FIFO of accepted inference entries.
/// Pinned entries are never evicted; the rolling queue evicts oldest-first
/// at capacity. Owned by exactly one sequence run at a time.
class MemoryBank {
public:
    explicit MemoryBank(int cap_rolling = 6);

    void insert(MemoryEntry entry);

    /// Replaces the pinned reference entries, keeping the rolling queue.
    void reset_pinned(std::vector<MemoryEntry> entries);

    const std::vector<MemoryEntry>& pinned() const { return pinned_; }
    const std::deque<MemoryEntry>& rolling() const { return rolling_; }
    std::size_t size() const { return pinned_.size() + rolling_.size(); }
    bool empty() const { return size() == 0; }
    int cap_rolling() const { return cap_rolling_; }

    /// All entries, pinned first, in insertion order.
    std::vector<const MemoryEntry*> entries() const;

    std::uint64_t state_checksum() const;

private:
    int cap_rolling_;
    std::vector<MemoryEntry> pinned_;
    std::deque<MemoryEntry> rolling_;
};

struct AttentionLayer {
    Tensor self_wq, self_wk, self_wv, self_wo;  // C×C
    Tensor cross_wq, cross_wo;                  // C×C
    Tensor cross_wk, cross_wv;                  // C×D
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;      // 2C×C, 2C, C×2C, C
};

/// Four frozen memory-attention layers (self-attention, cross-attention
/// over the bank, feed-forward; residual throughout) plus the sinusoidal
/// temporal position table added to cross-attention keys.
struct AttentionParams {
    std::uint64_t seed = 0;
    int C = 0;
    int D = 0;
    int heads = 1;
    std::vector<AttentionLayer> layers;
    Tensor temporal_pe;  // T×C
};

AttentionParams init_attention(std::uint64_t seed, int C, int D, int heads = 1);

/// Cosine similarity of the fully flattened maps, f64 accumulation.
/// Either operand all-zero yields 0 so rankings stay total.
double cosine_similarity(const Tensor& fq, const Tensor& fs);

/// Indices of the k most similar candidates, similarity descending, ties
/// broken toward the lower index. Returns min(k, n) indices.
std::vector<int> select_references(const Tensor& fq, const std::vector<Tensor>& candidates,
                                   int k = 2);

/// Memory-conditioned features E1: C×H'×W', same shape as fq.
Tensor attend(const AttentionParams& params, const Tensor& fq, const MemoryBank& bank);

std::uint64_t attention_checksum(const AttentionParams& params);

void save_attention(const AttentionParams& params, const std::filesystem::path& dir);
AttentionParams load_attention(const std::filesystem::path& dir);

/// Bank snapshot for debugging/replay: one .otns per entry + bank.json.
void save_bank(const MemoryBank& bank, const std::filesystem::path& dir);
MemoryBank load_bank(const std::filesystem::path& dir);

}  // namespace ofl
