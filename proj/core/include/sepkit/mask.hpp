#pragma once

#include "sepkit/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sepkit {

/// Dense binary attention mask. Row i is the query position, column j the
/// key position. Every mask produced by the builders below is strictly
/// causal (no bit above the diagonal) and self-visible (bit (i,i) is set),
/// so no softmax row can be empty.
class AttentionMask {
public:
    AttentionMask() = default;
    explicit AttentionMask(std::size_t m) : m_(m), bits_(m * m, 0) {}

    std::size_t size() const { return m_; }
    bool bit(std::size_t i, std::size_t j) const { return bits_[i * m_ + j] != 0; }
    void set(std::size_t i, std::size_t j) { bits_[i * m_ + j] = 1; }

    bool operator==(const AttentionMask& other) const = default;

    /// Throws std::logic_error if causality or self-visibility is violated.
    void check_invariants() const;

    /// Nested 0/1 arrays: {"m": m, "bits": [[...], ...]}.
    std::string to_json() const;
    /// PBM (P1) text grid, one char per bit, for visual inspection.
    std::string to_pbm() const;

private:
    std::size_t m_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class PolicyKind { Full, SepLLM, StreamingLLM, FixLLM, SlidingWindow };

/// Masking policy: `a` leading sink tokens, `n`-wide local window ending at
/// the query position, and (FixLLM only) the keep-every-delta interval.
struct MaskPolicy {
    PolicyKind kind = PolicyKind::Full;
    std::size_t a = 0;
    std::size_t n = 1;
    std::size_t delta = 1;

    void validate() const;

    static MaskPolicy full();
    static MaskPolicy sepllm(std::size_t a, std::size_t n);
    static MaskPolicy streaming(std::size_t a, std::size_t n);
    static MaskPolicy fixllm(std::size_t a, std::size_t n, std::size_t delta);
    static MaskPolicy sliding_window(std::size_t n);
};

const char* policy_kind_name(PolicyKind kind);

AttentionMask full_causal(std::size_t m);

/// Visible set of row i: initial prefix (j < a), every separator at or
/// before i, and the n most recent positions including i itself.
AttentionMask sepllm_mask(const TokenSeq& seq, std::size_t a, std::size_t n);

/// sepllm_mask with all separator flags treated as false.
AttentionMask streaming_mask(const TokenSeq& seq, std::size_t a, std::size_t n);

/// Separator condition replaced by fixed-interval positions
/// (j mod delta == delta-1).
AttentionMask fixllm_mask(const TokenSeq& seq, std::size_t a, std::size_t n, std::size_t delta);

AttentionMask sliding_window_mask(std::size_t m, std::size_t n);

/// Row-rule predicate form of the policies above; lets callers evaluate a
/// single (i, j) bit without materializing the matrix.
bool mask_bit(const MaskPolicy& policy, const TokenSeq& seq, std::size_t i, std::size_t j);

AttentionMask build_mask(const MaskPolicy& policy, const TokenSeq& seq);

/// Count of set bits (all lie in the lower triangle by construction).
std::uint64_t nnz_lower(const AttentionMask& mask);

enum class HybridMode { None, H, HT };

/// Per-layer policy assignment: H swaps layer 0 to full attention, HT swaps
/// layers 0 and L-1. Throws std::invalid_argument for L == 0.
std::vector<MaskPolicy> resolve_layers(const MaskPolicy& base, HybridMode hybrid, std::size_t layer_count);

}  // namespace sepkit
