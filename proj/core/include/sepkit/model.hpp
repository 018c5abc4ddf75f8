#pragma once

#include "sepkit/attention.hpp"
#include "sepkit/kvcache.hpp"
#include "sepkit/mask.hpp"
#include "sepkit/matrix.hpp"
#include "sepkit/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sepkit {

struct ModelConfig {
    std::size_t vocab = 256;  // byte tokenizer
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 256;
    std::size_t max_seq = 512;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }

    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;          // d_model x d_model
    Matrix w1;                      // d_model x d_ff
    std::vector<double> b1;         // d_ff
    Matrix w2;                      // d_ff x d_model
    std::vector<double> b2;         // d_model
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;  // d_model

    bool operator==(const LayerParams&) const = default;
};

/// Pre-norm decoder blocks, exact-erf GELU feed-forward, additive sinusoidal
/// positions, untied output head.
struct ModelParams {
    ModelConfig config;
    Matrix embedding;               // vocab x d_model
    std::vector<LayerParams> layers;
    std::vector<double> lnf_g, lnf_b;
    Matrix head;                    // d_model x vocab

    bool operator==(const ModelParams&) const = default;
};

/// Weights from normal(0, 0.02) off the seeded generator; layer-norm gains 1,
/// biases 0.
ModelParams init_params(const ModelConfig& cfg);

struct ForwardResult {
    Matrix logits;  // m x vocab
    double loss = 0.0;  // mean next-token cross-entropy; 0 when m < 2
};

/// Prefill/training forward pass. One mask per layer, built from that
/// layer's policy and the sequence's separator flags; positions are absolute.
ForwardResult forward(const ModelParams& params, const TokenSeq& tokens,
                      const std::vector<MaskPolicy>& layer_policies);

/// Analytic d(loss)/d(params) for one sequence, shaped like the parameters.
/// The same path train() accumulates over its batch.
ModelParams loss_gradients(const ModelParams& params, const TokenSeq& tokens,
                           const std::vector<MaskPolicy>& layer_policies);

struct TrainConfig {
    std::size_t steps = 500;
    std::size_t batch = 8;
    std::size_t seq_len = 64;
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0;  ///< global gradient-norm clip
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossPoint {
    std::size_t step = 0;
    double loss = 0.0;
    std::uint64_t tokens_seen = 0;
    std::uint64_t flops_cumulative = 0;
};

struct TrainResult {
    std::vector<LossPoint> curve;
};

/// Adam with global-norm gradient clipping over random corpus windows of
/// seq_len+1 tokens. Fully reproducible from (params seed, tcfg.seed).
/// Throws std::invalid_argument when the corpus is shorter than seq_len+1.
TrainResult train(ModelParams& params, const TokenSeq& corpus, const TrainConfig& tcfg,
                  const std::vector<MaskPolicy>& layer_policies);

/// Retain-everything generation cache (the Vanilla baseline).
struct FullCachePolicy {};

struct FundamentalGenPolicy {
    std::size_t a = 4;
    std::size_t n = 256;
};

using GenPolicy = std::variant<FullCachePolicy, FundamentalGenPolicy, CacheConfig>;

struct GenerateResult {
    TokenSeq tokens;              ///< prompt followed by generated tokens
    std::vector<TraceRow> trace;  ///< one row per consumed token
};

/// Greedy decoding with token-by-token cache management: each consumed token
/// is placed by the retention policy, its embedding gets the sinusoidal
/// encoding of its cache-relative insertion index, and attention runs over
/// the retained entries only. Throws std::invalid_argument for an empty
/// prompt.
GenerateResult generate(const ModelParams& params, const TokenSeq& prompt, std::size_t steps,
                        const GenPolicy& policy, const SeparatorSet& seps);

/// JSON round trip with shortest round-trip decimal floats; load(save(p))
/// reproduces p exactly.
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace sepkit
