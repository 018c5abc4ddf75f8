#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sepkit/mask.hpp"
#include "sepkit/tokenizer.hpp"

#include <random>
#include <set>

using namespace sepkit;

namespace {

// Independent row oracle: builds the visible set of a query row by explicit
// set union (initial prefix, separators at or before i, window positions),
// rather than the implementation's per-bit condition.
std::set<std::size_t> oracle_row(const TokenSeq& seq, std::size_t i, std::size_t a, std::size_t n,
                                 bool use_seps, std::size_t fix_delta = 0) {
    std::set<std::size_t> visible;
    for (std::size_t j = 0; j < a && j <= i; ++j) visible.insert(j);
    if (use_seps) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (seq.sep_flags[j]) visible.insert(j);
        }
    }
    if (fix_delta >= 1) {
        for (std::size_t j = fix_delta - 1; j <= i; j += fix_delta) visible.insert(j);
    }
    // window: the n most recent positions ending at i
    const std::size_t start = i + 1 >= n ? i + 1 - n : 0;
    for (std::size_t j = start; j <= i; ++j) visible.insert(j);
    return visible;
}

std::set<std::size_t> mask_row(const AttentionMask& mask, std::size_t i) {
    std::set<std::size_t> out;
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (mask.bit(i, j)) out.insert(j);
    }
    return out;
}

TokenSeq random_seq(std::mt19937& rng, std::size_t m, double sep_prob = 0.25) {
    std::bernoulli_distribution sep(sep_prob);
    TokenSeq seq;
    for (std::size_t i = 0; i < m; ++i) {
        const bool is_sep = sep(rng);
        seq.ids.push_back(is_sep ? '.' : 'a');
        seq.sep_flags.push_back(is_sep ? 1 : 0);
    }
    return seq;
}

TokenSeq punct_seq() { return encode("ABC,DE.FG\n", SeparatorSet::default_set()); }

bool subset_of(const AttentionMask& small, const AttentionMask& big) {
    REQUIRE(small.size() == big.size());
    for (std::size_t i = 0; i < small.size(); ++i) {
        for (std::size_t j = 0; j < small.size(); ++j) {
            if (small.bit(i, j) && !big.bit(i, j)) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("full_causal") {
    CHECK(full_causal(0).size() == 0);
    const AttentionMask one = full_causal(1);
    CHECK(one.bit(0, 0));
    const AttentionMask three = full_causal(3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(three.bit(i, j) == (j <= i));
        }
    }
    three.check_invariants();
}

TEST_CASE("sepllm_mask row sets match the oracle on a punctuated string") {
    const TokenSeq seq = punct_seq();
    const AttentionMask mask = sepllm_mask(seq, 1, 2);
    mask.check_invariants();

    // frozen from the row oracle: initial {0}, separators before 8 at {3,6},
    // window {7,8}
    CHECK(mask_row(mask, 8) == std::set<std::size_t>{0, 3, 6, 7, 8});
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(mask_row(mask, i) == oracle_row(seq, i, 1, 2, true));
    }
}

TEST_CASE("sepllm with window covering everything equals full causal") {
    std::mt19937 rng(5);
    for (int iter = 0; iter < 20; ++iter) {
        const TokenSeq seq = random_seq(rng, 17);
        CHECK(sepllm_mask(seq, 0, 17) == full_causal(17));
        CHECK(sepllm_mask(seq, 3, 40) == full_causal(17));
    }
}

TEST_CASE("sepllm with no separators and a=0 is the sliding window") {
    TokenSeq seq;
    for (int i = 0; i < 12; ++i) {
        seq.ids.push_back('a');
        seq.sep_flags.push_back(0);
    }
    CHECK(sepllm_mask(seq, 0, 3) == sliding_window_mask(12, 3));
}

TEST_CASE("streaming_mask") {
    SUBCASE("definition: sepllm with flags cleared") {
        std::mt19937 rng(9);
        const TokenSeq seq = random_seq(rng, 15);
        TokenSeq cleared = seq;
        std::fill(cleared.sep_flags.begin(), cleared.sep_flags.end(), 0);
        CHECK(streaming_mask(seq, 2, 3) == sepllm_mask(cleared, 2, 3));
    }
    SUBCASE("m=5 a=1 n=2 row 4 - row oracle") {
        std::mt19937 rng(10);
        const TokenSeq seq = random_seq(rng, 5);
        const AttentionMask mask = streaming_mask(seq, 1, 2);
        CHECK(mask_row(mask, 4) == std::set<std::size_t>{0, 3, 4});
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(mask_row(mask, i) == oracle_row(seq, i, 1, 2, false));
        }
    }
    SUBCASE("a >= m gives full causal") {
        std::mt19937 rng(11);
        const TokenSeq seq = random_seq(rng, 6);
        CHECK(streaming_mask(seq, 6, 1) == full_causal(6));
        CHECK(streaming_mask(seq, 9, 1) == full_causal(6));
    }
}

TEST_CASE("fixllm_mask") {
    std::mt19937 rng(13);
    SUBCASE("delta=1 keeps every middle position") {
        const TokenSeq seq = random_seq(rng, 9);
        CHECK(fixllm_mask(seq, 1, 2, 1) == full_causal(9));
    }
    SUBCASE("m=10 a=1 n=2 delta=4 row 9 - row oracle") {
        const TokenSeq seq = random_seq(rng, 10);
        const AttentionMask mask = fixllm_mask(seq, 1, 2, 4);
        CHECK(mask_row(mask, 9) == std::set<std::size_t>{0, 3, 7, 8, 9});
        for (std::size_t i = 0; i < 10; ++i) {
            CHECK(mask_row(mask, i) == oracle_row(seq, i, 1, 2, false, 4));
        }
    }
    SUBCASE("delta >= m equals streaming (oracle-confirmed)") {
        for (std::size_t m : {1u, 4u, 7u}) {
            const TokenSeq seq = random_seq(rng, m);
            const AttentionMask fix = fixllm_mask(seq, 1, 2, m);
            const AttentionMask fix2 = fixllm_mask(seq, 1, 2, m + 5);
            const AttentionMask strm = streaming_mask(seq, 1, 2);
            CHECK(fix == strm);
            CHECK(fix2 == strm);
            for (std::size_t i = 0; i < m; ++i) {
                CHECK(mask_row(fix, i) == oracle_row(seq, i, 1, 2, false, m));
            }
        }
    }
}

TEST_CASE("nnz_lower") {
    SUBCASE("closed form for full causal") {
        for (std::size_t m : {0u, 1u, 5u, 33u}) {
            CHECK(nnz_lower(full_causal(m)) == m * (m + 1) / 2);
        }
    }
    SUBCASE("m=8 a=1 n=2 seps at {3,6} - brute-force row count") {
        TokenSeq seq;
        for (std::size_t i = 0; i < 8; ++i) {
            const bool is_sep = i == 3 || i == 6;
            seq.ids.push_back(is_sep ? '.' : 'a');
            seq.sep_flags.push_back(is_sep ? 1 : 0);
        }
        std::uint64_t brute = 0;
        for (std::size_t i = 0; i < 8; ++i) brute += oracle_row(seq, i, 1, 2, true).size();
        CHECK(brute == 24);  // frozen from the oracle (per-row 1,2,3,3,3,4,4,4)
        CHECK(nnz_lower(sepllm_mask(seq, 1, 2)) == brute);
    }
    SUBCASE("empty mask") { CHECK(nnz_lower(AttentionMask(0)) == 0); }
}

TEST_CASE("every policy mask is causal and self-visible") {
    std::mt19937 rng(17);
    std::uniform_int_distribution<std::size_t> mdist(1, 24);
    std::uniform_int_distribution<std::size_t> adist(0, 6);
    std::uniform_int_distribution<std::size_t> ndist(1, 8);
    std::uniform_int_distribution<std::size_t> ddist(1, 9);
    for (int iter = 0; iter < 200; ++iter) {
        const TokenSeq seq = random_seq(rng, mdist(rng));
        sepllm_mask(seq, adist(rng), ndist(rng)).check_invariants();
        streaming_mask(seq, adist(rng), ndist(rng)).check_invariants();
        fixllm_mask(seq, adist(rng), ndist(rng), ddist(rng)).check_invariants();
        sliding_window_mask(seq.size(), ndist(rng)).check_invariants();
        full_causal(seq.size()).check_invariants();
    }
}

TEST_CASE("monotonicity in n and a; sepllm covers streaming") {
    std::mt19937 rng(19);
    std::uniform_int_distribution<std::size_t> mdist(1, 20);
    for (int iter = 0; iter < 100; ++iter) {
        const TokenSeq seq = random_seq(rng, mdist(rng));
        const std::size_t a = iter % 4;
        const std::size_t n1 = 1 + iter % 3;
        const std::size_t n2 = n1 + iter % 5;
        CHECK(subset_of(sepllm_mask(seq, a, n1), sepllm_mask(seq, a, n2)));
        CHECK(subset_of(sepllm_mask(seq, a, n1), sepllm_mask(seq, a + 2, n1)));
        CHECK(subset_of(streaming_mask(seq, a, n1), sepllm_mask(seq, a, n1)));
    }
}

TEST_CASE("sepllm with empty separator set equals streaming exactly") {
    std::mt19937 rng(23);
    for (int iter = 0; iter < 50; ++iter) {
        TokenSeq seq = random_seq(rng, 14);
        TokenSeq no_seps = seq;
        no_seps.sep_flags = classify(no_seps.ids, SeparatorSet{});
        CHECK(sepllm_mask(no_seps, 2, 3) == streaming_mask(seq, 2, 3));
    }
}

TEST_CASE("row popcount bound") {
    std::mt19937 rng(29);
    for (int iter = 0; iter < 100; ++iter) {
        const TokenSeq seq = random_seq(rng, 18);
        const std::size_t a = iter % 3;
        const std::size_t n = 1 + iter % 4;
        const AttentionMask mask = sepllm_mask(seq, a, n);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            std::size_t count = mask_row(mask, i).size();
            std::size_t mid_seps = 0;
            for (std::size_t j = a; j + n <= i; ++j) {
                if (seq.sep_flags[j]) ++mid_seps;
            }
            CHECK(count <= std::min(i + 1, a + n + mid_seps));
        }
    }
}

TEST_CASE("materialized masks agree with the predicate form") {
    std::mt19937 rng(31);
    std::uniform_int_distribution<std::size_t> mdist(0, 16);
    const std::vector<MaskPolicy> policies = {
        MaskPolicy::full(),          MaskPolicy::sepllm(1, 2),      MaskPolicy::sepllm(0, 1),
        MaskPolicy::streaming(2, 3), MaskPolicy::fixllm(1, 2, 4),   MaskPolicy::sliding_window(3),
    };
    for (int iter = 0; iter < 60; ++iter) {
        const TokenSeq seq = random_seq(rng, mdist(rng));
        for (const MaskPolicy& policy : policies) {
            const AttentionMask mask = build_mask(policy, seq);
            for (std::size_t i = 0; i < seq.size(); ++i) {
                for (std::size_t j = 0; j < seq.size(); ++j) {
                    CHECK(mask.bit(i, j) == mask_bit(policy, seq, i, j));
                }
            }
        }
    }
}

TEST_CASE("resolve_layers") {
    const MaskPolicy base = MaskPolicy::sepllm(3, 64);

    SUBCASE("no hybrid") {
        const auto layers = resolve_layers(base, HybridMode::None, 3);
        REQUIRE(layers.size() == 3);
        for (const MaskPolicy& p : layers) CHECK(p.kind == PolicyKind::SepLLM);
    }
    SUBCASE("H: first layer full") {
        const auto layers = resolve_layers(base, HybridMode::H, 3);
        CHECK(layers[0].kind == PolicyKind::Full);
        CHECK(layers[1].kind == PolicyKind::SepLLM);
        CHECK(layers[2].kind == PolicyKind::SepLLM);
    }
    SUBCASE("H/T: first and last layers full") {
        const auto layers = resolve_layers(base, HybridMode::HT, 4);
        CHECK(layers[0].kind == PolicyKind::Full);
        CHECK(layers[1].kind == PolicyKind::SepLLM);
        CHECK(layers[2].kind == PolicyKind::SepLLM);
        CHECK(layers[3].kind == PolicyKind::Full);
    }
    SUBCASE("single layer H/T collapses to full") {
        const auto layers = resolve_layers(base, HybridMode::HT, 1);
        CHECK(layers[0].kind == PolicyKind::Full);
    }
    SUBCASE("zero layers rejected") {
        CHECK_THROWS_AS(resolve_layers(base, HybridMode::None, 0), std::invalid_argument);
    }
}

TEST_CASE("mask export formats") {
    const TokenSeq seq = punct_seq();
    const AttentionMask mask = sepllm_mask(seq, 1, 2);

    const std::string json = mask.to_json();
    CHECK(json.find("\"m\":10") != std::string::npos);
    CHECK(json.find("\"bits\":[[1,0,0") != std::string::npos);

    const std::string pbm = mask.to_pbm();
    CHECK(pbm.substr(0, 3) == "P1\n");
    CHECK(pbm.find("10 10") != std::string::npos);
}

TEST_CASE("policy validation") {
    CHECK_THROWS_AS(MaskPolicy::sepllm(0, 0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(MaskPolicy::fixllm(0, 1, 0).validate(), std::invalid_argument);
    CHECK_NOTHROW(MaskPolicy::sepllm(0, 1).validate());
}
