#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sepkit/tokenizer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace sepkit;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << contents;
    return path;
}

}  // namespace

TEST_CASE("default separator set has the nine standard members") {
    const SeparatorSet seps = SeparatorSet::default_set();
    CHECK(seps.size() == 9);
    for (char ch : std::string(".,?!;: \t\n")) {
        CHECK(seps.contains(static_cast<TokenId>(static_cast<unsigned char>(ch))));
    }
    CHECK_FALSE(seps.contains('a'));
}

TEST_CASE("separator set deduplicates and may be empty") {
    const SeparatorSet dup = SeparatorSet::from_chars("..,,");
    CHECK(dup.size() == 2);
    const SeparatorSet empty = SeparatorSet::from_chars("");
    CHECK(empty.empty());
    CHECK_FALSE(empty.contains('.'));
}

TEST_CASE("encode basics") {
    const SeparatorSet seps = SeparatorSet::default_set();

    SUBCASE("empty input") {
        const TokenSeq seq = encode("", seps);
        CHECK(seq.empty());
        CHECK(seq.sep_flags.empty());
    }
    SUBCASE("ascii bytes and flags") {
        const TokenSeq seq = encode("A,", seps);
        REQUIRE(seq.size() == 2);
        CHECK(seq.ids[0] == 65);
        CHECK(seq.ids[1] == 44);
        CHECK(seq.sep_flags[0] == 0);
        CHECK(seq.sep_flags[1] == 1);
    }
    SUBCASE("mixed punctuation string flags at 3, 6, 9") {
        const TokenSeq seq = encode("ABC,DE.FG\n", seps);
        REQUIRE(seq.size() == 10);
        for (std::size_t i = 0; i < 10; ++i) {
            const bool expect_sep = i == 3 || i == 6 || i == 9;
            CHECK(static_cast<bool>(seq.sep_flags[i]) == expect_sep);
        }
    }
}

TEST_CASE("decode round trips") {
    const SeparatorSet seps = SeparatorSet::default_set();
    CHECK(decode(encode("hello", seps)) == "hello");
    CHECK(decode(encode("", seps)) == "");
    CHECK(decode(encode("a.b", seps)) == "a.b");

    // property: round trip over random byte strings, including non-UTF-8
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<std::size_t> len(0, 64);
    for (int iter = 0; iter < 200; ++iter) {
        std::string text(len(rng), '\0');
        for (char& ch : text) ch = static_cast<char>(byte(rng));
        CHECK(decode(encode(text, seps)) == text);
    }
}

TEST_CASE("decode rejects non-byte ids") {
    TokenSeq seq;
    seq.ids = {65, 300};
    seq.sep_flags = {0, 0};
    CHECK_THROWS_AS(decode(seq), std::invalid_argument);
}

TEST_CASE("classify is pure membership") {
    CHECK(classify({65, 44, 65}, SeparatorSet({44})) == std::vector<std::uint8_t>{0, 1, 0});
    CHECK(classify({1, 2, 3}, SeparatorSet{}) == std::vector<std::uint8_t>{0, 0, 0});

    const TokenSeq fig2 = encode("ABC,DE.FG\n", SeparatorSet::default_set());
    const auto flags = classify(fig2.ids, SeparatorSet::default_set());
    CHECK(flags == fig2.sep_flags);
}

TEST_CASE("classify depends only on ids and set, not position") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int iter = 0; iter < 100; ++iter) {
        std::vector<TokenId> ids(32);
        for (TokenId& id : ids) id = byte(rng);
        const SeparatorSet seps = SeparatorSet::from_chars(".,x");
        auto flags = classify(ids, seps);
        std::vector<TokenId> shuffled = ids;
        std::reverse(shuffled.begin(), shuffled.end());
        auto rflags = classify(shuffled, seps);
        std::reverse(rflags.begin(), rflags.end());
        CHECK(flags == rflags);
    }
}

TEST_CASE("reclassification flips exactly the affected ids") {
    const std::vector<TokenId> ids = {'a', '.', 'b', ',', '.'};
    const auto before = classify(ids, SeparatorSet::from_chars("."));
    const auto after = classify(ids, SeparatorSet::from_chars(".,"));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == ',') {
            CHECK(before[i] == 0);
            CHECK(after[i] == 1);
        } else {
            CHECK(before[i] == after[i]);
        }
    }
}

TEST_CASE("load_corpus") {
    const SeparatorSet seps = SeparatorSet::default_set();

    SUBCASE("small file") {
        const auto path = temp_file("sepkit_tok_ab.txt", "ab");
        CHECK(load_corpus(path, seps).size() == 2);
        std::filesystem::remove(path);
    }
    SUBCASE("empty file") {
        const auto path = temp_file("sepkit_tok_empty.txt", "");
        CHECK(load_corpus(path, seps).empty());
        std::filesystem::remove(path);
    }
    SUBCASE("length equals byte count") {
        std::mt19937 rng(3);
        std::uniform_int_distribution<int> byte(0, 255);
        std::string blob(1234, '\0');
        for (char& ch : blob) ch = static_cast<char>(byte(rng));
        const auto path = temp_file("sepkit_tok_blob.bin", blob);
        const TokenSeq seq = load_corpus(path, seps);
        CHECK(seq.size() == blob.size());  // byte-count oracle
        CHECK(decode(seq) == blob);
        std::filesystem::remove(path);
    }
    SUBCASE("missing file names the path") {
        CHECK_THROWS_WITH_AS(load_corpus("/nonexistent/sepkit.txt", seps),
                             doctest::Contains("/nonexistent/sepkit.txt"), std::runtime_error);
    }
}

TEST_CASE("unescape handles the documented escapes") {
    CHECK(unescape(".,?!;: \\t\\n") == ".,?!;: \t\n");
    CHECK(unescape("ABC,DE.FG\\n").back() == '\n');
    CHECK(unescape("a\\\\b") == "a\\b");
    CHECK_THROWS_AS(unescape("bad\\"), std::invalid_argument);
    CHECK_THROWS_AS(unescape("\\q"), std::invalid_argument);
}
