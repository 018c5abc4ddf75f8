#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sepkit {

using TokenId = std::int32_t;

/// Token ids designated as segment separators. Deduplicated, kept sorted so
/// iteration order is deterministic. May be empty, which degenerates the
/// separator-aware policies to plain sink+window behaviour.
class SeparatorSet {
public:
    SeparatorSet() = default;
    explicit SeparatorSet(const std::vector<TokenId>& ids);

    /// Byte-level set from a literal string of separator characters,
    /// e.g. ".,?!;: \t\n". Each byte becomes one member.
    static SeparatorSet from_chars(std::string_view chars);

    /// The nine-element default: '.' ',' '?' '!' ';' ':' ' ' '\t' '\n'.
    static SeparatorSet default_set();

    bool contains(TokenId id) const;
    const std::vector<TokenId>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }
    bool empty() const { return members_.empty(); }

private:
    std::vector<TokenId> members_;  // sorted, unique
};

/// Token ids with per-token separator flags. sep_flags[i] is true iff ids[i]
/// was in the SeparatorSet active at classification time.
struct TokenSeq {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> sep_flags;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

/// Byte-level encoding: one token per byte, flags from `seps`.
TokenSeq encode(std::string_view text, const SeparatorSet& seps);

/// Inverse of encode. Throws std::invalid_argument if an id is not a byte
/// value (lossy decode).
std::string decode(const TokenSeq& seq);

/// classify[i] == (ids[i] in seps). Position-independent.
std::vector<std::uint8_t> classify(const std::vector<TokenId>& ids, const SeparatorSet& seps);

/// Reads a whole file as bytes and encodes it. Throws std::runtime_error
/// naming the path if the file cannot be read.
TokenSeq load_corpus(const std::filesystem::path& path, const SeparatorSet& seps);

/// Processes the escape sequences \n \t \r \0 and \\ in a config-supplied
/// string (separator sets and CLI --text arguments). Throws
/// std::invalid_argument on a dangling or unknown escape.
std::string unescape(std::string_view raw);

}  // namespace sepkit
