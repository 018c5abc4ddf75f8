#pragma once

#include "sepkit/tokenizer.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace sepkit {

/// Capacities of the four streaming cache blocks. The streaming machine
/// requires a + s + w < c so a compression always frees space.
struct CacheConfig {
    std::size_t a = 4;    ///< Initial Cache capacity
    std::size_t s = 32;   ///< Separator Cache capacity
    std::size_t w = 224;  ///< Local Window Cache capacity
    std::size_t c = 324;  ///< total KV capacity

    /// Throws std::invalid_argument on a + s + w >= c, w == 0 or c == 0.
    void validate() const;
};

struct CacheEntry {
    TokenId token_id = 0;
    bool is_sep = false;
    std::size_t arrival_index = 0;  ///< absolute position in the original stream
};

/// What one streaming step did.
struct StepEvents {
    enum class Placement { Init, Local };
    Placement placed_in = Placement::Local;
    bool shifted = false;     ///< oldest local entry moved to past
    bool compressed = false;  ///< Size_run hit c and a compression ran
    std::size_t promoted = 0; ///< past separators moved into sep
    std::size_t dropped = 0;  ///< past entries discarded
    /// Size_run at the compression trigger (== c when compressed), i.e. the
    /// mid-step peak before the past window is cleared.
    std::size_t peak_size_run = 0;

    const char* label() const;
};

/// The four-block streaming KV retention machine.
///
/// Each consumed token lands in the Initial Cache while it has room,
/// otherwise at the end of the Local Window; a local overflow shifts the
/// oldest local entry into the Past Window. When total occupancy reaches c
/// the past window is compressed: its separators move to the Separator
/// Cache (in arrival order, while sep has room) and everything else is
/// discarded. Runtime occupancy never exceeds c at any observable point.
class StreamState {
public:
    explicit StreamState(const CacheConfig& cfg);

    StepEvents step(TokenId token, bool is_sep);
    StepEvents step(const CacheEntry& token);

    /// The compression routine; public so traces of hand-built states can be
    /// tested. Precondition: size_run() == cfg.c.
    StepEvents::Placement place(const CacheEntry& token, bool* shifted);
    void compress(std::size_t* promoted, std::size_t* dropped);

    std::size_t size_init() const { return init_.size(); }
    std::size_t size_sep() const { return sep_.size(); }
    std::size_t size_past() const { return past_.size(); }
    std::size_t size_local() const { return local_.size(); }
    std::size_t size_run() const { return init_.size() + sep_.size() + past_.size() + local_.size(); }
    /// Runtime neighboring count n = |past| + |local|.
    std::size_t neighboring() const { return past_.size() + local_.size(); }
    std::size_t consumed() const { return consumed_; }
    std::size_t compressions() const { return compressions_; }
    const CacheConfig& config() const { return cfg_; }

    /// Entries in block order init, sep, past, local; the entry at index k
    /// attends at cache-relative position k.
    std::vector<CacheEntry> entries() const;

    /// Cache-relative positions 0..size_run()-1, paired with entries(). The
    /// next incoming token attends at index size_run().
    std::vector<std::size_t> positions() const;

private:
    CacheConfig cfg_;
    std::vector<CacheEntry> init_;
    std::vector<CacheEntry> sep_;
    std::deque<CacheEntry> past_;
    std::deque<CacheEntry> local_;
    std::size_t consumed_ = 0;
    std::size_t compressions_ = 0;
};

/// Generation-time retention of the non-streaming design: first `a` tokens,
/// every separator ever evicted from the window, and the `n` most recent
/// tokens. The separator list grows without bound by design.
class FundamentalCache {
public:
    FundamentalCache(std::size_t a, std::size_t n);

    void step(TokenId token, bool is_sep);
    void step(const CacheEntry& token);

    /// Retained entries in ascending arrival order, duplicate-free (a token
    /// both in the initial prefix and the window is listed once).
    std::vector<CacheEntry> retained() const;
    std::size_t size() const;
    std::size_t consumed() const { return consumed_; }

    std::size_t size_init() const { return init_.size(); }
    std::size_t size_seps() const { return seps_.size(); }
    std::size_t size_window() const { return window_.size(); }

private:
    std::size_t a_;
    std::size_t n_;
    std::vector<CacheEntry> init_;
    std::vector<CacheEntry> seps_;
    std::deque<CacheEntry> window_;
    std::size_t consumed_ = 0;
};

// --- retention-policy trace ------------------------------------------------

/// Full retention: Size_run(m) == m.
struct VanillaPolicy {};

/// The StreamingLLM comparison baseline: a sinks plus the (c-a) most recent
/// tokens, so steady-state occupancy is exactly c.
struct RingPolicy {
    std::size_t a = 4;
    std::size_t c = 324;
};

struct FundamentalPolicy {
    std::size_t a = 4;
    std::size_t n = 256;
};

using KvPolicy = std::variant<VanillaPolicy, RingPolicy, FundamentalPolicy, CacheConfig>;

/// One per-step snapshot of the cache state, taken after the whole step
/// (placement plus any compression) finished.
struct TraceRow {
    std::size_t step = 0;  ///< 1-based count of tokens consumed
    std::string event;
    std::size_t size_init = 0;
    std::size_t size_sep = 0;
    std::size_t size_past = 0;
    std::size_t size_local = 0;
    std::size_t size_run = 0;
    std::size_t n = 0;
};

struct TraceResult {
    std::vector<TraceRow> rows;
    double rkv_mean = 0.0;  ///< mean Size_run over all steps
    std::vector<std::size_t> size_run_series;
    std::vector<std::size_t> n_series;
    std::size_t compressions = 0;
};

/// Incremental driver for any retention policy: consumes tokens one at a
/// time, yields the post-step TraceRow, and exposes the retained entries in
/// enumeration (attention-position) order. Both the standalone simulator and
/// the model's generation loop run on this tracker.
class PolicyTracker {
public:
    explicit PolicyTracker(const KvPolicy& policy);

    TraceRow step(TokenId token, bool is_sep);
    /// Retained entries; entry k attends at cache-relative position k. The
    /// most recently consumed token is always last.
    std::vector<CacheEntry> retained() const;
    std::size_t consumed() const { return consumed_; }
    std::size_t compressions() const;

private:
    struct VanillaState {
        std::vector<CacheEntry> all;
    };
    struct RingState {
        RingPolicy policy;
        std::vector<CacheEntry> sinks;
        std::deque<CacheEntry> ring;
    };
    std::variant<VanillaState, RingState, FundamentalCache, StreamState> state_;
    std::size_t consumed_ = 0;
};

/// Runs a retention policy over a token stream and records occupancy per step.
TraceResult runtime_kv_trace(const TokenSeq& tokens, const KvPolicy& policy);

inline constexpr const char* kTraceCsvHeader = "step,event,size_init,size_sep,size_past,size_local,size_run,n";

std::string trace_to_csv(const std::vector<TraceRow>& rows);
void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path);

}  // namespace sepkit
