#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epp/bell.hpp"
#include "epp/protocol.hpp"
#include "epp/rates.hpp"

namespace epp::mc {

/// A step the label-level engine cannot execute (it needs dense simulation).
class Unsupported : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Packed bit string.
class BitVector {
public:
    BitVector() = default;
    explicit BitVector(std::size_t n) : words_((n + 63) / 64, 0), size_(n) {}

    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] bool get(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1U; }
    void set(std::size_t i, bool v) {
        const std::uint64_t m = std::uint64_t{1} << (i & 63);
        words_[i >> 6] = v ? (words_[i >> 6] | m) : (words_[i >> 6] & ~m);
    }
    void flip(std::size_t i) { words_[i >> 6] ^= std::uint64_t{1} << (i & 63); }
    [[nodiscard]] const std::vector<std::uint64_t>& words() const { return words_; }
    [[nodiscard]] std::size_t count() const;
    /// Number of positions where the two strings differ (sizes must match).
    [[nodiscard]] std::size_t hamming(const BitVector& other) const;
    /// Lowercase hex, four bits per digit, bit 0 first (least significant in the digit).
    [[nodiscard]] std::string hex() const;

    friend bool operator==(const BitVector&, const BitVector&) = default;

private:
    std::vector<std::uint64_t> words_;
    std::size_t size_ = 0;
};

/// N shared pairs: one byte per Bell label code and an alive bitset.
class PairEnsemble {
public:
    PairEnsemble() = default;
    explicit PairEnsemble(std::vector<std::uint8_t> labels);

    [[nodiscard]] std::size_t size() const { return labels_.size(); }
    [[nodiscard]] std::size_t alive_count() const { return alive_count_; }
    [[nodiscard]] BellLabel label(std::size_t i) const { return BellLabel::from_code(labels_[i]); }
    void set_label(std::size_t i, BellLabel l) { labels_[i] = l.code(); }
    [[nodiscard]] bool alive(std::size_t i) const { return (alive_[i >> 6] >> (i & 63)) & 1U; }
    void kill(std::size_t i);

    /// Alive indices in ascending order.
    [[nodiscard]] std::vector<std::uint32_t> alive_indices() const;
    /// Label counts over alive pairs, in rate order (q_I, q_x, q_y, q_z).
    [[nodiscard]] std::array<std::size_t, 4> alive_counts() const;
    /// Empirical rates over alive pairs; requires at least one alive pair.
    [[nodiscard]] Rates empirical_rates() const;
    [[nodiscard]] const std::vector<std::uint8_t>& labels() const { return labels_; }

private:
    std::vector<std::uint8_t> labels_;
    std::vector<std::uint64_t> alive_;
    std::size_t alive_count_ = 0;
};

struct ChannelModel {
    enum class Kind : std::uint8_t { IidBellDiagonal, BlockCorrelated, AdversarialPermutation };
    Kind kind = Kind::IidBellDiagonal;
    Rates rates = make_rates(1.0, 0.0, 0.0, 0.0);  // iid rates, or the adversary's label budget
    std::vector<Rates> block_rates;  // block b draws from block_rates[b % size]
    std::size_t block_len = 1;

    static ChannelModel iid(const Rates& r);
    static ChannelModel blocks(std::vector<Rates> rates, std::size_t block_len);
    /// A fixed budget round(N q) of each label, bad labels clustered in runs,
    /// rotated by a seed-derived offset.
    static ChannelModel adversarial(const Rates& budget);

    /// Throws std::invalid_argument on unnormalized rates or an empty block list.
    void validate() const;
};

std::string_view to_string(ChannelModel::Kind k);

PairEnsemble distribute(std::size_t n, const ChannelModel& channel, std::uint64_t seed);

/// Per-basis parity-1 rate for iid rates: Z -> q_x+q_y, X -> q_z+q_y, Y -> q_x+q_z.
double parity_error_rate(const Rates& q, Basis basis);

struct TestOutcome {
    std::size_t tested = 0;
    std::size_t errors = 0;
    [[nodiscard]] double rate() const { return tested ? static_cast<double>(errors) / static_cast<double>(tested) : 0.0; }
};

/// Abort threshold. Without eps0 the test aborts when errors > delta*k; with
/// eps0 it accepts only when errors <= (delta - eps0)*k. Both are reported.
struct Threshold {
    double delta = 0.0;
    std::optional<double> eps0;

    [[nodiscard]] bool strict_abort(const TestOutcome& t) const;
    [[nodiscard]] bool margin_abort(const TestOutcome& t) const;
    [[nodiscard]] bool aborts(const TestOutcome& t) const { return eps0 ? margin_abort(t) : strict_abort(t); }
    void validate() const;
};

struct ErrorTestResult {
    bool accepted = true;
    std::array<TestOutcome, 3> outcomes{};  // indexed by Basis (X, Y, Z)
    bool strict_abort = false;
    std::optional<bool> margin_abort;
};

/// Samples 3k alive pairs without replacement, measures k in each basis,
/// marks them dead. Throws std::invalid_argument if fewer than 3k are alive.
ErrorTestResult run_error_test(PairEnsemble& ensemble, std::size_t k, const Threshold& threshold, std::uint64_t seed);

/// Same, on given test groups (indexed X, Y, Z) instead of a random sample.
ErrorTestResult run_error_test(PairEnsemble& ensemble, const std::array<std::vector<std::uint32_t>, 3>& groups,
                               const Threshold& threshold, std::uint64_t seed);

struct RoundStats {
    int line = 0;
    CnotBasis basis = CnotBasis::Z;
    std::size_t input = 0;      // alive pairs before grouping
    std::size_t groups = 0;
    std::size_t passed = 0;     // groups whose control survived
    std::size_t survivors = 0;  // alive after the round, leftovers included
    Rates rates_before = Rates::Zero();
    Rates rates_after = Rates::Zero();
    [[nodiscard]] double survival() const {
        return input ? static_cast<double>(survivors) / static_cast<double>(input) : 0.0;
    }
};

/// One bit-flip (Z) or phase-flip (X) rejection sub-step on 2-pair groups:
/// bi-CNOT, W (x) W on the destination, keep the control on parity 0.
RoundStats rejection_round(PairEnsemble& ensemble, CnotBasis basis, std::uint64_t seed,
                           protocol::Grouping grouping = protocol::Grouping::Random);

enum class Side : std::uint8_t { Alice, Bob };

/// Decision for one group after its destinations are announced.
enum class Keep : std::uint8_t { Discard, Keep, KeepCorrected };

/// A party's decisions for consecutive groups of `group_size` pairs (control
/// plus group_size - 1 announced destinations), computed from its own
/// announced bits and the peer's. With no rule, 2-pair groups keep and 3-pair
/// groups apply the majority correction.
std::vector<Keep> keep_decisions(Side self, const BitVector& own, const BitVector& peer,
                                 const std::optional<protocol::KeepIf>& rule, int group_size);

struct Message {
    Side from = Side::Alice;
    std::uint64_t sequence = 0;
    std::string topic;  // "sample-seed", "grouping-seed", "outcomes"
    std::uint64_t value = 0;
    BitVector bits;
};

struct RunOptions {
    std::map<std::string, protocol::ParamValue> overrides;  // e.g. N, k, rounds
    std::optional<Threshold> threshold;  // else from PARAM delta / eps0
    bool keep_transcript = false;
    /// Applied to each message in transit (test hook).
    std::function<void(Message&)> tamper;
};

struct TrialReport {
    std::string protocol;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    bool accepted = true;
    std::string abort_reason;
    std::array<TestOutcome, 3> tests{};
    std::array<bool, 3> tested{};
    bool strict_abort = false;
    std::optional<bool> margin_abort;
    std::vector<RoundStats> rounds;
    std::size_t m = 0;
    std::optional<Rates> final_rates;
    std::optional<Basis> key_basis;
    BitVector key_alice;
    BitVector key_bob;
    std::string transcript_digest;
    std::vector<Message> transcript;  // only with keep_transcript

    [[nodiscard]] std::size_t key_disagreements() const { return key_basis ? key_alice.hamming(key_bob) : 0; }
};

/// Steps the engine cannot run, as "line N: STEP" citations.
std::vector<std::string> unsupported_steps(const protocol::ProtocolSpec& spec);

/// Runs one trial as two parties exchanging announcements. Throws Unsupported
/// for steps needing dense simulation, std::invalid_argument for scripts
/// that do not fit the ensemble (e.g. a destination measurement with no
/// grouping, or too few pairs for a test).
TrialReport run_protocol(const protocol::ProtocolSpec& spec, const ChannelModel& channel, std::uint64_t seed,
                         std::size_t trial = 0, const RunOptions& options = {});

/// One JSON object per line (schema epp-trial-report/1).
std::string to_json_line(const TrialReport& report);

/// Aggregate CSV (schema epp-trials/1), one row per trial.
void write_trials_csv(std::ostream& out, std::span<const TrialReport> reports);

}  // namespace epp::mc
