#include "epp/mc_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "epp/io.hpp"
#include "epp/random.hpp"

namespace epp::mc {

using protocol::Step;

namespace {

constexpr std::uint64_t kStreamChannel = 0x6368616eULL;
constexpr std::uint64_t kStreamNature = 0x6e617475ULL;
constexpr std::uint64_t kStreamAlice = 0x616c6963ULL;
constexpr std::uint64_t kStreamShuffle = 0x73687566ULL;

std::size_t basis_slot(Basis b) { return static_cast<std::size_t>(b); }

// parity bit by [basis][label code]
constexpr auto kParity = [] {
    std::array<std::array<std::uint8_t, 4>, 3> t{};
    for (const Basis b : kAllBases)
        for (std::uint8_t c = 0; c < 4; ++c) t[static_cast<std::size_t>(b)][c] = to_bit(parity(BellLabel::from_code(c), b));
    return t;
}();

// bi-CNOT images by [basis][4*control + destination] -> (control', destination') codes
constexpr auto kBicnot = [] {
    std::array<std::array<std::pair<std::uint8_t, std::uint8_t>, 16>, 2> t{};
    for (int b = 0; b < 2; ++b)
        for (std::uint8_t c = 0; c < 4; ++c)
            for (std::uint8_t d = 0; d < 4; ++d) {
                const auto [c1, d1] = bicnot(b == 0 ? CnotBasis::Z : CnotBasis::X, BellLabel::from_code(c), BellLabel::from_code(d));
                t[b][4 * c + d] = {c1.code(), d1.code()};
            }
    return t;
}();

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? std::string(sep) : "") + items[i];
    return out;
}

std::string cite(const Step& s) { return "line " + std::to_string(s.line) + ": " + protocol::describe(s); }

Rates rates_or_zero(const PairEnsemble& e) { return e.alive_count() ? e.empirical_rates() : Rates::Zero(); }

// Seeded Fisher-Yates over the first `count` positions.
void partial_shuffle(std::vector<std::uint32_t>& v, std::size_t count, Philox& rng) {
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < count && i + 1 < n; ++i) std::swap(v[i], v[i + rng.below(n - i)]);
}

struct Views {
    // what each party holds after an exchange: its own announced bits and
    // the bits it received from the peer
    BitVector alice_own, alice_peer, bob_own, bob_peer;
};

/// One trial's shared machinery: the ensemble, nature's randomness, Alice's
/// private randomness and the message channel between the parties.
class Session {
public:
    Session(PairEnsemble& ensemble, std::uint64_t seed, std::size_t trial, const RunOptions* options)
        : ensemble_(ensemble),
          nature_(Philox(seed, kStreamNature).substream(trial)),
          alice_(Philox(seed, kStreamAlice).substream(trial)),
          options_(options) {}

    PairEnsemble& ensemble() { return ensemble_; }

    Message deliver(Message m) {
        m.sequence = sequence_++;
        if (options_ && options_->tamper) options_->tamper(m);
        digest_.update_u64(static_cast<unsigned long long>(m.from));
        digest_.update_u64(m.sequence);
        digest_.update(m.topic.data(), m.topic.size());
        digest_.update_u64(m.value);
        digest_.update_u64(m.bits.size());
        for (const std::uint64_t w : m.bits.words()) digest_.update_u64(w);
        if (options_ && options_->keep_transcript) transcript_.push_back(m);
        return m;
    }

    /// Alice draws a seed and announces it; returns (Alice's, Bob's received).
    std::pair<std::uint64_t, std::uint64_t> announce_seed(const std::string& topic) {
        const std::uint64_t value = alice_();
        const Message got = deliver({Side::Alice, 0, topic, value, {}});
        return {value, got.value};
    }

    /// Both parties measure the listed pairs in `basis` and exchange outcomes.
    Views measure(std::span<const std::uint32_t> pairs, Basis basis) {
        Philox rng = nature_.substream(step_++);
        const auto& table = kParity[basis_slot(basis)];
        BitVector a(pairs.size()), b(pairs.size());
        std::uint64_t word = 0;
        for (std::size_t t = 0; t < pairs.size(); ++t) {
            if ((t & 63) == 0) word = rng();
            const unsigned abit = (word >> (t & 63)) & 1U;
            const unsigned bbit = abit ^ table[ensemble_.labels()[pairs[t]]];
            if (abit) a.set(t, true);
            if (bbit) b.set(t, true);
        }
        Views v;
        v.bob_peer = deliver({Side::Alice, 0, "outcomes", 0, a}).bits;
        v.alice_peer = deliver({Side::Bob, 0, "outcomes", 0, b}).bits;
        v.alice_own = std::move(a);
        v.bob_own = std::move(b);
        return v;
    }

    /// The shared permutation of alive pairs for a grouping step.
    std::vector<std::uint32_t> grouping_order(protocol::Grouping grouping) {
        std::vector<std::uint32_t> order = ensemble_.alive_indices();
        if (grouping == protocol::Grouping::Random) {
            const auto [mine, theirs] = announce_seed("grouping-seed");
            if (mine != theirs) throw std::logic_error("parties disagree on the grouping seed");
            Philox rng(mine, kStreamShuffle);
            shuffle(std::span<std::uint32_t>(order), rng);
        }
        return order;
    }

    std::vector<std::uint32_t> sample(std::size_t count) {
        std::vector<std::uint32_t> order = ensemble_.alive_indices();
        if (count > order.size())
            throw std::invalid_argument("test needs " + std::to_string(count) + " pairs but only " +
                                        std::to_string(order.size()) + " are alive");
        const auto [mine, theirs] = announce_seed("sample-seed");
        if (mine != theirs) throw std::logic_error("parties disagree on the sample seed");
        Philox rng(mine, kStreamShuffle);
        partial_shuffle(order, count, rng);
        order.resize(count);
        return order;
    }

    [[nodiscard]] std::string digest() const { return digest_.hex(); }
    std::vector<Message>& transcript() { return transcript_; }

private:
    PairEnsemble& ensemble_;
    Philox nature_;
    Philox alice_;
    const RunOptions* options_;
    std::uint64_t sequence_ = 0;
    std::uint64_t step_ = 0;
    Fnv1a digest_;
    std::vector<Message> transcript_;
};

TestOutcome count_errors(const Views& v) {
    // each party counts disagreements from what it holds; they must agree
    const std::size_t by_alice = v.alice_own.hamming(v.alice_peer);
    const std::size_t by_bob = v.bob_own.hamming(v.bob_peer);
    if (by_alice != by_bob) throw std::logic_error("parties disagree on the test error count");
    return {v.alice_own.size(), by_alice};
}

struct PendingGroups {
    CnotBasis basis = CnotBasis::Z;
    int size = 2;
    std::vector<std::uint32_t> members;  // control, destinations..., per group
    std::size_t input = 0;
    Rates before = Rates::Zero();
    int line = 0;
};

PendingGroups form_groups(Session& s, CnotBasis basis, protocol::Grouping grouping, int size, int line) {
    PairEnsemble& e = s.ensemble();
    PendingGroups g;
    g.basis = basis;
    g.size = size;
    g.line = line;
    g.input = e.alive_count();
    g.before = rates_or_zero(e);
    std::vector<std::uint32_t> order = s.grouping_order(grouping);
    const std::size_t groups = order.size() / static_cast<std::size_t>(size);
    order.resize(groups * static_cast<std::size_t>(size));
    const auto& table = kBicnot[basis == CnotBasis::Z ? 0 : 1];
    for (std::size_t k = 0; k < groups; ++k) {
        const std::uint32_t c = order[k * size];
        for (int t = 1; t < size; ++t) {
            const std::uint32_t d = order[k * size + t];
            const auto [c1, d1] = table[4 * e.labels()[c] + e.labels()[d]];
            e.set_label(c, BellLabel::from_code(c1));
            e.set_label(d, BellLabel::from_code(d1));
            e.kill(d);
        }
    }
    g.members = std::move(order);
    return g;
}

/// Measures the destinations, applies the keep rule both parties derived.
RoundStats finish_groups(Session& s, PendingGroups& g, Basis basis, const std::optional<protocol::KeepIf>& rule,
                         std::vector<std::uint32_t>* trash) {
    PairEnsemble& e = s.ensemble();
    const std::size_t size = static_cast<std::size_t>(g.size);
    const std::size_t groups = g.members.size() / size;
    std::vector<std::uint32_t> dests;
    dests.reserve(groups * (size - 1));
    for (std::size_t k = 0; k < groups; ++k)
        for (std::size_t t = 1; t < size; ++t) dests.push_back(g.members[k * size + t]);
    const Views v = s.measure(dests, basis);
    const auto by_alice = keep_decisions(Side::Alice, v.alice_own, v.alice_peer, rule, g.size);
    const auto by_bob = keep_decisions(Side::Bob, v.bob_own, v.bob_peer, rule, g.size);
    if (by_alice != by_bob) throw std::logic_error("parties disagree on which pairs to keep");

    RoundStats st;
    st.line = g.line;
    st.basis = g.basis;
    st.input = g.input;
    st.groups = groups;
    st.rates_before = g.before;
    for (std::size_t k = 0; k < groups; ++k) {
        const std::uint32_t c = g.members[k * size];
        switch (by_alice[k]) {
            case Keep::Discard: e.kill(c); break;
            case Keep::KeepCorrected: {
                BellLabel l = e.label(c);
                if (g.basis == CnotBasis::X) l.phase ^= 1U;
                else l.flip ^= 1U;
                e.set_label(c, l);
                ++st.passed;
                break;
            }
            case Keep::Keep: ++st.passed; break;
        }
    }
    if (trash) trash->insert(trash->end(), dests.begin(), dests.end());
    st.survivors = e.alive_count();
    st.rates_after = rates_or_zero(e);
    g.members.clear();
    return st;
}

Threshold resolve_threshold(const protocol::ProtocolSpec& spec, const RunOptions& options) {
    if (options.threshold) return *options.threshold;
    Threshold t;
    t.delta = protocol::param_or(spec, "delta", std::nan(""), options.overrides);
    if (std::isnan(t.delta)) throw std::invalid_argument("error test needs a threshold: set PARAM delta or pass delta");
    const double eps0 = protocol::param_or(spec, "eps0", std::nan(""), options.overrides);
    if (!std::isnan(eps0)) t.eps0 = eps0;
    t.validate();
    return t;
}

class Runner {
public:
    Runner(const protocol::ProtocolSpec& spec, const ChannelModel& channel, std::uint64_t seed, std::size_t trial,
           const RunOptions& options)
        : spec_(spec), channel_(channel), seed_(seed), trial_(trial), options_(options) {
        report_.protocol = spec.name;
        report_.trial = trial;
        report_.seed = seed;
    }

    TrialReport run() {
        block(spec_.steps);
        if (!session_) throw std::invalid_argument("script never distributes pairs");
        if (!report_.accepted) {
            report_.m = 0;
            report_.final_rates.reset();
            report_.key_basis.reset();
        } else if (!report_.key_basis) {
            report_.m = ensemble_.alive_count();
            if (report_.m) report_.final_rates = ensemble_.empirical_rates();
        }
        report_.transcript_digest = session_->digest();
        if (options_.keep_transcript) report_.transcript = std::move(session_->transcript());
        return std::move(report_);
    }

private:
    void block(const std::vector<Step>& steps) {
        for (std::size_t i = 0; i < steps.size() && report_.accepted; ++i) {
            const Step& s = steps[i];
            const Step* next = i + 1 < steps.size() ? &steps[i + 1] : nullptr;
            if (next && !std::holds_alternative<protocol::KeepIf>(next->kind)) next = nullptr;
            if (step(s, next)) ++i;  // the KEEPIF was consumed
        }
    }

    Session& session(const Step& s) {
        if (!session_) throw std::invalid_argument(cite(s) + " comes before DISTRIBUTE");
        return *session_;
    }

    /// Returns true when it consumed the following KEEPIF.
    bool step(const Step& s, const Step* keep) {
        using namespace protocol;
        if (const auto* d = std::get_if<Distribute>(&s.kind)) {
            if (session_) throw std::invalid_argument(cite(s) + ": pairs were already distributed");
            const auto n = resolve(d->pairs, spec_, options_.overrides);
            if (n < 1) throw std::invalid_argument(cite(s) + ": need at least one pair");
            ensemble_ = distribute(static_cast<std::size_t>(n), channel_, Philox(seed_, kStreamChannel).substream(trial_)());
            session_.emplace(ensemble_, seed_, trial_, &options_);
            return false;
        }
        if (std::holds_alternative<DarkBell>(s.kind)) {
            session(s);  // labels already are the dark measurement's pointer states
            return false;
        }
        if (const auto* t = std::get_if<TestSample>(&s.kind)) {
            Session& ses = session(s);
            const auto k = static_cast<std::size_t>(resolve(t->count, spec_, options_.overrides));
            auto picked = ses.sample(k);
            for (const std::uint32_t p : picked) ensemble_.kill(p);
            auto& group = tests_[basis_slot(t->basis)];
            group.insert(group.end(), picked.begin(), picked.end());
            return false;
        }
        if (const auto* b = std::get_if<BiCnot>(&s.kind)) {
            pending_ = form_groups(session(s), b->basis, b->grouping, b->group_size, s.line);
            return false;
        }
        if (const auto* m = std::get_if<MeasureLocal>(&s.kind)) return measure(s, m->basis.pauli, m->role, keep);
        if (std::holds_alternative<KeepIf>(s.kind))
            throw std::invalid_argument(cite(s) + " does not follow a destination measurement");
        if (std::holds_alternative<Discard>(s.kind)) {
            for (auto& t : trash_) t.clear();
            return false;
        }
        if (const auto* r = std::get_if<Repeat>(&s.kind)) {
            const auto times = resolve(r->times, spec_, options_.overrides);
            for (std::int64_t n = 0; n < times && report_.accepted; ++n) block(r->body);
            return false;
        }
        throw Unsupported(cite(s) + " needs dense simulation");
    }

    bool measure(const Step& s, Basis basis, protocol::Role role, const Step* keep) {
        using protocol::Role;
        Session& ses = session(s);
        const std::size_t slot = basis_slot(basis);
        switch (role) {
            case Role::Destination: {
                if (!pending_ || pending_->members.empty())
                    throw std::invalid_argument(cite(s) + " has no preceding BICNOT grouping");
                std::optional<protocol::KeepIf> rule;
                if (keep) rule = std::get<protocol::KeepIf>(keep->kind);
                report_.rounds.push_back(finish_groups(ses, *pending_, basis, rule, &trash_[slot]));
                pending_.reset();
                return keep != nullptr;
            }
            case Role::Test: {
                const auto group = std::move(tests_[slot]);
                tests_[slot].clear();
                const TestOutcome out = count_errors(ses.measure(group, basis));
                TestOutcome& acc = report_.tests[slot];
                acc.tested += out.tested;
                acc.errors += out.errors;
                report_.tested[slot] = true;
                trash_[slot].insert(trash_[slot].end(), group.begin(), group.end());
                if (!threshold_) threshold_ = resolve_threshold(spec_, options_);
                report_.strict_abort = report_.strict_abort || threshold_->strict_abort(acc);
                if (threshold_->eps0) report_.margin_abort = report_.margin_abort.value_or(false) || threshold_->margin_abort(acc);
                if (threshold_->aborts(acc)) {
                    report_.accepted = false;
                    report_.abort_reason = "test " + std::string(to_string(basis)) + ": " + std::to_string(acc.errors) +
                                           " errors in " + std::to_string(acc.tested);
                }
                return false;
            }
            case Role::Trash: {
                const auto group = std::move(trash_[slot]);
                trash_[slot].clear();
                ses.measure(group, basis);  // announced, nothing depends on it
                return false;
            }
            case Role::Kept: {
                const std::vector<std::uint32_t> pairs = ensemble_.alive_indices();
                report_.final_rates = pairs.empty() ? std::optional<Rates>{} : std::optional<Rates>{ensemble_.empirical_rates()};
                Views v = ses.measure(pairs, basis);
                for (const std::uint32_t p : pairs) ensemble_.kill(p);
                report_.m = pairs.size();
                report_.key_basis = basis;
                report_.key_alice = std::move(v.alice_own);
                report_.key_bob = std::move(v.bob_own);
                return false;
            }
        }
        return false;
    }

    const protocol::ProtocolSpec& spec_;
    const ChannelModel& channel_;
    std::uint64_t seed_;
    std::size_t trial_;
    const RunOptions& options_;
    PairEnsemble ensemble_;
    std::optional<Session> session_;
    std::optional<PendingGroups> pending_;
    std::optional<Threshold> threshold_;
    std::array<std::vector<std::uint32_t>, 3> tests_;
    std::array<std::vector<std::uint32_t>, 3> trash_;
    TrialReport report_;
};

void collect_unsupported(const std::vector<Step>& steps, std::vector<std::string>& out) {
    using namespace protocol;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const Step& s = steps[i];
        const bool dense_only = std::holds_alternative<MeasureCollective>(s.kind) ||
                                std::holds_alternative<BellRead>(s.kind) ||
                                std::holds_alternative<MeasureProjector>(s.kind) || std::holds_alternative<Gate>(s.kind);
        if (dense_only) out.push_back(cite(s));
        if (const auto* m = std::get_if<MeasureLocal>(&s.kind); m && m->basis.tilted) out.push_back(cite(s));
        if (const auto* b = std::get_if<BiCnot>(&s.kind); b && b->group_size > 3) {
            // majority correction is defined for 3-pair groups only
            const bool ruled = i + 2 < steps.size() && std::holds_alternative<KeepIf>(steps[i + 2].kind);
            if (!ruled) out.push_back(cite(s) + " (no keep rule for groups larger than 3)");
        }
        if (const auto* r = std::get_if<Repeat>(&s.kind)) collect_unsupported(r->body, out);
    }
}

}  // namespace

// --- BitVector ------------------------------------------------------------

std::size_t BitVector::count() const {
    std::size_t n = 0;
    for (const std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::size_t BitVector::hamming(const BitVector& other) const {
    if (other.size_ != size_) throw std::invalid_argument("bit strings differ in length");
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::size_t>(std::popcount(words_[i] ^ other.words_[i]));
    return n;
}

std::string BitVector::hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve((size_ + 3) / 4);
    for (std::size_t i = 0; i < size_; i += 4) {
        const unsigned nibble = static_cast<unsigned>((words_[i >> 6] >> (i & 63)) & 0xFU);
        const std::size_t valid = std::min<std::size_t>(4, size_ - i);
        out.push_back(kDigits[nibble & ((1U << valid) - 1U)]);
    }
    return out;
}

// --- PairEnsemble ---------------------------------------------------------

PairEnsemble::PairEnsemble(std::vector<std::uint8_t> labels)
    : labels_(std::move(labels)), alive_((labels_.size() + 63) / 64, ~std::uint64_t{0}), alive_count_(labels_.size()) {
    for (const std::uint8_t c : labels_)
        if (c > 3) throw std::invalid_argument("label codes are 0..3");
    if (const std::size_t tail = labels_.size() & 63; tail) alive_.back() = (std::uint64_t{1} << tail) - 1;
}

void PairEnsemble::kill(std::size_t i) {
    const std::uint64_t m = std::uint64_t{1} << (i & 63);
    if (alive_[i >> 6] & m) {
        alive_[i >> 6] &= ~m;
        --alive_count_;
    }
}

std::vector<std::uint32_t> PairEnsemble::alive_indices() const {
    std::vector<std::uint32_t> out;
    out.reserve(alive_count_);
    for (std::size_t w = 0; w < alive_.size(); ++w)
        for (std::uint64_t bits = alive_[w]; bits; bits &= bits - 1)
            out.push_back(static_cast<std::uint32_t>(w * 64 + static_cast<std::size_t>(std::countr_zero(bits))));
    return out;
}

std::array<std::size_t, 4> PairEnsemble::alive_counts() const {
    std::array<std::size_t, 4> by_code{};
    for (std::size_t w = 0; w < alive_.size(); ++w)
        for (std::uint64_t bits = alive_[w]; bits; bits &= bits - 1)
            ++by_code[labels_[w * 64 + static_cast<std::size_t>(std::countr_zero(bits))]];
    std::array<std::size_t, 4> out{};
    for (std::uint8_t c = 0; c < 4; ++c) out[static_cast<std::size_t>(rate_index(BellLabel::from_code(c)))] = by_code[c];
    return out;
}

Rates PairEnsemble::empirical_rates() const {
    if (alive_count_ == 0) throw std::logic_error("no alive pairs");
    const auto counts = alive_counts();
    Rates r;
    for (Eigen::Index i = 0; i < 4; ++i)
        r[i] = static_cast<double>(counts[static_cast<std::size_t>(i)]) / static_cast<double>(alive_count_);
    return r;
}

// --- channels -------------------------------------------------------------

ChannelModel ChannelModel::iid(const Rates& r) {
    ChannelModel c;
    c.kind = Kind::IidBellDiagonal;
    c.rates = r;
    c.validate();
    return c;
}

ChannelModel ChannelModel::blocks(std::vector<Rates> rates, std::size_t block_len) {
    ChannelModel c;
    c.kind = Kind::BlockCorrelated;
    c.block_rates = std::move(rates);
    c.block_len = block_len;
    c.validate();
    return c;
}

ChannelModel ChannelModel::adversarial(const Rates& budget) {
    ChannelModel c;
    c.kind = Kind::AdversarialPermutation;
    c.rates = budget;
    c.validate();
    return c;
}

void ChannelModel::validate() const {
    switch (kind) {
        case Kind::IidBellDiagonal:
        case Kind::AdversarialPermutation: require_normalized(rates); break;
        case Kind::BlockCorrelated:
            if (block_rates.empty()) throw std::invalid_argument("block channel needs at least one rate vector");
            if (block_len < 1) throw std::invalid_argument("block length must be at least 1");
            for (const Rates& r : block_rates) require_normalized(r);
            break;
    }
}

std::string_view to_string(ChannelModel::Kind k) {
    switch (k) {
        case ChannelModel::Kind::IidBellDiagonal: return "iid";
        case ChannelModel::Kind::BlockCorrelated: return "block";
        case ChannelModel::Kind::AdversarialPermutation: return "adversarial";
    }
    return "?";
}

namespace {

std::uint8_t draw(const Rates& q, double u) {
    double acc = 0;
    for (Eigen::Index i = 0; i < 3; ++i) {
        acc += q[i];
        if (u < acc) return label_of_rate(i).code();
    }
    return label_of_rate(kRateZ).code();
}

// Largest-remainder rounding of n * q.
std::array<std::size_t, 4> budget_counts(const Rates& q, std::size_t n) {
    std::array<std::size_t, 4> counts{};
    std::array<std::pair<double, std::size_t>, 4> rem{};
    std::size_t total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double exact = q[static_cast<Eigen::Index>(i)] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = {exact - std::floor(exact), i};
        total += counts[i];
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t j = 0; total < n; ++j, ++total) ++counts[rem[j % 4].second];
    return counts;
}

}  // namespace

PairEnsemble distribute(std::size_t n, const ChannelModel& channel, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("N must be at least 1");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("N exceeds 2^32 - 1");
    channel.validate();
    Philox rng(seed, kStreamChannel);
    std::vector<std::uint8_t> labels(n);
    switch (channel.kind) {
        case ChannelModel::Kind::IidBellDiagonal:
            for (auto& l : labels) l = draw(channel.rates, rng.uniform());
            break;
        case ChannelModel::Kind::BlockCorrelated:
            for (std::size_t i = 0; i < n; ++i)
                labels[i] = draw(channel.block_rates[(i / channel.block_len) % channel.block_rates.size()], rng.uniform());
            break;
        case ChannelModel::Kind::AdversarialPermutation: {
            // bad labels first, each in one run, so neighbours share a label
            const auto counts = budget_counts(channel.rates, n);
            std::size_t pos = 0;
            for (const Eigen::Index r : {kRateX, kRateY, kRateZ, kRateI})
                for (std::size_t c = 0; c < counts[static_cast<std::size_t>(r)]; ++c) labels[pos++] = label_of_rate(r).code();
            std::rotate(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(rng.below(n)), labels.end());
            break;
        }
    }
    return PairEnsemble(std::move(labels));
}

double parity_error_rate(const Rates& q, Basis basis) {
    double p = 0;
    for (const BellLabel l : kAllLabels)
        if (parity(l, basis) == Parity::Odd) p += q[rate_index(l)];
    return p;
}

// --- error test -----------------------------------------------------------

bool Threshold::strict_abort(const TestOutcome& t) const {
    return static_cast<double>(t.errors) > delta * static_cast<double>(t.tested);
}

bool Threshold::margin_abort(const TestOutcome& t) const {
    if (!eps0) return strict_abort(t);
    return static_cast<double>(t.errors) > (delta - *eps0) * static_cast<double>(t.tested);
}

void Threshold::validate() const {
    if (!(delta > 0 && delta < 1)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (eps0 && !(*eps0 > 0 && *eps0 < delta)) throw std::invalid_argument("eps0 must lie in (0, delta)");
}

namespace {

ErrorTestResult test_groups(Session& s, const std::array<std::vector<std::uint32_t>, 3>& groups,
                            const Threshold& threshold) {
    ErrorTestResult r;
    if (threshold.eps0) r.margin_abort = false;
    for (const Basis b : kAllBases) {
        for (const std::uint32_t p : groups[basis_slot(b)]) {
            if (p >= s.ensemble().size() || !s.ensemble().alive(p))
                throw std::invalid_argument("test pairs must be distinct alive pairs");
            s.ensemble().kill(p);
        }
    }
    for (const Basis b : kAllBases) {
        const TestOutcome out = count_errors(s.measure(groups[basis_slot(b)], b));
        r.outcomes[basis_slot(b)] = out;
        r.strict_abort = r.strict_abort || threshold.strict_abort(out);
        if (threshold.eps0) r.margin_abort = *r.margin_abort || threshold.margin_abort(out);
        if (threshold.aborts(out)) r.accepted = false;
    }
    return r;
}

}  // namespace

ErrorTestResult run_error_test(PairEnsemble& ensemble, std::size_t k, const Threshold& threshold, std::uint64_t seed) {
    threshold.validate();
    Session s(ensemble, seed, 0, nullptr);
    const auto picked = s.sample(3 * k);
    std::array<std::vector<std::uint32_t>, 3> groups;
    for (const Basis b : kAllBases) {
        const auto first = picked.begin() + static_cast<std::ptrdiff_t>(basis_slot(b) * k);
        groups[basis_slot(b)].assign(first, first + static_cast<std::ptrdiff_t>(k));
    }
    return test_groups(s, groups, threshold);
}

ErrorTestResult run_error_test(PairEnsemble& ensemble, const std::array<std::vector<std::uint32_t>, 3>& groups,
                               const Threshold& threshold, std::uint64_t seed) {
    threshold.validate();
    Session s(ensemble, seed, 0, nullptr);
    return test_groups(s, groups, threshold);
}

RoundStats rejection_round(PairEnsemble& ensemble, CnotBasis basis, std::uint64_t seed, protocol::Grouping grouping) {
    if (ensemble.alive_count() < 2) throw std::invalid_argument("rejection needs at least two alive pairs");
    Session s(ensemble, seed, 0, nullptr);
    PendingGroups g = form_groups(s, basis, grouping, 2, 0);
    return finish_groups(s, g, parity_basis(basis), protocol::KeepIf{protocol::KeepIf::Source::Parity, 0}, nullptr);
}

std::vector<Keep> keep_decisions(Side self, const BitVector& own, const BitVector& peer,
                                 const std::optional<protocol::KeepIf>& rule, int group_size) {
    if (group_size < 2) throw std::invalid_argument("groups have at least two pairs");
    const std::size_t per = static_cast<std::size_t>(group_size - 1);
    if (own.size() != peer.size() || own.size() % per != 0)
        throw std::invalid_argument("announcements do not match the grouping");
    if (!rule && group_size > 3) throw Unsupported("no default keep rule for groups larger than 3");
    const BitVector& alice = self == Side::Alice ? own : peer;
    const BitVector& bob = self == Side::Alice ? peer : own;
    std::vector<Keep> out(own.size() / per);
    for (std::size_t g = 0; g < out.size(); ++g) {
        bool all_match = true;
        std::size_t odd = 0;
        for (std::size_t t = g * per; t < (g + 1) * per; ++t) {
            const unsigned a = alice.get(t), b = bob.get(t);
            odd += a ^ b;
            if (rule) {
                unsigned v = a ^ b;
                if (rule->source == protocol::KeepIf::Source::Alice) v = a;
                if (rule->source == protocol::KeepIf::Source::Bob) v = b;
                all_match = all_match && v == rule->bit;
            }
        }
        if (rule) out[g] = all_match ? Keep::Keep : Keep::Discard;
        else if (group_size == 3 && odd == per) out[g] = Keep::KeepCorrected;
        else out[g] = Keep::Keep;
    }
    return out;
}

std::vector<std::string> unsupported_steps(const protocol::ProtocolSpec& spec) {
    std::vector<std::string> out;
    collect_unsupported(spec.steps, out);
    return out;
}

TrialReport run_protocol(const protocol::ProtocolSpec& spec, const ChannelModel& channel, std::uint64_t seed,
                         std::size_t trial, const RunOptions& options) {
    if (const auto bad = unsupported_steps(spec); !bad.empty())
        throw Unsupported("steps need dense simulation: " + join(bad, "; "));
    channel.validate();
    return Runner(spec, channel, seed, trial, options).run();
}

// --- output ---------------------------------------------------------------

namespace {

nlohmann::ordered_json rates_json(const Rates& r) { return {r[0], r[1], r[2], r[3]}; }

}  // namespace

std::string to_json_line(const TrialReport& r) {
    using nlohmann::ordered_json;
    ordered_json tests = ordered_json::object();
    for (const Basis b : kAllBases) {
        const std::size_t i = basis_slot(b);
        if (!r.tested[i]) continue;
        tests[std::string(to_string(b))] = {
            {"tested", r.tests[i].tested}, {"errors", r.tests[i].errors}, {"rate", r.tests[i].rate()}};
    }
    ordered_json rounds = ordered_json::array();
    for (const RoundStats& s : r.rounds)
        rounds.push_back({{"line", s.line},
                          {"basis", std::string(to_string(s.basis))},
                          {"input", s.input},
                          {"groups", s.groups},
                          {"passed", s.passed},
                          {"survivors", s.survivors},
                          {"survival", s.survival()},
                          {"rates", rates_json(s.rates_after)}});
    ordered_json j{{"schema", std::string(kTrialJsonSchema)},
                   {"protocol", r.protocol},
                   {"trial", r.trial},
                   {"seed", r.seed},
                   {"accepted", r.accepted},
                   {"abort_reason", r.accepted ? ordered_json(nullptr) : ordered_json(r.abort_reason)},
                   {"tests", tests},
                   {"abort_strict", r.strict_abort},
                   {"abort_margin", r.margin_abort ? ordered_json(*r.margin_abort) : ordered_json(nullptr)},
                   {"rounds", rounds},
                   {"m", r.m},
                   {"final_rates", r.final_rates ? rates_json(*r.final_rates) : ordered_json(nullptr)}};
    if (r.key_basis) {
        j["key"] = {{"basis", std::string(to_string(*r.key_basis))},
                    {"bits", r.key_alice.size()},
                    {"disagreements", r.key_disagreements()},
                    {"alice", r.key_alice.hex()},
                    {"bob", r.key_bob.hex()}};
    } else {
        j["key"] = nullptr;
    }
    j["transcript_digest"] = r.transcript_digest;
    return j.dump();
}

void write_trials_csv(std::ostream& out, std::span<const TrialReport> reports) {
    out << "# schema=" << kTrialCsvSchema << '\n';
    out << "trial,seed,accepted,m,q_I,q_x,q_y,q_z,key_bits,key_disagreements,transcript_digest\n";
    for (const TrialReport& r : reports) {
        out << r.trial << ',' << r.seed << ',' << (r.accepted ? 1 : 0) << ',' << r.m;
        for (Eigen::Index i = 0; i < 4; ++i) out << ',' << (r.final_rates ? format_double((*r.final_rates)[i]) : "");
        out << ',' << (r.key_basis ? r.key_alice.size() : 0) << ',' << r.key_disagreements() << ','
            << r.transcript_digest << '\n';
    }
}

}  // namespace epp::mc
