#include "epp/theorem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>

#include "json.hpp"

#include "epp/dense_oracle.hpp"
#include "epp/io.hpp"
#include "epp/random.hpp"

namespace epp::theorem {

using namespace protocol;
using dense::LocalBasis;
using Mat = dense::Matrix<double>;
using Mat4 = dense::Matrix4<double>;

namespace {

constexpr int kPairs = 3;
constexpr std::uint64_t kStreamCondition2 = 0x636f6e32ULL;
constexpr std::uint64_t kStreamCondition3 = 0x636f6e33ULL;

std::string cite(const Step& step) { return "line " + std::to_string(step.line) + ": " + describe(step); }

/// A measurement step together with the context the checks need.
struct Unit {
    std::size_t index;  // pre-order position, used for sub-seeds
    const Step* step;
    const BiCnot* bicnot = nullptr;  // preceding grouping, for destination measurements
    const Step* keep = nullptr;      // immediately following KEEPIF
};

void collect(const std::vector<Step>& steps, std::size_t& index, std::vector<Unit>& out) {
    const BiCnot* last_bicnot = nullptr;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const Step& s = steps[i];
        const std::size_t here = index++;
        if (const auto* b = std::get_if<BiCnot>(&s.kind)) last_bicnot = b;
        const bool measures = std::holds_alternative<MeasureLocal>(s.kind) ||
                              std::holds_alternative<MeasureCollective>(s.kind) ||
                              std::holds_alternative<MeasureProjector>(s.kind);
        if (measures) {
            Unit u{here, &s};
            Role role = Role::Destination;
            if (const auto* m = std::get_if<MeasureLocal>(&s.kind)) role = m->role;
            if (const auto* m = std::get_if<MeasureCollective>(&s.kind)) role = m->role;
            if (const auto* m = std::get_if<MeasureProjector>(&s.kind)) role = m->role;
            if (role == Role::Destination) u.bicnot = last_bicnot;
            if (i + 1 < steps.size() && std::holds_alternative<KeepIf>(steps[i + 1].kind)) u.keep = &steps[i + 1];
            out.push_back(u);
        }
        if (const auto* r = std::get_if<Repeat>(&s.kind)) collect(r->body, index, out);
    }
}

std::vector<Unit> units_of(const ProtocolSpec& spec) {
    std::vector<Unit> out;
    std::size_t index = 0;
    collect(spec.steps, index, out);
    return out;
}

LocalBasis local_basis(const MeasurementBasis& b) {
    if (b.tilted) return LocalBasis::tilted(b.degrees * std::numbers::pi / 180.0);
    return LocalBasis::of(b.pauli);
}

dense::State random_state(std::size_t trial, Philox& rng, int pairs) {
    return trial % 2 == 0 ? dense::random_pure_state<double>(pairs, rng) : dense::random_mixed_state<double>(pairs, rng);
}

void worsen(ConditionResult& r, Status s) {
    if (s == Status::Unsupported || r.status == Status::Unsupported) r.status = Status::Unsupported;
    else if (s == Status::Fail) r.status = Status::Fail;
}

Mat4 alice_pauli(CnotBasis basis) {
    // Correction toward the majority: an X-basis group detects phase errors
    // (fixed by Z on Alice), a Z-basis group detects bit errors (X on Alice).
    Eigen::Matrix2cd p;
    if (basis == CnotBasis::X) p << 1, 0, 0, -1;
    else p << 0, 1, 1, 0;
    return Eigen::kroneckerProduct(p, Eigen::Matrix2cd::Identity()).eval();
}

// Per-class accumulators: acceptance probability and kept-pair phi+ overlap.
struct ClassTally {
    double probability = 0.0;
    double overlap = 0.0;
};

struct Condition2Case {
    LocalBasis basis;
    int group = 1;                   // pairs in the group (1 = single measured pair)
    std::vector<int> measured;       // pair indices measured
    std::optional<CnotBasis> cnot;   // bi-CNOTs applied from pair 0 to every measured pair
    std::optional<KeepIf> keep;
    bool majority = false;

    [[nodiscard]] bool accepts(std::span<const unsigned> alice, std::span<const unsigned> bob) const {
        if (!keep) return true;
        for (std::size_t t = 0; t < alice.size(); ++t) {
            unsigned v = 0;
            switch (keep->source) {
                case KeepIf::Source::Parity: v = alice[t] ^ bob[t]; break;
                case KeepIf::Source::Alice: v = alice[t]; break;
                case KeepIf::Source::Bob: v = bob[t]; break;
            }
            if (v != keep->bit) return false;
        }
        return true;
    }
};

ClassTally tally(const Mat& branch, const Condition2Case& c, unsigned syndrome_mask) {
    Mat rho = branch;
    const unsigned all = (1U << c.measured.size()) - 1U;
    if (c.majority && syndrome_mask == all) rho = dense::sandwich<double>(rho, kPairs, 0, alice_pauli(*c.cnot));
    const std::array<int, 1> keep{0};
    return {rho.trace().real(), dense::phi_plus_overlap<double>(dense::partial_trace<double>(rho, kPairs, keep), 1)};
}

double condition2_deviation(const Condition2Case& c, const dense::State& input) {
    Mat rho = input.matrix();
    if (c.cnot)
        for (const int d : c.measured) rho = dense::apply_bicnot(dense::State::trusted(kPairs, rho), 0, d, *c.cnot).matrix();

    const std::size_t m = c.measured.size();
    std::map<unsigned, ClassTally> local, collective;

    // Route A: product measurement, every announced outcome tuple.
    for (unsigned tuple = 0; tuple < (1U << (2 * m)); ++tuple) {
        std::vector<unsigned> a(m), b(m);
        unsigned syndrome = 0;
        Mat branch = rho;
        for (std::size_t t = 0; t < m; ++t) {
            a[t] = (tuple >> (2 * t + 1)) & 1U;
            b[t] = (tuple >> (2 * t)) & 1U;
            syndrome |= (a[t] ^ b[t]) << t;
            branch = dense::sandwich<double>(branch, kPairs, c.measured[t], dense::local_projector<double>(c.basis, a[t], b[t]));
        }
        if (!c.accepts(a, b)) continue;
        const ClassTally t = tally(branch, c, syndrome);
        local[syndrome].probability += t.probability;
        local[syndrome].overlap += t.overlap;
    }

    // Route B: parity measurement; a class is accepted if any refining outcome is.
    for (unsigned syndrome = 0; syndrome < (1U << m); ++syndrome) {
        bool accepted = false;
        for (unsigned tuple = 0; tuple < (1U << (2 * m)) && !accepted; ++tuple) {
            std::vector<unsigned> a(m), b(m);
            bool refines = true;
            for (std::size_t t = 0; t < m; ++t) {
                a[t] = (tuple >> (2 * t + 1)) & 1U;
                b[t] = (tuple >> (2 * t)) & 1U;
                refines &= ((a[t] ^ b[t]) == ((syndrome >> t) & 1U));
            }
            accepted = refines && c.accepts(a, b);
        }
        if (!accepted) continue;
        Mat branch = rho;
        for (std::size_t t = 0; t < m; ++t)
            branch = dense::sandwich<double>(branch, kPairs, c.measured[t],
                                             dense::parity_projector<double>(c.basis, (syndrome >> t) & 1U));
        collective[syndrome] = tally(branch, c, syndrome);
    }

    double deviation = 0.0;
    for (unsigned syndrome = 0; syndrome < (1U << m); ++syndrome) {
        const ClassTally l = local.contains(syndrome) ? local[syndrome] : ClassTally{};
        const ClassTally k = collective.contains(syndrome) ? collective[syndrome] : ClassTally{};
        deviation = std::max({deviation, std::abs(l.probability - k.probability), std::abs(l.overlap - k.overlap)});
    }
    return deviation;
}

/// The outcome projectors of the collective measurement a step implies, if any.
std::optional<std::array<Mat4, 2>> collective_projectors(const Step& step) {
    if (const auto* m = std::get_if<MeasureLocal>(&step.kind)) {
        const LocalBasis b = local_basis(m->basis);
        return std::array<Mat4, 2>{dense::parity_projector<double>(b, 0U), dense::parity_projector<double>(b, 1U)};
    }
    if (const auto* m = std::get_if<MeasureCollective>(&step.kind))
        return std::array<Mat4, 2>{dense::parity_projector<double>(m->basis, Parity::Even),
                                   dense::parity_projector<double>(m->basis, Parity::Odd)};
    if (const auto* m = std::get_if<MeasureProjector>(&step.kind)) {
        Mat4 p = Mat4::Zero();
        p(2 * m->alice + m->bob, 2 * m->alice + m->bob) = 1.0;
        return std::array<Mat4, 2>{p, Mat4::Identity() - p};
    }
    return std::nullopt;
}

nlohmann::json condition_json(const ConditionResult& r) {
    return {{"status", std::string(to_string(r.status))},
            {"max_deviation", r.max_deviation},
            {"offending", r.offending}};
}

}  // namespace

std::string_view to_string(Status s) {
    switch (s) {
        case Status::Pass: return "pass";
        case Status::Fail: return "fail";
        case Status::Unsupported: return "unsupported";
    }
    return "?";
}

ConditionResult check_condition1(const ProtocolSpec& spec) {
    ConditionResult result;
    const auto visit = [&](const auto& self, const std::vector<Step>& steps) -> void {
        for (const Step& s : steps) {
            const bool allowed = std::holds_alternative<Distribute>(s.kind) ||
                                 std::holds_alternative<TestSample>(s.kind) || std::holds_alternative<BiCnot>(s.kind) ||
                                 std::holds_alternative<MeasureLocal>(s.kind) || std::holds_alternative<KeepIf>(s.kind) ||
                                 std::holds_alternative<Discard>(s.kind) || std::holds_alternative<Repeat>(s.kind);
            if (!allowed) {
                result.status = Status::Fail;
                result.offending.push_back(cite(s));
            }
            if (const auto* r = std::get_if<Repeat>(&s.kind)) self(self, r->body);
        }
    };
    visit(visit, spec.steps);
    return result;
}

ConditionResult check_condition2(const ProtocolSpec& spec, std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("trials must be at least 1");
    ConditionResult result;
    const Philox root(seed, kStreamCondition2);
    for (const Unit& u : units_of(spec)) {
        Condition2Case c;
        if (const auto* m = std::get_if<MeasureLocal>(&u.step->kind)) c.basis = local_basis(m->basis);
        else if (const auto* m = std::get_if<MeasureCollective>(&u.step->kind)) c.basis = LocalBasis::of(m->basis);
        else continue;  // a rank-1 projector has no local counterpart to swap in

        if (u.bicnot) {
            c.group = u.bicnot->group_size;
            if (c.group > kPairs) {
                worsen(result, Status::Unsupported);
                result.offending.push_back(cite(*u.step) + " (group of " + std::to_string(c.group) +
                                           " pairs exceeds the dense oracle)");
                continue;
            }
            c.cnot = u.bicnot->basis;
            for (int d = 1; d < c.group; ++d) c.measured.push_back(d);
        } else {
            c.measured = {1};
        }
        if (u.keep) c.keep = std::get<KeepIf>(u.keep->kind);
        c.majority = !c.keep && c.group == 3;

        const Philox step_rng = root.substream(u.index);
        double deviation = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            Philox rng = step_rng.substream(t);
            deviation = std::max(deviation, condition2_deviation(c, random_state(t, rng, kPairs)));
        }
        result.max_deviation = std::max(result.max_deviation, deviation);
        if (!(deviation < kTolerance)) {
            worsen(result, Status::Fail);
            result.offending.push_back(cite(*u.step) + (u.keep ? " with " + cite(*u.keep) : std::string()));
        }
    }
    return result;
}

ConditionResult check_condition3(const ProtocolSpec& spec, std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("trials must be at least 1");
    constexpr int kCheckPairs = 2;
    constexpr int kMeasured = 1;
    ConditionResult result;
    const Philox root(seed, kStreamCondition3);
    for (const Unit& u : units_of(spec)) {
        const auto projectors = collective_projectors(*u.step);
        if (!projectors) continue;
        const Philox step_rng = root.substream(u.index);
        double deviation = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            Philox rng = step_rng.substream(t);
            const dense::State rho = random_state(t, rng, kCheckPairs);
            const Mat dark = dense::dark_bell_measure<double>(rho.matrix(), kCheckPairs);
            for (const Mat4& p : *projectors) {
                const Mat measured_first =
                    dense::dark_bell_measure<double>(dense::sandwich<double>(rho.matrix(), kCheckPairs, kMeasured, p), kCheckPairs);
                const Mat dark_first = dense::sandwich<double>(dark, kCheckPairs, kMeasured, p);
                deviation = std::max({deviation, dense::trace_distance<double>(measured_first, dark_first),
                                      std::abs(measured_first.trace().real() - dark_first.trace().real())});
            }
        }
        result.max_deviation = std::max(result.max_deviation, deviation);
        if (!(deviation < kTolerance)) {
            worsen(result, Status::Fail);
            result.offending.push_back(cite(*u.step));
        }
    }
    return result;
}

TheoremVerdict check(const ProtocolSpec& spec, std::size_t trials, std::uint64_t seed) {
    TheoremVerdict v;
    v.protocol = spec.name;
    v.trials = trials;
    v.seed = seed;
    v.condition1 = check_condition1(spec);
    v.condition2 = check_condition2(spec, trials, seed);
    v.condition3 = check_condition3(spec, trials, seed);
    return v;
}

std::string to_json(const TheoremVerdict& v) {
    const nlohmann::json j{{"schema", std::string(kVerdictJsonSchema)},
                           {"protocol", v.protocol},
                           {"trials", v.trials},
                           {"seed", v.seed},
                           {"condition1", condition_json(v.condition1)},
                           {"condition2", condition_json(v.condition2)},
                           {"condition3", condition_json(v.condition3)},
                           {"pass", v.pass()}};
    return j.dump();
}

}  // namespace epp::theorem
