#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epp/bell.hpp"

namespace epp {

/// Bell-state rates ordered (q_I, q_x, q_y, q_z) = (phi+, psi+, psi-, phi-).
template <typename Scalar>
using RateVector = Eigen::Matrix<Scalar, 4, 1>;

using Rates = RateVector<double>;

enum RateIndex : Eigen::Index { kRateI = 0, kRateX = 1, kRateY = 2, kRateZ = 3 };

constexpr Eigen::Index rate_index(BellLabel label) {
    // phi+ -> I, psi+ -> x, psi- -> y, phi- -> z
    constexpr Eigen::Index by_code[4] = {kRateI, kRateX, kRateZ, kRateY};
    return by_code[label.code()];
}

constexpr BellLabel label_of_rate(Eigen::Index idx) {
    constexpr BellLabel by_index[4] = {kPhiPlus, kPsiPlus, kPsiMinus, kPhiMinus};
    return by_index[idx];
}

template <typename Scalar>
RateVector<Scalar> make_rates(Scalar q_i, Scalar q_x, Scalar q_y, Scalar q_z) {
    RateVector<Scalar> r;
    r << q_i, q_x, q_y, q_z;
    return r;
}

template <typename Scalar>
constexpr Scalar normalization_tolerance() {
    return Scalar(1e-12);
}

template <typename Scalar>
bool is_normalized(const RateVector<Scalar>& rates, Scalar tol = normalization_tolerance<Scalar>()) {
    if (!rates.allFinite()) return false;
    if ((rates.array() < Scalar(0)).any() || (rates.array() > Scalar(1) + tol).any()) return false;
    return std::abs(rates.sum() - Scalar(1)) <= tol;
}

template <typename Scalar>
void require_normalized(const RateVector<Scalar>& rates) {
    if (!is_normalized(rates))
        throw std::invalid_argument("rate vector must be non-negative and sum to 1");
}

/// Exchanges q_x and q_z.
template <typename Scalar>
RateVector<Scalar> swap_xz(const RateVector<Scalar>& rates) {
    RateVector<Scalar> out = rates;
    std::swap(out[kRateX], out[kRateZ]);
    return out;
}

template <typename Scalar>
struct RoundResult {
    RateVector<Scalar> rates;
    /// Surviving pairs relative to this round's input.
    Scalar survival;
};

namespace detail {

template <typename Scalar>
RateVector<Scalar> renormalized(RateVector<Scalar> rates) {
    const Scalar drift = std::abs(rates.sum() - Scalar(1));
    if (drift > normalization_tolerance<Scalar>())
        throw std::logic_error("rate recursion drifted off the simplex");
    rates /= rates.sum();
    return rates;
}

}  // namespace detail

/// One bit-flip rejection round (Z-basis bi-CNOT, ZZ parity on the
/// destination, keep the control on parity 0).
///
/// With D = (q_I+q_z)^2 + (q_x+q_y)^2 the group pass probability:
///   q_I' = (q_I^2+q_z^2)/D   q_x' = (q_x^2+q_y^2)/D
///   q_y' = 2 q_x q_y / D     q_z' = 2 q_I q_z / D
/// and half of each passing group is consumed, so survival = D/2.
template <typename Scalar>
RoundResult<Scalar> bitflip_round(const RateVector<Scalar>& rates) {
    require_normalized(rates);
    const Scalar qi = rates[kRateI], qx = rates[kRateX], qy = rates[kRateY], qz = rates[kRateZ];
    const Scalar even = qi + qz;
    const Scalar odd = qx + qy;
    const Scalar d = even * even + odd * odd;
    // d >= 1/2 on the simplex
    if (!(d > Scalar(0))) throw std::logic_error("degenerate rate vector in bit-flip round");
    RateVector<Scalar> out;
    out << (qi * qi + qz * qz) / d, (qx * qx + qy * qy) / d, Scalar(2) * qx * qy / d, Scalar(2) * qi * qz / d;
    return {detail::renormalized(out), d / Scalar(2)};
}

/// Phase-flip rejection: the bit-flip map conjugated by the x <-> z swap.
template <typename Scalar>
RoundResult<Scalar> phaseflip_round(const RateVector<Scalar>& rates) {
    auto r = bitflip_round(swap_xz(rates));
    r.rates = swap_xz(r.rates);
    return r;
}

enum class RoundKind { BitFlip, PhaseFlip };

inline std::string_view to_string(RoundKind kind) {
    return kind == RoundKind::BitFlip ? "bitflip" : "phaseflip";
}

using Schedule = std::vector<RoundKind>;

/// BitFlip, PhaseFlip repeated `full_rounds` times.
inline Schedule alternating_schedule(std::size_t full_rounds) {
    Schedule s;
    s.reserve(2 * full_rounds);
    for (std::size_t g = 0; g < full_rounds; ++g) {
        s.push_back(RoundKind::BitFlip);
        s.push_back(RoundKind::PhaseFlip);
    }
    return s;
}

template <typename Scalar>
struct RoundReport {
    std::size_t round_index;  // 1-based sub-step index
    RoundKind kind;
    RateVector<Scalar> rates;
    Scalar survival;
    Scalar cumulative;
    Scalar infidelity;
};

template <typename Scalar>
RoundResult<Scalar> apply_round(RoundKind kind, const RateVector<Scalar>& rates) {
    return kind == RoundKind::BitFlip ? bitflip_round(rates) : phaseflip_round(rates);
}

template <typename Scalar>
std::vector<RoundReport<Scalar>> iterate(const RateVector<Scalar>& initial, const Schedule& schedule) {
    if (schedule.empty()) throw std::invalid_argument("schedule must not be empty");
    require_normalized(initial);
    std::vector<RoundReport<Scalar>> reports;
    reports.reserve(schedule.size());
    RateVector<Scalar> rates = initial;
    Scalar cumulative(1);
    for (std::size_t n = 0; n < schedule.size(); ++n) {
        const auto step = apply_round(schedule[n], rates);
        rates = step.rates;
        cumulative *= step.survival;
        reports.push_back({n + 1, schedule[n], rates, step.survival, cumulative, Scalar(1) - rates[kRateI]});
    }
    return reports;
}

/// Shortest alternating schedule (BitFlip first) with 1 - q_I <= target,
/// trying at most `max_rounds` sub-steps. nullopt means not reached.
template <typename Scalar>
std::optional<Schedule> find_schedule(const RateVector<Scalar>& initial, Scalar target_infidelity,
                                      std::size_t max_rounds) {
    if (!(target_infidelity > Scalar(0) && target_infidelity < Scalar(1)))
        throw std::invalid_argument("target infidelity must lie in (0,1)");
    require_normalized(initial);
    Schedule schedule;
    RateVector<Scalar> rates = initial;
    while (true) {
        if (Scalar(1) - rates[kRateI] <= target_infidelity) return schedule;
        if (schedule.size() >= max_rounds) return std::nullopt;
        const RoundKind next = schedule.size() % 2 == 0 ? RoundKind::BitFlip : RoundKind::PhaseFlip;
        rates = apply_round(next, rates).rates;
        schedule.push_back(next);
    }
}

/// CSV with header round,q_I,q_x,q_y,q_z,survival,cumulative,infidelity,
/// preceded by a `# schema=` comment line.
void write_rounds_csv(std::ostream& out, const std::vector<RoundReport<double>>& reports);

/// Parses "a,b,c,d" into a rate vector; throws std::invalid_argument.
Rates parse_rates(const std::string& text);

}  // namespace epp
