#include "epp/bell.hpp"

namespace epp {

std::string_view to_string(BellLabel label) {
    static constexpr std::array<std::string_view, 4> names{"phi+", "psi+", "phi-", "psi-"};
    return names[label.code()];
}

std::string_view to_string(Basis basis) {
    switch (basis) {
        case Basis::X: return "X";
        case Basis::Y: return "Y";
        case Basis::Z: return "Z";
    }
    return "?";
}

std::string_view to_string(CnotBasis basis) { return basis == CnotBasis::Z ? "Z" : "X"; }

std::array<double, 4> local_outcome_distribution(BellLabel label, Basis basis) {
    // Marginals are uniform; the announced bits differ exactly by the parity.
    const unsigned p = to_bit(parity(label, basis));
    std::array<double, 4> dist{};
    for (unsigned a = 0; a < 2; ++a) dist[2 * a + (a ^ p)] = 0.5;
    return dist;
}

}  // namespace epp
