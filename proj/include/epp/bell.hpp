#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>

namespace epp {

/// One of the four Bell states chi_{phase,flip}.
///
///   (0,0) = phi+   (1,0) = phi-   (0,1) = psi+   (1,1) = psi-
///
/// The one-byte code (bit0 = flip, bit1 = phase) is the serialized form and
/// also the index order used by the dense oracle's Bell basis.
struct BellLabel {
    std::uint8_t phase = 0;
    std::uint8_t flip = 0;

    constexpr BellLabel() = default;
    constexpr BellLabel(unsigned phase_bit, unsigned flip_bit)
        : phase(static_cast<std::uint8_t>(phase_bit & 1U)),
          flip(static_cast<std::uint8_t>(flip_bit & 1U)) {}

    [[nodiscard]] constexpr std::uint8_t code() const {
        return static_cast<std::uint8_t>((phase << 1) | flip);
    }
    static constexpr BellLabel from_code(std::uint8_t c) { return {(c >> 1) & 1U, c & 1U}; }

    friend constexpr bool operator==(BellLabel, BellLabel) = default;
};

inline constexpr BellLabel kPhiPlus{0, 0};
inline constexpr BellLabel kPhiMinus{1, 0};
inline constexpr BellLabel kPsiPlus{0, 1};
inline constexpr BellLabel kPsiMinus{1, 1};

inline constexpr std::array<BellLabel, 4> kAllLabels{BellLabel::from_code(0), BellLabel::from_code(1),
                                                     BellLabel::from_code(2), BellLabel::from_code(3)};

enum class Basis : std::uint8_t { X, Y, Z };

inline constexpr std::array<Basis, 3> kAllBases{Basis::X, Basis::Y, Basis::Z};

/// Bases in which a bi-CNOT can be applied.
enum class CnotBasis : std::uint8_t { Z, X };

/// 0 = same outcome on both sides, 1 = different. For Y, Bob's outcome bit is
/// relabeled (flipped) so that phi+ has parity 0 in every basis.
enum class Parity : std::uint8_t { Even = 0, Odd = 1 };

constexpr unsigned to_bit(Parity p) { return static_cast<unsigned>(p); }
constexpr Parity parity_from_bit(unsigned b) { return (b & 1U) ? Parity::Odd : Parity::Even; }

std::string_view to_string(BellLabel label);
std::string_view to_string(Basis basis);
std::string_view to_string(CnotBasis basis);

/// Deterministic collective-measurement parity: ZZ -> flip, XX -> phase,
/// YY -> phase xor flip.
constexpr Parity parity(BellLabel label, Basis basis) {
    switch (basis) {
        case Basis::Z: return parity_from_bit(label.flip);
        case Basis::X: return parity_from_bit(label.phase);
        case Basis::Y: return parity_from_bit(label.phase ^ label.flip);
    }
    return Parity::Even;
}

/// Z-basis bi-CNOT, second argument is the destination:
/// chi_{i,j} chi_{i',j'} -> chi_{i^i',j} chi_{i',j'^j}.
constexpr std::pair<BellLabel, BellLabel> bicnot_z(BellLabel control, BellLabel destination) {
    return {BellLabel(control.phase ^ destination.phase, control.flip),
            BellLabel(destination.phase, destination.flip ^ control.flip)};
}

/// X-basis bi-CNOT (Z-basis bi-CNOT conjugated by Hadamards on all four qubits):
/// chi_{i,j} chi_{i',j'} -> chi_{i,j^j'} chi_{i^i',j'}.
constexpr std::pair<BellLabel, BellLabel> bicnot_x(BellLabel control, BellLabel destination) {
    return {BellLabel(control.phase, control.flip ^ destination.flip),
            BellLabel(control.phase ^ destination.phase, destination.flip)};
}

constexpr std::pair<BellLabel, BellLabel> bicnot(CnotBasis basis, BellLabel control, BellLabel destination) {
    return basis == CnotBasis::Z ? bicnot_z(control, destination) : bicnot_x(control, destination);
}

/// The parity a bi-CNOT in `basis` collects onto the destination.
constexpr Basis parity_basis(CnotBasis basis) { return basis == CnotBasis::Z ? Basis::Z : Basis::X; }

/// Joint distribution of the announced bits (alice, bob) when each side
/// measures its half of `label` in `basis`. Indexed by 2*alice + bob.
std::array<double, 4> local_outcome_distribution(BellLabel label, Basis basis);

}  // namespace epp
