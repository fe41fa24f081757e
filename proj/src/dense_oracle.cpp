#include "epp/dense_oracle.hpp"

#include <algorithm>
#include <array>

namespace epp {

using namespace dense;

namespace {

using Mat = Matrix<double>;

constexpr double kIdentityTol = Tolerances<double>::identity;

// Alternates pure and mixed inputs so both generic families are covered.
State random_state(int pairs, std::size_t trial, Philox& rng) {
    return trial % 2 == 0 ? random_pure_state<double>(pairs, rng) : random_mixed_state<double>(pairs, rng);
}

VerifyReport finish(std::string claim, std::size_t trials, double deviation) {
    return {std::move(claim), trials, deviation, deviation < kIdentityTol};
}

}  // namespace

std::vector<VerifyReport> verify_commutation(std::size_t trial_count, std::uint64_t seed) {
    if (trial_count < 1) throw std::invalid_argument("trial_count must be at least 1");
    double dev_bicnot = 0, dev_parity = 0, dev_fidelity = 0;
    const Philox root(seed, 0x636f6d6dULL);
    for (std::size_t t = 0; t < trial_count; ++t) {
        Philox rng = root.substream(t);
        const State rho = random_state(2, t, rng);
        const State dark = dark_bell_measure(rho);

        for (const CnotBasis basis : {CnotBasis::Z, CnotBasis::X})
            for (const auto& [c, d] : {std::pair{0, 1}, std::pair{1, 0}}) {
                // dark, bi-CNOT, dark  vs  bi-CNOT, dark
                const State first = dark_bell_measure(apply_bicnot(dark, c, d, basis));
                const State second = dark_bell_measure(apply_bicnot(rho, c, d, basis));
                dev_bicnot = std::max(dev_bicnot, trace_distance(first, second));
                // the permutation keeps the dark state Bell-diagonal
                dev_bicnot = std::max(dev_bicnot, trace_distance(apply_bicnot(dark, c, d, basis), second));
            }

        for (const Basis w : kAllBases)
            for (int pair = 0; pair < 2; ++pair)
                for (unsigned s = 0; s < 2; ++s) {
                    const auto proj = parity_projector<double>(w, parity_from_bit(s));
                    // measure then dark vs dark then measure, unnormalized branches
                    const Mat measured_first = dark_bell_measure<double>(sandwich<double>(rho.matrix(), 2, pair, proj), 2);
                    const Mat dark_first = sandwich<double>(dark.matrix(), 2, pair, proj);
                    dev_parity = std::max(dev_parity, trace_distance<double>(measured_first, dark_first));
                    dev_parity = std::max(dev_parity, std::abs(measured_first.trace().real() - dark_first.trace().real()));
                }

        dev_fidelity = std::max(dev_fidelity, std::abs(fidelity(dark) - fidelity(rho)));
    }
    return {finish("bicnot_dark_bell_ordering", trial_count, dev_bicnot),
            finish("collective_parity_commutes_with_dark_bell", trial_count, dev_parity),
            finish("dark_bell_preserves_fidelity", trial_count, dev_fidelity)};
}

std::vector<VerifyReport> verify_step4prime(std::size_t trial_count, std::uint64_t seed) {
    if (trial_count < 1) throw std::invalid_argument("trial_count must be at least 1");
    constexpr int kPairs = 3;
    constexpr int kKept = 0, kTrash = 1;
    const std::array<int, 1> keep{kKept};
    double dev_local = 0, dev_collective = 0;
    const Philox root(seed, 0x73746570ULL);
    for (std::size_t t = 0; t < trial_count; ++t) {
        Philox rng = root.substream(t);
        const State rho = random_state(kPairs, t, rng);
        const Mat before = partial_trace<double>(rho.matrix(), kPairs, keep);
        for (const Basis w : kAllBases) {
            Mat averaged_local = Mat::Zero(rho.dim(), rho.dim());
            for (unsigned a = 0; a < 2; ++a)
                for (unsigned b = 0; b < 2; ++b)
                    averaged_local += sandwich<double>(rho.matrix(), kPairs, kTrash,
                                                       local_projector<double>(LocalBasis::of(w), a, b));
            Mat averaged_collective = Mat::Zero(rho.dim(), rho.dim());
            for (unsigned s = 0; s < 2; ++s)
                averaged_collective +=
                    sandwich<double>(rho.matrix(), kPairs, kTrash, parity_projector<double>(w, parity_from_bit(s)));
            dev_local = std::max(dev_local, trace_distance<double>(before, partial_trace<double>(averaged_local, kPairs, keep)));
            dev_collective =
                std::max(dev_collective, trace_distance<double>(before, partial_trace<double>(averaged_collective, kPairs, keep)));
        }
    }
    return {finish("trash_local_measurement_keeps_reduced_state", trial_count, dev_local),
            finish("trash_collective_measurement_keeps_reduced_state", trial_count, dev_collective)};
}

}  // namespace epp
