#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epp/bell.hpp"
#include "epp/random.hpp"

namespace epp {

/// Exact density-matrix model of up to three Bell pairs.
///
/// Qubit layout: pair p is a 4-dimensional factor with index 2*alice + bob,
/// pair 0 the most significant. The Bell basis column for a label list is
/// sum_p code(label_p) * 4^(pairs-1-p), so Bell-basis and computational
/// indices share the same digit layout.
namespace dense {

inline constexpr int kMaxPairs = 3;

template <typename Scalar>
using Complex = std::complex<Scalar>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Complex<Scalar>, 4, 4>;

constexpr Eigen::Index pair_dim(int pairs) { return Eigen::Index{1} << (2 * pairs); }

template <typename Scalar>
struct Tolerances {
    static constexpr Scalar hermitian = Scalar(1e-12);
    static constexpr Scalar trace = Scalar(1e-12);
    static constexpr Scalar eigenvalue = Scalar(-1e-10);
    static constexpr Scalar identity = Scalar(1e-10);
    /// Branches below this probability carry no post-measurement state.
    static constexpr Scalar zero_branch = Scalar(1e-14);
};

/// Columns are phi+, psi+, phi-, psi- (label code order).
template <typename Scalar>
Matrix4<Scalar> bell_vectors() {
    const Scalar h = Scalar(1) / std::sqrt(Scalar(2));
    Matrix4<Scalar> b = Matrix4<Scalar>::Zero();
    b(0, 0) = h, b(3, 0) = h;   // (|00> + |11>)/sqrt2
    b(1, 1) = h, b(2, 1) = h;   // (|01> + |10>)/sqrt2
    b(0, 2) = h, b(3, 2) = -h;  // (|00> - |11>)/sqrt2
    b(1, 3) = h, b(2, 3) = -h;  // (|01> - |10>)/sqrt2
    return b;
}

template <typename Scalar>
Matrix<Scalar> kron_power(const Matrix4<Scalar>& op, int pairs) {
    Matrix<Scalar> out = Matrix<Scalar>::Identity(1, 1);
    for (int p = 0; p < pairs; ++p) {
        Matrix<Scalar> next = Eigen::kroneckerProduct(out, op).eval();
        out = std::move(next);
    }
    return out;
}

/// Unitary whose columns are the product Bell basis.
template <typename Scalar>
Matrix<Scalar> bell_basis(int pairs) {
    return kron_power(bell_vectors<Scalar>(), pairs);
}

/// Embeds a single-pair operator at position `pair`.
template <typename Scalar>
Matrix<Scalar> on_pair(int pairs, int pair, const Matrix4<Scalar>& op) {
    const Matrix<Scalar> left = Matrix<Scalar>::Identity(pair_dim(pair), pair_dim(pair));
    const Matrix<Scalar> right = Matrix<Scalar>::Identity(pair_dim(pairs - pair - 1), pair_dim(pairs - pair - 1));
    Matrix<Scalar> lo = Eigen::kroneckerProduct(left, op).eval();
    return Eigen::kroneckerProduct(lo, right).eval();
}

template <typename Scalar>
Matrix4<Scalar> bell_projector(BellLabel label) {
    const auto b = bell_vectors<Scalar>();
    return b.col(label.code()) * b.col(label.code()).adjoint();
}

template <typename Scalar>
class DenseState {
public:
    using MatrixType = Matrix<Scalar>;

    /// Validates Hermiticity, unit trace and positivity; throws std::invalid_argument.
    DenseState(int num_pairs, MatrixType rho) : pairs_(num_pairs), rho_(std::move(rho)) {
        check_shape();
        const Scalar herm = (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff();
        if (herm > Tolerances<Scalar>::hermitian) throw std::invalid_argument("density matrix is not Hermitian");
        if (std::abs(rho_.trace() - Complex<Scalar>(1)) > Tolerances<Scalar>::trace)
            throw std::invalid_argument("density matrix trace differs from 1");
        const Eigen::SelfAdjointEigenSolver<MatrixType> eig(rho_, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() < Tolerances<Scalar>::eigenvalue)
            throw std::invalid_argument("density matrix is not positive semidefinite");
    }

    /// For results of trace- and positivity-preserving maps applied to a
    /// valid state; only the shape is checked.
    static DenseState trusted(int num_pairs, MatrixType rho) { return DenseState(num_pairs, std::move(rho), Trusted{}); }

    static DenseState pure(int num_pairs, const Vector<Scalar>& psi) {
        const Vector<Scalar> unit = psi / psi.norm();
        return DenseState(num_pairs, unit * unit.adjoint(), Trusted{});
    }

    static DenseState bell_product(std::span<const BellLabel> labels) {
        const int pairs = static_cast<int>(labels.size());
        const auto b = bell_vectors<Scalar>();
        Vector<Scalar> psi = Vector<Scalar>::Ones(1);
        for (const BellLabel l : labels) {
            Vector<Scalar> next = Eigen::kroneckerProduct(psi, b.col(l.code())).eval();
            psi = std::move(next);
        }
        return pure(pairs, psi);
    }

    /// Bell-diagonal state with the given weights over product labels
    /// (index = Bell-basis column).
    static DenseState bell_diagonal(int num_pairs, std::span<const Scalar> weights) {
        const auto dim = pair_dim(num_pairs);
        if (static_cast<Eigen::Index>(weights.size()) != dim) throw std::invalid_argument("weight count mismatch");
        Vector<Scalar> w(dim);
        for (Eigen::Index i = 0; i < dim; ++i) w[i] = weights[static_cast<std::size_t>(i)];
        const MatrixType b = bell_basis<Scalar>(num_pairs);
        return DenseState(num_pairs, b * w.asDiagonal() * b.adjoint());
    }

    [[nodiscard]] int num_pairs() const { return pairs_; }
    [[nodiscard]] Eigen::Index dim() const { return rho_.rows(); }
    [[nodiscard]] const MatrixType& matrix() const { return rho_; }

    /// Density matrix expressed in the product Bell basis.
    [[nodiscard]] MatrixType in_bell_basis() const {
        const MatrixType b = bell_basis<Scalar>(pairs_);
        return b.adjoint() * rho_ * b;
    }

private:
    struct Trusted {};
    DenseState(int num_pairs, MatrixType rho, Trusted) : pairs_(num_pairs), rho_(std::move(rho)) { check_shape(); }

    void check_shape() const {
        if (pairs_ < 1 || pairs_ > kMaxPairs) throw std::invalid_argument("dense states hold 1 to 3 pairs");
        if (rho_.rows() != pair_dim(pairs_) || rho_.cols() != pair_dim(pairs_))
            throw std::invalid_argument("density matrix dimension does not match pair count");
    }

    int pairs_;
    MatrixType rho_;
};

using State = DenseState<double>;

/// A single-qubit measurement basis used by both parties: a Pauli basis or
/// a basis tilted by `angle` (radians) from Z toward X.
struct LocalBasis {
    enum class Kind : std::uint8_t { Pauli, Tilted };
    Kind kind = Kind::Pauli;
    Basis pauli = Basis::Z;
    double angle = 0.0;

    static LocalBasis of(Basis b) { return {Kind::Pauli, b, 0.0}; }
    static LocalBasis tilted(double radians) { return {Kind::Tilted, Basis::Z, radians}; }

    friend bool operator==(const LocalBasis&, const LocalBasis&) = default;
};

/// Eigenvectors (outcome 0, outcome 1) of the single-qubit basis as columns.
template <typename Scalar>
Eigen::Matrix<Complex<Scalar>, 2, 2> qubit_basis(const LocalBasis& basis) {
    using C = Complex<Scalar>;
    const Scalar h = Scalar(1) / std::sqrt(Scalar(2));
    Eigen::Matrix<C, 2, 2> v;
    if (basis.kind == LocalBasis::Kind::Tilted) {
        const Scalar c = std::cos(Scalar(basis.angle) / 2), s = std::sin(Scalar(basis.angle) / 2);
        v << C(c), C(-s), C(s), C(c);
        return v;
    }
    switch (basis.pauli) {
        case Basis::Z: v << C(1), C(0), C(0), C(1); break;
        case Basis::X: v << C(h), C(h), C(h), C(-h); break;
        case Basis::Y: v << C(h), C(h), C(0, h), C(0, -h); break;
    }
    return v;
}

/// Projector for announced bits (alice, bob). Bob's Y outcome is relabeled
/// (raw bit flipped) before announcement.
template <typename Scalar>
Matrix4<Scalar> local_projector(const LocalBasis& basis, unsigned alice, unsigned bob) {
    const auto v = qubit_basis<Scalar>(basis);
    const bool relabel = basis.kind == LocalBasis::Kind::Pauli && basis.pauli == Basis::Y;
    const unsigned bob_raw = relabel ? (bob ^ 1U) : bob;
    const Eigen::Matrix<Complex<Scalar>, 2, 2> pa = v.col(alice) * v.col(alice).adjoint();
    const Eigen::Matrix<Complex<Scalar>, 2, 2> pb = v.col(bob_raw) * v.col(bob_raw).adjoint();
    return Eigen::kroneckerProduct(pa, pb).eval();
}

/// Coarse-grained parity projector: sum of local projectors with alice ^ bob == s.
template <typename Scalar>
Matrix4<Scalar> parity_projector(const LocalBasis& basis, unsigned s) {
    return local_projector<Scalar>(basis, 0, s) + local_projector<Scalar>(basis, 1, s ^ 1U);
}

/// Bell-subspace projector for parity s in a Pauli basis.
template <typename Scalar>
Matrix4<Scalar> parity_projector(Basis basis, Parity s) {
    Matrix4<Scalar> p = Matrix4<Scalar>::Zero();
    for (const BellLabel l : kAllLabels)
        if (parity(l, basis) == s) p += bell_projector<Scalar>(l);
    return p;
}

template <typename Scalar>
Matrix4<Scalar> hadamard_pair() {
    using C = Complex<Scalar>;
    const Scalar h = Scalar(1) / std::sqrt(Scalar(2));
    Eigen::Matrix<C, 2, 2> had;
    had << C(h), C(h), C(h), C(-h);
    return Eigen::kroneckerProduct(had, had).eval();
}

/// Literal two-sided CNOT: Alice's qubit of `control` drives Alice's qubit of
/// `destination`, same for Bob. The X-basis variant is conjugated by
/// Hadamards on all four qubits.
template <typename Scalar>
Matrix<Scalar> bicnot_unitary(int pairs, int control, int destination, CnotBasis basis) {
    if (control < 0 || destination < 0 || control >= pairs || destination >= pairs)
        throw std::out_of_range("bi-CNOT pair index out of range");
    if (control == destination) throw std::invalid_argument("bi-CNOT control and destination must differ");
    const auto dim = pair_dim(pairs);
    Matrix<Scalar> u = Matrix<Scalar>::Zero(dim, dim);
    const int cshift = 2 * (pairs - 1 - control);
    const int dshift = 2 * (pairs - 1 - destination);
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        const auto c = (idx >> cshift) & 3;  // (alice, bob) bits of control
        const Eigen::Index out = idx ^ (c << dshift);
        u(out, idx) = Complex<Scalar>(1);
    }
    if (basis == CnotBasis::X) {
        const Matrix<Scalar> h = on_pair<Scalar>(pairs, control, hadamard_pair<Scalar>()) *
                                 on_pair<Scalar>(pairs, destination, hadamard_pair<Scalar>());
        u = h * u * h;
    }
    return u;
}

template <typename Scalar>
DenseState<Scalar> apply_bicnot(const DenseState<Scalar>& state, int control, int destination, CnotBasis basis) {
    const auto u = bicnot_unitary<Scalar>(state.num_pairs(), control, destination, basis);
    return DenseState<Scalar>::trusted(state.num_pairs(), u * state.matrix() * u.adjoint());
}

/// Unread Bell measurement on every pair: keeps only the Bell-diagonal part.
template <typename Scalar>
Matrix<Scalar> dark_bell_measure(const Matrix<Scalar>& rho, int pairs) {
    const Matrix<Scalar> b = bell_basis<Scalar>(pairs);
    const Vector<Scalar> diag = (b.adjoint() * rho * b).diagonal();
    return b * diag.asDiagonal() * b.adjoint();
}

template <typename Scalar>
DenseState<Scalar> dark_bell_measure(const DenseState<Scalar>& state) {
    return DenseState<Scalar>::trusted(state.num_pairs(), dark_bell_measure<Scalar>(state.matrix(), state.num_pairs()));
}

/// P rho P^dagger with P acting on one pair; the result is unnormalized.
template <typename Scalar>
Matrix<Scalar> sandwich(const Matrix<Scalar>& rho, int pairs, int pair, const Matrix4<Scalar>& op) {
    const Matrix<Scalar> full = on_pair<Scalar>(pairs, pair, op);
    return full * rho * full.adjoint();
}

template <typename Outcome, typename Scalar>
struct Branch {
    Outcome outcome;
    Scalar probability;
    /// Empty when the branch has (numerically) zero probability.
    std::optional<DenseState<Scalar>> state;
};

namespace detail {

inline void require_pair(int pairs, int pair) {
    if (pair < 0 || pair >= pairs) throw std::out_of_range("pair index out of range");
}

template <typename Outcome, typename Scalar>
Branch<Outcome, Scalar> make_branch(Outcome outcome, const Matrix<Scalar>& unnormalized, int pairs) {
    const Scalar p = std::max(Scalar(0), unnormalized.trace().real());
    if (p <= Tolerances<Scalar>::zero_branch) return {outcome, Scalar(0), std::nullopt};
    return {outcome, p, DenseState<Scalar>::trusted(pairs, unnormalized / p)};
}

}  // namespace detail

/// Two-outcome parity measurement WW onto the parity-0 / parity-1 Bell subspaces.
template <typename Scalar>
std::array<Branch<Parity, Scalar>, 2> measure_collective(const DenseState<Scalar>& state, int pair, Basis basis) {
    detail::require_pair(state.num_pairs(), pair);
    std::array<Branch<Parity, Scalar>, 2> out;
    for (unsigned s = 0; s < 2; ++s) {
        const auto proj = parity_projector<Scalar>(basis, parity_from_bit(s));
        out[s] = detail::make_branch(parity_from_bit(s), sandwich<Scalar>(state.matrix(), state.num_pairs(), pair, proj),
                                     state.num_pairs());
    }
    return out;
}

using LocalOutcome = std::pair<unsigned, unsigned>;

/// Four-outcome product measurement W (x) W; outcomes are announced bits
/// (alice, bob), indexed 2*alice + bob.
template <typename Scalar>
std::array<Branch<LocalOutcome, Scalar>, 4> measure_local(const DenseState<Scalar>& state, int pair,
                                                          const LocalBasis& basis) {
    detail::require_pair(state.num_pairs(), pair);
    std::array<Branch<LocalOutcome, Scalar>, 4> out;
    for (unsigned a = 0; a < 2; ++a)
        for (unsigned b = 0; b < 2; ++b) {
            const auto proj = local_projector<Scalar>(basis, a, b);
            out[2 * a + b] = detail::make_branch(LocalOutcome{a, b},
                                                 sandwich<Scalar>(state.matrix(), state.num_pairs(), pair, proj),
                                                 state.num_pairs());
        }
    return out;
}

template <typename Scalar>
std::array<Branch<LocalOutcome, Scalar>, 4> measure_local(const DenseState<Scalar>& state, int pair, Basis basis) {
    return measure_local(state, pair, LocalBasis::of(basis));
}

/// <Phi|rho|Phi> with |Phi> = |phi+>^pairs, for an unnormalized matrix.
template <typename Scalar>
Scalar phi_plus_overlap(const Matrix<Scalar>& rho, int pairs) {
    const Matrix4<Scalar> b = bell_vectors<Scalar>();
    Vector<Scalar> phi = Vector<Scalar>::Ones(1);
    for (int p = 0; p < pairs; ++p) {
        Vector<Scalar> next = Eigen::kroneckerProduct(phi, b.col(0)).eval();
        phi = std::move(next);
    }
    return (phi.adjoint() * rho * phi)(0, 0).real();
}

template <typename Scalar>
Scalar fidelity(const DenseState<Scalar>& state) {
    return phi_plus_overlap<Scalar>(state.matrix(), state.num_pairs());
}

/// Partial trace keeping `keep` (any order; kept pairs appear in ascending
/// order). Works on unnormalized matrices.
template <typename Scalar>
Matrix<Scalar> partial_trace(const Matrix<Scalar>& rho, int pairs, std::span<const int> keep) {
    if (keep.empty()) throw std::invalid_argument("partial trace must keep at least one pair");
    std::vector<int> kept(keep.begin(), keep.end());
    std::sort(kept.begin(), kept.end());
    if (std::adjacent_find(kept.begin(), kept.end()) != kept.end())
        throw std::invalid_argument("duplicate pair in keep set");
    detail::require_pair(pairs, kept.front());
    detail::require_pair(pairs, kept.back());
    std::vector<int> traced;
    for (int p = 0; p < pairs; ++p)
        if (!std::binary_search(kept.begin(), kept.end(), p)) traced.push_back(p);
    const int nk = static_cast<int>(kept.size());
    const int nt = static_cast<int>(traced.size());
    auto compose = [&](Eigen::Index k, Eigen::Index t) {
        Eigen::Index idx = 0;
        for (int i = 0; i < nk; ++i) idx |= ((k >> (2 * (nk - 1 - i))) & 3) << (2 * (pairs - 1 - kept[i]));
        for (int i = 0; i < nt; ++i) idx |= ((t >> (2 * (nt - 1 - i))) & 3) << (2 * (pairs - 1 - traced[i]));
        return idx;
    };
    const auto kd = pair_dim(nk), td = pair_dim(nt);
    Matrix<Scalar> out = Matrix<Scalar>::Zero(kd, kd);
    for (Eigen::Index r = 0; r < kd; ++r)
        for (Eigen::Index c = 0; c < kd; ++c)
            for (Eigen::Index t = 0; t < td; ++t) out(r, c) += rho(compose(r, t), compose(c, t));
    return out;
}

template <typename Scalar>
DenseState<Scalar> partial_trace(const DenseState<Scalar>& state, std::span<const int> keep) {
    auto m = partial_trace<Scalar>(state.matrix(), state.num_pairs(), keep);
    return DenseState<Scalar>::trusted(static_cast<int>(keep.size()), std::move(m));
}

/// Half the trace norm of a - b (Hermitian inputs).
template <typename Scalar>
Scalar trace_distance(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    const Matrix<Scalar> d = a - b;
    const Matrix<Scalar> h = (d + d.adjoint()) / Scalar(2);
    const Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(h, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().sum() / Scalar(2);
}

template <typename Scalar>
Scalar trace_distance(const DenseState<Scalar>& a, const DenseState<Scalar>& b) {
    return trace_distance<Scalar>(a.matrix(), b.matrix());
}

/// Pure state with i.i.d. standard complex Gaussian amplitudes.
template <typename Scalar>
DenseState<Scalar> random_pure_state(int pairs, Philox& rng) {
    std::normal_distribution<Scalar> normal;
    Vector<Scalar> psi(pair_dim(pairs));
    for (auto& z : psi) z = Complex<Scalar>(normal(rng), normal(rng));
    return DenseState<Scalar>::pure(pairs, psi);
}

/// Mixed state obtained by tracing an auxiliary pair out of a random pure
/// state on pairs + 1 pairs.
template <typename Scalar>
DenseState<Scalar> random_mixed_state(int pairs, Philox& rng) {
    std::normal_distribution<Scalar> normal;
    Matrix<Scalar> g(pair_dim(pairs), 4);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = Complex<Scalar>(normal(rng), normal(rng));
    Matrix<Scalar> rho = g * g.adjoint();
    rho /= rho.trace().real();
    return DenseState<Scalar>::trusted(pairs, std::move(rho));
}

}  // namespace dense

/// Result of one numeric identity check.
struct VerifyReport {
    std::string claim;
    std::size_t trials = 0;
    double max_deviation = 0.0;
    bool pass = false;
};

/// Random 2-pair states: (a) bi-CNOT / dark Bell ordering, (b) collective
/// parity / dark Bell commutation, (c) dark Bell fidelity invariance.
std::vector<VerifyReport> verify_commutation(std::size_t trial_count, std::uint64_t seed);

/// Random 3-pair states (kept, trash, environment): the kept reduced state
/// is unchanged by outcome-averaged local (and collective) measurement of
/// the trash pair, in every basis.
std::vector<VerifyReport> verify_step4prime(std::size_t trial_count, std::uint64_t seed);

}  // namespace epp
