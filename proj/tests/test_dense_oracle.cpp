#include "epp/dense_oracle.hpp"

#include <gtest/gtest.h>

#include <array>
#include <vector>

using namespace epp;
using namespace epp::dense;

namespace {

using Mat = Matrix<double>;

State product(std::initializer_list<BellLabel> labels) {
    const std::vector<BellLabel> v(labels);
    return State::bell_product(v);
}

State ket00() {
    Vector<double> psi = Vector<double>::Zero(4);
    psi[0] = 1;
    return State::pure(1, psi);
}

State werner(double fid) {
    const double rest = (1 - fid) / 3;
    const std::array<double, 4> w{fid, rest, rest, rest};
    return State::bell_diagonal(1, w);
}

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(DenseState, RejectsInvalidMatrices) {
    Mat m = Mat::Identity(4, 4);
    EXPECT_THROW(State(1, m), std::invalid_argument);  // trace 4
    m /= 4;
    EXPECT_NO_THROW(State(1, m));
    Mat nh = m;
    nh(0, 1) = 0.1;
    EXPECT_THROW(State(1, nh), std::invalid_argument);
    Mat neg = Mat::Zero(4, 4);
    neg(0, 0) = 1.5;
    neg(1, 1) = -0.5;
    EXPECT_THROW(State(1, neg), std::invalid_argument);
    EXPECT_THROW(State(4, Mat::Identity(256, 256) / 256.0), std::invalid_argument);
    EXPECT_THROW(State(2, m), std::invalid_argument);
}

TEST(DenseState, BellBasisIsUnitary) {
    for (int pairs = 1; pairs <= 3; ++pairs) {
        const Mat b = bell_basis<double>(pairs);
        EXPECT_LT(max_abs(b.adjoint() * b - Mat::Identity(b.rows(), b.cols())), 1e-14);
    }
}

TEST(DarkBellMeasure, Examples) {
    const State phi = product({kPhiPlus});
    EXPECT_LT(trace_distance(dark_bell_measure(phi), phi), 1e-14);

    const std::array<double, 4> half{0.5, 0, 0.5, 0};  // phi+ and phi- (codes 0, 2)
    EXPECT_LT(trace_distance(dark_bell_measure(ket00()), State::bell_diagonal(1, half)), 1e-14);
}

TEST(DarkBellMeasure, DiagonalMatchesProjectorSum) {
    Philox rng(11);
    const State rho = random_pure_state<double>(2, rng);
    const State dark = dark_bell_measure(rho);
    // independent route: explicit sum of Bell product projectors
    Mat expected = Mat::Zero(16, 16);
    for (const BellLabel a : kAllLabels)
        for (const BellLabel b : kAllLabels) {
            const std::array<BellLabel, 2> ab{a, b};
            const Mat proj = State::bell_product(ab).matrix();
            expected += proj * rho.matrix() * proj;
        }
    EXPECT_LT(max_abs(dark.matrix() - expected), 1e-14);
    const Mat in_bell = dark.in_bell_basis();
    EXPECT_LT(max_abs(in_bell - Mat(in_bell.diagonal().asDiagonal())), 1e-14);
}

TEST(ApplyBicnot, Examples) {
    EXPECT_LT(trace_distance(apply_bicnot(product({kPhiMinus, kPhiMinus}), 0, 1, CnotBasis::Z),
                             product({kPhiPlus, kPhiMinus})),
              1e-14);
    for (const CnotBasis basis : {CnotBasis::Z, CnotBasis::X})
        EXPECT_LT(trace_distance(apply_bicnot(product({kPhiPlus, kPhiPlus}), 0, 1, basis), product({kPhiPlus, kPhiPlus})),
                  1e-14);
}

TEST(ApplyBicnot, UnitaryAndIndexChecks) {
    for (const CnotBasis basis : {CnotBasis::Z, CnotBasis::X}) {
        const Mat u = bicnot_unitary<double>(3, 2, 0, basis);
        EXPECT_LT(max_abs(u.adjoint() * u - Mat::Identity(64, 64)), 1e-13);
    }
    const State s = product({kPhiPlus, kPhiPlus});
    EXPECT_THROW(apply_bicnot(s, 0, 2, CnotBasis::Z), std::out_of_range);
    EXPECT_THROW(apply_bicnot(s, 1, 1, CnotBasis::X), std::invalid_argument);
}

TEST(MeasureCollective, Examples) {
    EXPECT_NEAR(measure_collective(product({kPhiPlus}), 0, Basis::Z)[0].probability, 1.0, 1e-14);
    const auto psi = measure_collective(product({kPsiPlus}), 0, Basis::Z);
    EXPECT_NEAR(psi[1].probability, 1.0, 1e-14);
    EXPECT_EQ(psi[0].probability, 0.0);
    EXPECT_FALSE(psi[0].state.has_value());
    const auto xx = measure_collective(ket00(), 0, Basis::X);
    EXPECT_NEAR(xx[0].probability, 0.5, 1e-14);
    EXPECT_NEAR(xx[1].probability, 0.5, 1e-14);
    EXPECT_THROW(measure_collective(ket00(), 1, Basis::X), std::out_of_range);
}

TEST(MeasureLocal, Examples) {
    const auto z = measure_local(product({kPhiPlus}), 0, Basis::Z);
    EXPECT_NEAR(z[0].probability, 0.5, 1e-14);
    EXPECT_NEAR(z[3].probability, 0.5, 1e-14);
    EXPECT_NEAR(z[1].probability + z[2].probability, 0.0, 1e-14);
    const auto y = measure_local(product({kPsiMinus}), 0, Basis::Y);
    EXPECT_NEAR(y[0].probability + y[3].probability, 1.0, 1e-14);  // announced parity 0 only
}

TEST(MeasureLocal, RefinesCollectiveForRandomStates) {
    Philox rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const State rho = trial % 2 ? random_mixed_state<double>(2, rng) : random_pure_state<double>(2, rng);
        for (const Basis w : kAllBases)
            for (int pair = 0; pair < 2; ++pair) {
                const auto local = measure_local(rho, pair, w);
                const auto coll = measure_collective(rho, pair, w);
                double total = 0;
                for (unsigned s = 0; s < 2; ++s) {
                    const double p = local[0 * 2 + s].probability + local[1 * 2 + (s ^ 1)].probability;
                    EXPECT_NEAR(p, coll[s].probability, 1e-12);
                    total += coll[s].probability;
                }
                EXPECT_NEAR(total, 1.0, 1e-12);
                // projector identity behind the refinement
                EXPECT_LT(max_abs(parity_projector<double>(LocalBasis::of(w), 1) -
                                  parity_projector<double>(w, Parity::Odd)),
                          1e-14);
            }
    }
}

TEST(MeasureLocal, TiltedParityIsNotBellDiagonal) {
    const Matrix4<double> p = parity_projector<double>(LocalBasis::tilted(0.25 * M_PI), 0);
    const Matrix4<double> b = bell_vectors<double>();
    const Matrix4<double> in_bell = b.adjoint() * p * b;
    EXPECT_GT(max_abs(in_bell - Matrix4<double>(in_bell.diagonal().asDiagonal())), 0.1);
    // the Z and X endpoints reproduce the Pauli projectors
    EXPECT_LT(max_abs(parity_projector<double>(LocalBasis::tilted(0.0), 1) - parity_projector<double>(Basis::Z, Parity::Odd)),
              1e-14);
    EXPECT_LT(max_abs(parity_projector<double>(LocalBasis::tilted(M_PI / 2), 1) -
                      parity_projector<double>(Basis::X, Parity::Odd)),
              1e-14);
}

TEST(Fidelity, Examples) {
    EXPECT_NEAR(fidelity(product({kPhiPlus, kPhiPlus})), 1.0, 1e-14);
    EXPECT_NEAR(fidelity(product({kPhiMinus})), 0.0, 1e-14);
    EXPECT_NEAR(fidelity(werner(0.7)), 0.7, 1e-14);
}

TEST(PartialTrace, Examples) {
    Philox rng(3);
    const State rho = random_mixed_state<double>(2, rng);
    const std::array<int, 2> all{1, 0};
    EXPECT_LT(max_abs(partial_trace(rho, all).matrix() - rho.matrix()), 1e-15);

    const std::array<int, 1> first{0};
    EXPECT_LT(trace_distance(partial_trace(product({kPhiPlus, kPhiPlus}), first), product({kPhiPlus})), 1e-14);

    // (|phi+>|phi+> + |phi->|phi->)/sqrt2: pair 0 is an equal mixture of two Bell
    // states, and its Alice-Bob qubits are maximally entangled with pair 1.
    const Mat b = bell_basis<double>(2);
    const Vector<double> psi = (b.col(0) + b.col(2 * 4 + 2)) / std::sqrt(2.0);
    const std::array<double, 4> half{0.5, 0, 0.5, 0};
    EXPECT_LT(trace_distance(partial_trace(State::pure(2, psi), first), State::bell_diagonal(1, half)), 1e-14);

    // maximally entangled across pairs: Alice0-Alice1 and Bob0-Bob1 Bell pairs
    Vector<double> cross = Vector<double>::Zero(16);
    for (unsigned a = 0; a < 2; ++a)
        for (unsigned bb = 0; bb < 2; ++bb) cross[(((a << 1) | bb) << 2) | ((a << 1) | bb)] = 0.5;
    EXPECT_LT(trace_distance(partial_trace(State::pure(2, cross), first).matrix(), Mat(Mat::Identity(4, 4) / 4.0)), 1e-14);

    EXPECT_THROW(partial_trace(rho, std::span<const int>{}), std::invalid_argument);
    const std::array<int, 1> bad{2};
    EXPECT_THROW(partial_trace(rho, bad), std::out_of_range);
}

TEST(Channels, TraceAndPositivityPreserved) {
    Philox rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const State rho = random_mixed_state<double>(3, rng);
        const auto check = [](const Mat& m) {
            EXPECT_NEAR(m.trace().real(), 1.0, 1e-10);
            const Eigen::SelfAdjointEigenSolver<Mat> eig(m, Eigen::EigenvaluesOnly);
            EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-10);
        };
        check(dark_bell_measure(rho).matrix());
        check(apply_bicnot(rho, 0, 2, CnotBasis::X).matrix());
        Mat avg = Mat::Zero(64, 64);
        for (const auto& br : measure_local(rho, 1, Basis::Y))
            if (br.state) avg += br.probability * br.state->matrix();
        check(avg);
        // the public constructor accepts every result
        EXPECT_NO_THROW(State(3, dark_bell_measure(rho).matrix()));
    }
}

TEST(VerifyCommutation, AllClaimsHold) {
    const auto reports = verify_commutation(100, 1);
    ASSERT_EQ(reports.size(), 3U);
    for (const auto& r : reports) {
        EXPECT_TRUE(r.pass) << r.claim;
        EXPECT_LT(r.max_deviation, 1e-10) << r.claim;
        EXPECT_EQ(r.trials, 100U);
    }
}

TEST(VerifyCommutation, FidelityInvarianceWithOffDiagonalTerms) {
    // |00> has Bell off-diagonal terms between phi+ and phi-
    const State s = ket00();
    EXPECT_GT(std::abs(s.in_bell_basis()(0, 2)), 0.4);
    EXPECT_NEAR(fidelity(dark_bell_measure(s)), fidelity(s), 1e-15);
}

TEST(VerifyCommutation, BellDiagonalStateOrderingsIdentical) {
    std::array<double, 16> w{};
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = double(i + 1) / 136.0;
    const State d = State::bell_diagonal(2, w);
    for (const CnotBasis basis : {CnotBasis::Z, CnotBasis::X}) {
        const State a = dark_bell_measure(apply_bicnot(d, 0, 1, basis));
        const State b = apply_bicnot(dark_bell_measure(d), 0, 1, basis);
        EXPECT_LT(max_abs(a.matrix() - b.matrix()), 1e-14);
    }
}

TEST(VerifyStep4Prime, AllClaimsHold) {
    const auto reports = verify_step4prime(50, 9);
    ASSERT_EQ(reports.size(), 2U);
    for (const auto& r : reports) EXPECT_TRUE(r.pass) << r.claim << ' ' << r.max_deviation;
}

TEST(VerifyStep4Prime, ProductStateExact) {
    const std::array<int, 1> keep{0};
    const State s = product({kPhiMinus, kPsiPlus});
    Mat avg = Mat::Zero(16, 16);
    for (const auto& br : measure_local(s, 1, Basis::X))
        if (br.state) avg += br.probability * br.state->matrix();
    EXPECT_LT(trace_distance<double>(partial_trace<double>(avg, 2, keep), partial_trace(s, keep).matrix()), 1e-15);
}

TEST(Verify, RejectsZeroTrials) {
    EXPECT_THROW(verify_commutation(0, 1), std::invalid_argument);
    EXPECT_THROW(verify_step4prime(0, 1), std::invalid_argument);
}
