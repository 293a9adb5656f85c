#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specstab/errors.hpp"
#include "specstab/operators.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace specstab;

namespace {

ChainModel single_state(const Eigen::MatrixXd& m) {
    ChainModel model;
    model.n = 1;
    model.k = static_cast<int>(m.rows());
    model.P = Eigen::MatrixXd::Ones(1, 1);
    model.m = {m};
    model.w = {Eigen::VectorXd::Zero(model.k)};
    return model;
}

LiftedOperator wrap_matrix(const Eigen::MatrixXd& A) {
    return LiftedOperator{OperatorKind::FirstMoment, 0.0, 1,
                          static_cast<int>(A.rows()), static_cast<int>(A.rows()), A};
}

} // namespace

TEST_CASE("lifted action equals the direct conditional expectation") {
    // 100 random (chain, alpha, f) triples, both operator kinds
    int triples = 0;
    for (std::uint64_t seed = 1; triples < 100; ++seed) {
        const int n = 2 + static_cast<int>(seed % 4);
        const int k = 1 + static_cast<int>(seed % 3);
        const ChainModel model = testutil::make_random_chain(n, k, false, seed);
        Rng rng(seed, 99);
        const double alpha = 2.0 * rng.uniform01() - 0.5;

        // first moment: vector-valued f
        {
            const LiftedOperator op = build_first_moment_operator(model, alpha);
            Eigen::VectorXd f(n * k);
            for (int i = 0; i < n * k; ++i) f(i) = rng.gaussian();
            const Eigen::VectorXd lifted = op.A * f;
            for (int i = 0; i < n; ++i) {
                Eigen::VectorXd direct = Eigen::VectorXd::Zero(k);
                for (int j = 0; j < n; ++j)
                    direct += model.P(i, j) *
                              (Eigen::MatrixXd::Identity(k, k) - alpha * model.m[j])
                                  .transpose() *
                              f.segment(j * k, k);
                CHECK((lifted.segment(i * k, k) - direct).cwiseAbs().maxCoeff() <= 1e-12);
            }
            ++triples;
        }
        // second moment: matrix-valued f, column-major vectorization
        {
            const LiftedOperator op = build_second_moment_operator(model, alpha);
            std::vector<Eigen::MatrixXd> F;
            Eigen::VectorXd fvec(n * k * k);
            for (int j = 0; j < n; ++j) {
                Eigen::MatrixXd Fj(k, k);
                for (int r = 0; r < k; ++r)
                    for (int c = 0; c < k; ++c) Fj(r, c) = rng.gaussian();
                F.push_back(Fj);
                fvec.segment(j * k * k, k * k) =
                    Eigen::Map<const Eigen::VectorXd>(Fj.data(), k * k);
            }
            const Eigen::VectorXd lifted = op.A * fvec;
            for (int i = 0; i < n; ++i) {
                Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(k, k);
                for (int j = 0; j < n; ++j) {
                    const Eigen::MatrixXd B =
                        Eigen::MatrixXd::Identity(k, k) - alpha * model.m[j];
                    direct += model.P(i, j) * B.transpose() * F[j] * B;
                }
                const Eigen::VectorXd direct_vec =
                    Eigen::Map<const Eigen::VectorXd>(direct.data(), k * k);
                CHECK((lifted.segment(i * k * k, k * k) - direct_vec)
                          .cwiseAbs()
                          .maxCoeff() <= 1e-12);
            }
            ++triples;
        }
    }
}

TEST_CASE("single-state operators are the deterministic matrices") {
    const Eigen::MatrixXd m = (Eigen::MatrixXd(2, 2) << 2, 0, 0, 5).finished();
    const LiftedOperator op = build_first_moment_operator(single_state(m), 0.1);
    const Eigen::MatrixXd expected =
        (Eigen::MatrixXd::Identity(2, 2) - 0.1 * m).transpose();
    CHECK((op.A - expected).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(1, 1, 3.0);
    const LiftedOperator q = build_second_moment_operator(single_state(c), 0.1);
    CHECK(q.A(0, 0) == doctest::Approx(std::pow(1.0 - 0.3, 2)).epsilon(1e-15));
}

TEST_CASE("zero gain reproduces the transition structure with identity blocks") {
    const ChainModel model = testutil::make_random_chain(4, 2, false, 5);
    const LiftedOperator op = build_first_moment_operator(model, 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK((op.A.block(i * 2, j * 2, 2, 2) -
                   model.P(i, j) * Eigen::MatrixXd::Identity(2, 2))
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
    CHECK(spectral_radius(op) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(spectral_radius(build_second_moment_operator(model, 0.0)) ==
          doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("operators ignore the disturbance") {
    ChainModel a = build_shift_register(2);
    ChainModel b = a;
    for (auto& w : b.w) w = Eigen::VectorXd::Constant(2, 7.5);
    for (double alpha : {0.0, 0.1, 0.7}) {
        CHECK((build_first_moment_operator(a, alpha).A -
               build_first_moment_operator(b, alpha).A)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((build_second_moment_operator(a, alpha).A -
               build_second_moment_operator(b, alpha).A)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("capacity cap") {
    CHECK_THROWS_AS(build_first_moment_operator(build_shift_register(9), 0.1),
                    CapacityExceeded);
    CHECK_THROWS_AS(build_second_moment_operator(build_shift_register(7), 0.1),
                    CapacityExceeded);
    CHECK(build_second_moment_operator(build_shift_register(5), 0.1).dim == 800);
}

TEST_CASE("spectral radius basics") {
    CHECK(spectral_radius(wrap_matrix(Eigen::MatrixXd::Identity(3, 3))) ==
          doctest::Approx(1.0));
    Eigen::MatrixXd nil = Eigen::MatrixXd::Zero(3, 3);
    nil(0, 1) = 2.0;
    nil(1, 2) = -4.0;
    CHECK(spectral_radius(wrap_matrix(nil)) == doctest::Approx(0.0).epsilon(1e-12));
    const ChainModel sr2 = build_shift_register(2);
    CHECK(spectral_radius(build_first_moment_operator(sr2, 0.05)) ==
          doctest::Approx(0.95).epsilon(1e-9));
}

TEST_CASE("growth rate estimate is an independent oracle") {
    CHECK_THROWS_AS(growth_rate_estimate(wrap_matrix(Eigen::MatrixXd::Identity(2, 2)), 8),
                    OutOfRange);
    CHECK(growth_rate_estimate(
              wrap_matrix((Eigen::MatrixXd(2, 2) << 0.5, 0, 0, 0.2).finished()), 2048) ==
          doctest::Approx(0.5).epsilon(5e-3));
    Eigen::MatrixXd rot(2, 2);
    rot << 0, -1, 1, 0;
    CHECK(growth_rate_estimate(wrap_matrix(rot), 2048) == doctest::Approx(1.0).epsilon(5e-3));

    const ChainModel sr2 = build_shift_register(2);
    const LiftedOperator op = build_first_moment_operator(sr2, 0.05);
    CHECK(std::abs(growth_rate_estimate(op, 2048) - 0.95) <= 5e-3);
    CHECK(std::abs(growth_rate_estimate(op, 2048) - spectral_radius(op)) <= 5e-3);

    for (std::uint64_t seed : {11ull, 12ull}) {
        const ChainModel model = testutil::make_random_chain(3, 2, false, seed);
        for (double alpha : {0.0, 0.2}) {
            for (OperatorKind kind :
                 {OperatorKind::FirstMoment, OperatorKind::SecondMoment}) {
                const LiftedOperator o = build_operator(model, kind, alpha);
                CHECK(std::abs(growth_rate_estimate(o, 2048) - spectral_radius(o)) <=
                      5e-3);
            }
        }
    }
}

TEST_CASE("perron pair normalization and residuals") {
    for (std::uint64_t seed : {3ull, 4ull, 5ull}) {
        const ChainModel model = testutil::make_random_chain(4, 2, false, seed);
        for (double alpha : {0.05, 0.3}) {
            const LiftedOperator op = build_first_moment_operator(model, alpha);
            const EigenPair pair = perron_eigenpair(op);
            const double scale = op.A.cwiseAbs().rowwise().sum().maxCoeff();
            CHECK((op.A * pair.h - pair.lambda * pair.h).cwiseAbs().maxCoeff() <=
                  1e-8 * scale);
            CHECK((pair.mu.transpose() * op.A - pair.lambda * pair.mu.transpose())
                      .cwiseAbs()
                      .maxCoeff() <= 1e-8 * scale);
            const std::complex<double> ip = (pair.mu.transpose() * pair.h)(0, 0);
            CHECK(std::abs(ip - 1.0) <= 1e-10);
            CHECK(pair.h.cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("perron pair at zero gain is the constant/stationary structure") {
    const ChainModel model = testutil::make_random_chain(5, 2, false, 21);
    const LiftedOperator op = build_first_moment_operator(model, 0.0);
    const EigenPair pair = perron_eigenpair(op);
    CHECK(pair.is_real);
    CHECK(pair.lambda.real() == doctest::Approx(1.0).epsilon(1e-10));
    // h is a constant function of the state; mu is a pi-sliced measure
    const StationaryInfo info = stationary(model);
    const Eigen::VectorXcd h0 = pair.h.segment(0, 2);
    const Eigen::VectorXcd mu0 = pair.mu.segment(0, 2) / info.pi(0);
    for (int i = 1; i < 5; ++i) {
        CHECK((pair.h.segment(2 * i, 2) - h0).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((pair.mu.segment(2 * i, 2) / info.pi(i) - mu0).cwiseAbs().maxCoeff() <=
              1e-7);
    }
}

TEST_CASE("perron pair selects diagonal mode and flags complex pairs") {
    const Eigen::MatrixXd m = (Eigen::MatrixXd(2, 2) << 2, 0, 0, 5).finished();
    const EigenPair pair =
        perron_eigenpair(build_first_moment_operator(single_state(m), 0.1));
    CHECK(pair.is_real);
    CHECK(pair.lambda.real() == doctest::Approx(0.8));
    CHECK(std::abs(pair.h(0)) == doctest::Approx(1.0));
    CHECK(std::abs(pair.h(1)) == doctest::Approx(0.0).epsilon(1e-12));

    Eigen::MatrixXd skew(2, 2);
    skew << 0, -3, 3, 0;
    const EigenPair cpair =
        perron_eigenpair(build_first_moment_operator(single_state(skew), 0.1));
    CHECK_FALSE(cpair.is_real);
    CHECK(cpair.lambda.imag() > 0.0);

    const ChainModel sr2 = build_shift_register(2);
    const EigenPair srp = perron_eigenpair(build_first_moment_operator(sr2, 0.05));
    CHECK(srp.is_real);
    CHECK(srp.lambda.real() == doctest::Approx(0.95).epsilon(1e-10));
}

TEST_CASE("scan curves on the length-2 shift register") {
    const ChainModel sr2 = build_shift_register(2);
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(0.02 * i);

    const SpectralReport first = scan_curve(sr2, OperatorKind::FirstMoment, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
        CHECK(std::abs(first.points[i].xi - (1.0 - grid[i])) <= 1e-8);
    CHECK(first.breakpoints.empty());

    // the measured second-moment curve is 1 - 2a + 2a^2 (constant-gain
    // eigenfunction of the sandwich operator; exceeds (1-a)^2 by a^2)
    const SpectralReport second = scan_curve(sr2, OperatorKind::SecondMoment, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double a = grid[i];
        CHECK(std::abs(second.points[i].xi - (1.0 - 2.0 * a + 2.0 * a * a)) <= 1e-8);
    }

    const SpectralReport trivial = scan_curve(sr2, OperatorKind::FirstMoment, {0.0});
    CHECK(trivial.points.size() == 1);
    CHECK(trivial.points[0].xi == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(scan_curve(sr2, OperatorKind::FirstMoment, {0.2, 0.1}), OutOfRange);
}

TEST_CASE("branch segments of the second-moment curve fit quadratics") {
    const ChainModel sr2 = build_shift_register(2);
    std::vector<double> grid;
    for (int i = 0; i <= 300; ++i) grid.push_back(0.01 * i);
    const SpectralReport report = scan_curve(sr2, OperatorKind::SecondMoment, grid);
    const auto fits = fit_branch_segments(report, 2);
    CHECK(!fits.empty());
    for (const auto& fit : fits)
        if (fit.points >= 5) CHECK(fit.max_residual <= 1e-7);

    // the first-moment curve is 1 - a until another branch overtakes it
    const SpectralReport first = scan_curve(sr2, OperatorKind::FirstMoment, grid);
    REQUIRE(!first.breakpoints.empty());
    CHECK(first.breakpoints.front() > 0.4);
    const auto lfits = fit_branch_segments(first, 1);
    CHECK(lfits.front().max_residual <= 1e-7);
    CHECK(lfits.front().coeffs[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(lfits.front().coeffs[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("stability region") {
    SUBCASE("scalar contraction: radius below one on (0, 2)") {
        const Eigen::MatrixXd m = Eigen::MatrixXd::Ones(1, 1);
        const auto region = stability_region(single_state(m), 3.0, 0.01);
        REQUIRE(region.size() == 1);
        CHECK(region[0].lo == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(region[0].hi == doctest::Approx(2.0).epsilon(1e-5));
        const double xi_at_edge = spectral_radius(
            build_second_moment_operator(single_state(m), region[0].hi));
        CHECK(std::abs(xi_at_edge - 1.0) <= 1e-6);
    }
    SUBCASE("length-2 shift register boundary") {
        const ChainModel sr2 = build_shift_register(2);
        const auto region = stability_region(sr2, 3.0, 0.01);
        REQUIRE(region.size() == 1);
        const double xi_at_edge =
            spectral_radius(build_second_moment_operator(sr2, region[0].hi));
        CHECK(std::abs(xi_at_edge - 1.0) <= 1e-6);
        CHECK(region[0].hi == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("zero gain matrix gives an empty region") {
        const Eigen::MatrixXd m = Eigen::MatrixXd::Zero(1, 1);
        CHECK(stability_region(single_state(m), 2.0, 0.05).empty());
    }
}

TEST_CASE("multiplicative ergodic decay") {
    SUBCASE("single-state diagonal: decay at the eigenvalue ratio") {
        const Eigen::MatrixXd m = (Eigen::MatrixXd(2, 2) << 2, 0, 0, 5).finished();
        const LiftedOperator op = build_first_moment_operator(single_state(m), 0.1);
        const ErgodicDecayReport report = multiplicative_ergodic_check(op, 60);
        CHECK(report.lambda == doctest::Approx(0.8));
        CHECK(report.group_multiplicity == 1);
        // ratio 0.5/0.8, so log slope log(0.625)
        CHECK(report.fitted_slope == doctest::Approx(std::log(0.5 / 0.8)).epsilon(0.05));
    }
    SUBCASE("length-2 shift register at 0.1: semisimple dominant pair") {
        const ChainModel sr2 = build_shift_register(2);
        const LiftedOperator op = build_first_moment_operator(sr2, 0.1);
        const ErgodicDecayReport report = multiplicative_ergodic_check(op, 200);
        CHECK(report.lambda == doctest::Approx(0.9).epsilon(1e-10));
        CHECK(report.group_multiplicity == 2);
        CHECK(report.final_residual <= 1e-10);
        CHECK(report.fitted_slope < 0.0);
    }
    SUBCASE("zero gain: limit is the rank-k constant projector") {
        const ChainModel model = testutil::make_random_chain(3, 2, false, 8);
        const LiftedOperator op = build_first_moment_operator(model, 0.0);
        const ErgodicDecayReport report = multiplicative_ergodic_check(op, 200);
        CHECK(report.group_multiplicity == 2);
        CHECK(report.final_residual <= 1e-10);
        // independent check against sum_i e^i (x) pi^i
        const StationaryInfo info = stationary(model);
        Eigen::MatrixXd projector = Eigen::MatrixXd::Zero(6, 6);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                projector.block(2 * i, 2 * j, 2, 2) =
                    info.pi(j) * Eigen::MatrixXd::Identity(2, 2);
        Eigen::MatrixXd power = Eigen::MatrixXd::Identity(6, 6);
        for (int t = 0; t < 200; ++t) power = op.A * power;
        CHECK((power - projector).cwiseAbs().rowwise().sum().maxCoeff() <= 1e-10);
    }
    SUBCASE("complex dominant pair refuses") {
        Eigen::MatrixXd skew(2, 2);
        skew << 0, -3, 3, 0;
        CHECK_THROWS_AS(multiplicative_ergodic_check(
                            build_first_moment_operator(single_state(skew), 0.1), 50),
                        NotDominant);
    }
    SUBCASE("defective dominant eigenvalue refuses") {
        Eigen::MatrixXd jordan(2, 2);
        jordan << 1, 1, 0, 1;
        CHECK_THROWS_AS(multiplicative_ergodic_check(wrap_matrix(jordan), 50), NotDominant);
    }
}
