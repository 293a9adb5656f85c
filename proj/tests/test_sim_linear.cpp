#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specstab/errors.hpp"
#include "specstab/operators.hpp"
#include "specstab/sim_linear.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace specstab;

namespace {

ChainModel scalar_chain(double m_value, double w_value = 0.0) {
    ChainModel model;
    model.n = 1;
    model.k = 1;
    model.P = Eigen::MatrixXd::Ones(1, 1);
    model.m = {Eigen::MatrixXd::Constant(1, 1, m_value)};
    model.w = {Eigen::VectorXd::Constant(1, w_value)};
    return model;
}

double fit_log_slope(const std::vector<double>& y, int lo, int hi) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int t = lo; t <= hi; ++t) {
        if (y[t] <= 1e-280) break;
        const double v = std::log(y[t]);
        sx += t;
        sy += v;
        sxx += static_cast<double>(t) * t;
        sxy += t * v;
        ++n;
    }
    return n >= 2 ? (n * sxy - sx * sy) / (n * sxx - sx * sx) : 0.0;
}

} // namespace

TEST_CASE("zero gain with noise off keeps the state fixed") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 0.0;
    cfg.T = 50;
    cfg.trials = 8;
    cfg.seed = 1;
    cfg.x0 = (Eigen::VectorXd(2) << 3.0, -4.0).finished();
    const TrajectoryStats stats = simulate_linear(sr2, cfg);
    for (double v : stats.m2) CHECK(v == doctest::Approx(25.0).epsilon(1e-14));
}

TEST_CASE("stable gain with unit noise converges to a plateau") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 0.05;
    cfg.T = 1500;
    cfg.trials = 800;
    cfg.seed = 7;
    cfg.noise.iid_covariance = Eigen::MatrixXd::Identity(2, 2);
    const TrajectoryStats stats = simulate_linear(sr2, cfg);
    CHECK(stats.classification == Classification::Converged);
    REQUIRE(stats.sigma2_hat.has_value());
    // geometric series bound: k / (1 - xi_Q) with xi_Q = 0.905
    CHECK(*stats.sigma2_hat > 14.0);
    CHECK(*stats.sigma2_hat < 30.0);
    CHECK_FALSE(stats.overflowed);
}

TEST_CASE("unstable gain diverges") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 1.2;  // second-moment radius 1.48
    cfg.T = 1200;
    cfg.trials = 100;
    cfg.seed = 3;
    cfg.noise.iid_covariance = Eigen::MatrixXd::Identity(2, 2);
    const TrajectoryStats stats = simulate_linear(sr2, cfg);
    CHECK(stats.classification == Classification::Diverged);
}

TEST_CASE("seed determinism and thread invariance") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 0.05;
    cfg.T = 300;
    cfg.trials = 200;
    cfg.seed = 99;
    cfg.noise.iid_covariance = Eigen::MatrixXd::Identity(2, 2);

    const TrajectoryStats a = simulate_linear(sr2, cfg);
    const TrajectoryStats b = simulate_linear(sr2, cfg);
    cfg.threads = 4;
    const TrajectoryStats c = simulate_linear(sr2, cfg);
    for (std::size_t t = 0; t < a.m2.size(); ++t) {
        CHECK(a.m2[t] == b.m2[t]);
        CHECK(a.m2[t] == c.m2[t]);
        CHECK(a.ci[t] == c.ci[t]);
    }

    cfg.threads = 1;
    cfg.seed = 100;
    const TrajectoryStats d = simulate_linear(sr2, cfg);
    CHECK(a.m2[100] != d.m2[100]);
}

TEST_CASE("noiseless decay matches twice the log radius") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 0.1;
    cfg.T = 600;
    cfg.trials = 512;
    cfg.seed = 11;
    cfg.x0 = (Eigen::VectorXd(2) << 1.0, 1.0).finished();
    const TrajectoryStats stats = simulate_linear(sr2, cfg);
    const double rate = fit_log_slope(stats.m2, 10, cfg.T);
    const double reference =
        2.0 * std::log(spectral_radius(build_first_moment_operator(sr2, 0.1)));
    CHECK(std::abs(rate - reference) <= 0.2 * std::abs(reference));
}

TEST_CASE("frozen single-state chain matches the closed-form second moment") {
    // X_{t+1} = rho X_t + zeta, rho = 1 - alpha c, zeta ~ N(0, s2):
    // E X_t^2 = rho^(2t) x0^2 + s2 (1 - rho^(2t)) / (1 - rho^2)
    const double c = 1.0, alpha = 0.3, s2 = 0.49, x0 = 2.0;
    const double rho = 1.0 - alpha * c;
    const ChainModel model = scalar_chain(c);
    SimConfig cfg;
    cfg.alpha = alpha;
    cfg.T = 200;
    cfg.trials = 20000;
    cfg.seed = 17;
    cfg.x0 = Eigen::VectorXd::Constant(1, x0);
    cfg.noise.iid_covariance = Eigen::MatrixXd::Constant(1, 1, s2);
    const TrajectoryStats stats = simulate_linear(model, cfg);
    for (int t : {1, 5, 20, 100, 200}) {
        const double r2t = std::pow(rho, 2 * t);
        const double expected = r2t * x0 * x0 + s2 * (1.0 - r2t) / (1.0 - rho * rho);
        CHECK(std::abs(stats.m2[t] - expected) <= 4.0 * stats.ci[t] + 1e-9);
    }
}

TEST_CASE("doubling trials shrinks confidence intervals by about sqrt(2)") {
    const ChainModel sr2 = build_shift_register(2);
    SimConfig cfg;
    cfg.alpha = 0.05;
    cfg.T = 500;
    cfg.trials = 2000;
    cfg.seed = 23;
    cfg.noise.iid_covariance = Eigen::MatrixXd::Identity(2, 2);
    const TrajectoryStats small = simulate_linear(sr2, cfg);
    cfg.trials = 4000;
    const TrajectoryStats big = simulate_linear(sr2, cfg);
    double ratio_sum = 0.0;
    int count = 0;
    for (int t = 3 * cfg.T / 4; t <= cfg.T; ++t) {
        ratio_sum += big.ci[t] / small.ci[t];
        ++count;
    }
    const double mean_ratio = ratio_sum / count;
    CHECK(mean_ratio >= 1.0 / std::sqrt(2.0) - 0.1);
    CHECK(mean_ratio <= 1.0 / std::sqrt(2.0) + 0.1);
}

TEST_CASE("backward coupling") {
    SUBCASE("deterministic scalar chain halves differences per depth") {
        // depth-n endpoint is sum_{j<n} 0.5^j, so consecutive differences
        // scale like 0.5^n and the squared gap slope is 2 log 0.5
        const ChainModel model = scalar_chain(1.0, 1.0);
        NoiseSpec noise;  // model disturbance only, no i.i.d. term
        const CouplingReport report =
            backward_couple(model, 0.5, {4, 8, 12, 16}, 5, 10, noise);
        CHECK(report.fitted_log_slope ==
              doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-6));
    }
    SUBCASE("equal depths couple exactly") {
        const ChainModel sr2 = build_shift_register(2);
        const CouplingReport report = backward_couple(sr2, 0.1, {16, 16}, 9, 50);
        CHECK(report.d2[0] == 0.0);
    }
    SUBCASE("shift register: geometric decay with negative slope") {
        const ChainModel sr2 = build_shift_register(2);
        const CouplingReport report =
            backward_couple(sr2, 0.1, {8, 16, 32, 64}, 13, 4000);
        CHECK(report.fitted_log_slope < 0.0);
        // within 35% of the reference product rate 2 log xi
        CHECK(std::abs(report.fitted_log_slope - report.reference_rate) <=
              0.35 * std::abs(report.reference_rate));
    }
    SUBCASE("unstable gain refuses") {
        const ChainModel sr2 = build_shift_register(2);
        CHECK_THROWS_AS(backward_couple(sr2, 1.5, {8, 16}, 1, 10), UnstableGain);
    }
}

TEST_CASE("stationarity convergence") {
    SUBCASE("zero offset stays zero") {
        const ChainModel sr2 = build_shift_register(2);
        const DecaySeries series = stationarity_convergence(
            sr2, 0.1, Eigen::VectorXd::Zero(2), 100, 50, 3);
        for (double v : series.mean_sq) CHECK(v == 0.0);
    }
    SUBCASE("deterministic scalar contraction decays exactly") {
        const ChainModel model = scalar_chain(1.0);
        const DecaySeries series = stationarity_convergence(
            model, 0.5, Eigen::VectorXd::Constant(1, 3.0), 200, 4, 1);
        CHECK(series.mean_sq[0] == doctest::Approx(9.0));
        CHECK(series.mean_sq[1] == doctest::Approx(9.0 * 0.25));
        CHECK(series.fitted_rate == doctest::Approx(std::log(0.25)).epsilon(1e-10));
    }
    SUBCASE("shift register rate within twenty percent of the spectral value") {
        const ChainModel sr2 = build_shift_register(2);
        const DecaySeries series = stationarity_convergence(
            sr2, 0.1, (Eigen::VectorXd(2) << 1.0, 1.0).finished(), 600, 2000, 21);
        CHECK(series.within_20pct);
    }
    SUBCASE("unstable gain refuses") {
        const ChainModel sr2 = build_shift_register(2);
        CHECK_THROWS_AS(stationarity_convergence(sr2, 1.5, Eigen::VectorXd::Ones(2),
                                                 100, 10, 1),
                        UnstableGain);
    }
}

TEST_CASE("psd factor reproduces the covariance") {
    Eigen::MatrixXd cov(2, 2);
    cov << 4.0, 1.0, 1.0, 2.0;
    const Eigen::MatrixXd L = psd_factor(cov);
    CHECK((L * L.transpose() - cov).cwiseAbs().maxCoeff() <= 1e-12);
    // rank-deficient covariance is accepted
    Eigen::MatrixXd rank1 = Eigen::MatrixXd::Zero(2, 2);
    rank1(0, 0) = 1.0;
    const Eigen::MatrixXd L1 = psd_factor(rank1);
    CHECK((L1 * L1.transpose() - rank1).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::MatrixXd indefinite(2, 2);
    indefinite << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(psd_factor(indefinite), ValidationError);
}
