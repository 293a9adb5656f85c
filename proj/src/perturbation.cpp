#include "specstab/perturbation.hpp"

#include "specstab/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace specstab {

namespace {

// Centered gain function stacked as an n x k^2 matrix (row i = vec(m_i - Mbar)).
Eigen::MatrixXd centered_gain_rows(const ChainModel& model, const StationaryInfo& info) {
    const int n = model.n;
    const int k = model.k;
    Eigen::MatrixXd G(n, k * k);
    for (int i = 0; i < n; ++i) {
        const Eigen::MatrixXd mt = model.m[i] - info.Mbar;
        G.row(i) = Eigen::Map<const Eigen::VectorXd>(mt.data(), k * k).transpose();
    }
    return G;
}

Eigen::MatrixXd unstack_row(const Eigen::MatrixXd& rows, int i, int k) {
    const Eigen::VectorXd r = rows.row(i);
    return Eigen::Map<const Eigen::MatrixXd>(r.data(), k, k);
}

} // namespace

MeanGainEigen analyze_mean_gain(const StationaryInfo& info) {
    const int k = static_cast<int>(info.Mbar.rows());
    const double scale = 1.0 + info.Mbar.cwiseAbs().maxCoeff();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(info.Mbar, /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success)
        throw ConvergenceFailure("mean-gain eigensolve did not converge");

    MeanGainEigen out;
    out.real = solver.eigenvalues().imag().cwiseAbs().maxCoeff() <= 1e-10 * scale;
    if (!out.real) return out;

    Eigen::VectorXd vals = solver.eigenvalues().real();
    Eigen::VectorXd sorted = vals;
    std::sort(sorted.data(), sorted.data() + k);
    out.eigenvalues = sorted;
    out.distinct = true;
    for (int i = 0; i + 1 < k; ++i)
        if (sorted(i + 1) - sorted(i) <= 1e-8 * scale) out.distinct = false;

    int imin = 0;
    vals.minCoeff(&imin);
    out.lambda_min = vals(imin);
    Eigen::VectorXd r0 = solver.eigenvectors().col(imin).real();
    r0.normalize();
    Eigen::Index ipk = 0;
    r0.cwiseAbs().maxCoeff(&ipk);
    if (r0(ipk) < 0.0) r0 = -r0;
    out.r0 = r0;

    Eigen::EigenSolver<Eigen::MatrixXd> lsolver(info.Mbar.transpose(), true);
    if (lsolver.info() != Eigen::Success)
        throw ConvergenceFailure("mean-gain left eigensolve did not converge");
    int jmin = 0;
    double best = std::numeric_limits<double>::max();
    for (int j = 0; j < k; ++j) {
        const double d = std::abs(lsolver.eigenvalues()(j) -
                                  std::complex<double>(out.lambda_min, 0.0));
        if (d < best) {
            best = d;
            jmin = j;
        }
    }
    Eigen::VectorXd v0 = lsolver.eigenvectors().col(jmin).real();
    const double ip = v0.dot(r0);
    if (std::abs(ip) < 1e-12)
        throw HypothesisViolated("mean gain matrix: minimal eigenvalue is defective");
    out.v0 = v0 / ip;
    return out;
}

double radius_slope_at_zero(const StationaryInfo& info) {
    const MeanGainEigen eig = analyze_mean_gain(info);
    if (!eig.real)
        throw HypothesisViolated("mean gain matrix has non-real eigenvalues");
    return -eig.lambda_min;
}

double second_moment_slope_at_zero(const StationaryInfo& info) {
    return 2.0 * radius_slope_at_zero(info);
}

double radius_curvature_at_zero(const ChainModel& model, const StationaryInfo& info) {
    const MeanGainEigen eig = analyze_mean_gain(info);
    if (!eig.real)
        throw HypothesisViolated("mean gain matrix has non-real eigenvalues");
    if (!eig.distinct)
        throw HypothesisViolated("mean gain matrix has repeated eigenvalues");

    // sum_{l>=0} E_pi[(M_{l+1} - Mbar)(M_0 - Mbar)], with the inner sum
    // S(i) = sum_{l>=0} E_i[m~(Phi_{l+1})] evaluated as P Z m~ (the series
    // converges geometrically; Z sums the centered expectations exactly).
    const int n = model.n;
    const int k = model.k;
    const Eigen::MatrixXd G = centered_gain_rows(model, info);
    const Eigen::MatrixXd S = model.P * (info.Z * G);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i)
        acc += info.pi(i) * unstack_row(S, i, k) * (model.m[i] - info.Mbar);
    return 2.0 * eig.v0.dot(acc * eig.r0);
}

CltCovariance clt_covariance(const ChainModel& model, const StationaryInfo& info,
                             const Eigen::VectorXd& v) {
    if (v.size() != model.k) throw DimensionMismatch("clt_covariance: v must have length k");
    if (v.norm() == 0.0) throw OutOfRange("clt_covariance: v must be nonzero");
    const int n = model.n;
    const int k = model.k;
    Eigen::MatrixXd F(n, k);  // row i = (m_i - Mbar) v
    for (int i = 0; i < n; ++i) F.row(i) = ((model.m[i] - info.Mbar) * v).transpose();
    const Eigen::MatrixXd Gtail = model.P * (info.Z * F);  // row i = sum_{l>=1} E_i[F_l]

    CltCovariance out;
    out.Sigma = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) {
        out.Sigma += info.pi(i) * F.row(i).transpose() * F.row(i);
        C += info.pi(i) * F.row(i).transpose() * Gtail.row(i);
    }
    out.Gamma = out.Sigma + C + C.transpose();
    return out;
}

namespace {

struct BranchValue {
    double value;
    Eigen::VectorXcd vec;
    bool is_real;
};

// Dominant eigenpair at gain a (maximal modulus).
BranchValue dominant_at(const ChainModel& model, OperatorKind kind, double a) {
    const LiftedOperator op = build_operator(model, kind, a);
    const EigenPair pair = perron_eigenpair(op);
    return {pair.lambda.real(), pair.h, pair.is_real};
}

// Branch value at gain a continued from a reference eigenvector (overlap
// matching), so central differences straddle alpha = 0 on one branch.
BranchValue continued_at(const ChainModel& model, OperatorKind kind, double a,
                         const Eigen::VectorXcd& ref) {
    const LiftedOperator op = build_operator(model, kind, a);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(op.A, true);
    if (solver.info() != Eigen::Success)
        throw ConvergenceFailure("branch continuation eigensolve failed");
    int best = 0;
    double best_overlap = -1.0;
    for (int i = 0; i < solver.eigenvalues().size(); ++i) {
        const Eigen::VectorXcd vi = solver.eigenvectors().col(i);
        const double overlap = std::abs(vi.dot(ref)) / (vi.norm() * ref.norm());
        if (overlap > best_overlap) {
            best_overlap = overlap;
            best = i;
        }
    }
    const std::complex<double> lam = solver.eigenvalues()(best);
    const double scale = 1.0 + op.A.cwiseAbs().maxCoeff();
    return {lam.real(), solver.eigenvectors().col(best),
            std::abs(lam.imag()) <= 1e-10 * scale};
}

} // namespace

double fd_radius_slope(const ChainModel& model, OperatorKind kind, double h) {
    const BranchValue plus = dominant_at(model, kind, h);
    if (!plus.is_real)
        throw HypothesisViolated("fd_radius_slope: dominant branch is complex");
    const BranchValue minus = continued_at(model, kind, -h, plus.vec);
    return (plus.value - minus.value) / (2.0 * h);
}

double fd_radius_curvature(const ChainModel& model, OperatorKind kind, double h) {
    const BranchValue plus = dominant_at(model, kind, h);
    if (!plus.is_real)
        throw HypothesisViolated("fd_radius_curvature: dominant branch is complex");
    const BranchValue minus = continued_at(model, kind, -h, plus.vec);
    // The branch passes through 1 exactly at alpha = 0.
    return (plus.value - 2.0 + minus.value) / (h * h);
}

double fd_radius_third(const ChainModel& model, OperatorKind kind, double h) {
    const BranchValue p1 = dominant_at(model, kind, h);
    if (!p1.is_real)
        throw HypothesisViolated("fd_radius_third: dominant branch is complex");
    const BranchValue p2 = continued_at(model, kind, 2.0 * h, p1.vec);
    const BranchValue m1 = continued_at(model, kind, -h, p1.vec);
    const BranchValue m2 = continued_at(model, kind, -2.0 * h, p1.vec);
    return (p2.value - 2.0 * p1.value + 2.0 * m1.value - m2.value) / (2.0 * h * h * h);
}

DerivativeReport derivative_report(const ChainModel& model, const StationaryInfo& info) {
    DerivativeReport report;
    const MeanGainEigen eig = analyze_mean_gain(info);
    report.mbar_real = eig.real;
    report.mbar_distinct = eig.distinct;
    if (eig.real) {
        report.lambda_prime0 = -eig.lambda_min;
        report.eta_prime0 = -2.0 * eig.lambda_min;
        report.v0 = eig.v0;
        report.r0 = eig.r0;
        const CltCovariance cov = clt_covariance(model, info, eig.r0);
        report.Gamma = cov.Gamma;
        report.Sigma = cov.Sigma;
        if (eig.distinct)
            report.lambda_dprime0_analytic = radius_curvature_at_zero(model, info);
    }
    constexpr double h1 = 1e-4;
    constexpr double h2 = 1e-3;
    try {
        report.fd_lambda_prime0 = fd_radius_slope(model, OperatorKind::FirstMoment, h1);
        report.fd_lambda_dprime0 = fd_radius_curvature(model, OperatorKind::FirstMoment, h2);
        report.fd_eta_prime0 = fd_radius_slope(model, OperatorKind::SecondMoment, h1);
        report.eta_dprime0_fd = fd_radius_curvature(model, OperatorKind::SecondMoment, h2);
    } catch (const HypothesisViolated&) {
        // complex dominant branch: finite differences stay unset
    }
    return report;
}

namespace {

bool is_sign_pattern_outer_product(const Eigen::MatrixXd& m) {
    const int k = static_cast<int>(m.rows());
    Eigen::VectorXd phi(k);
    for (int c = 0; c < k; ++c) {
        const double d = m(c, c);
        if (std::abs(d - 1.0) > 1e-12) return false;
    }
    for (int c = 0; c < k; ++c) phi(c) = m(0, c) >= 0.0 ? 1.0 : -1.0;
    if (phi(0) < 0) phi = -phi;
    return (m - phi * phi.transpose()).cwiseAbs().maxCoeff() <= 1e-12;
}

} // namespace

LocalProfile lms_local_profile(const ChainModel& model, double alpha_max, double step,
                               double tol, bool strict) {
    for (const auto& mi : model.m)
        if (!is_sign_pattern_outer_product(mi))
            throw OutOfRange(
                "lms_local_profile: gains are not +-1 pattern outer products "
                "(not a shift-register chain)");
    if (alpha_max <= 0.0 || step <= 0.0 || tol <= 0.0)
        throw OutOfRange("lms_local_profile: alpha_max, step, tol must be positive");

    LocalProfile profile;
    profile.tol = tol;
    bool lambda_broken = false;
    bool eta_broken = false;
    for (double a = 0.0; a <= alpha_max + 1e-12; a += step) {
        const double alpha = std::min(a, alpha_max);
        const double xi_l =
            spectral_radius(build_first_moment_operator(model, alpha));
        const double xi_q =
            spectral_radius(build_second_moment_operator(model, alpha));
        const double rl = std::abs(xi_l - (1.0 - alpha));
        const double rq = std::abs(xi_q - (1.0 - alpha) * (1.0 - alpha));
        profile.alphas.push_back(alpha);
        profile.lambda_residual.push_back(rl);
        profile.eta_residual.push_back(rq);
        profile.lambda_max_residual = std::max(profile.lambda_max_residual, rl);
        profile.eta_max_residual = std::max(profile.eta_max_residual, rq);
        if (rl <= tol && !lambda_broken)
            profile.lambda_ok_until = alpha;
        else
            lambda_broken = true;
        if (rq <= tol && !eta_broken)
            profile.eta_ok_until = alpha;
        else
            eta_broken = true;
        if (strict && (rl > tol || rq > tol)) {
            std::ostringstream oss;
            oss << "lms_local_profile: reference-curve fit failed at alpha=" << alpha
                << " (lambda residual " << rl << ", eta residual " << rq << ")";
            throw FitFailure(oss.str());
        }
    }
    profile.eta_dprime0_fd =
        fd_radius_curvature(model, OperatorKind::SecondMoment, 1e-3);
    profile.eta_third0_fd = fd_radius_third(model, OperatorKind::SecondMoment, 1e-3);
    return profile;
}

} // namespace specstab
