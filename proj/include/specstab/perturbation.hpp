#pragma once

// Gain-derivative formulas for the spectral-radius curves at zero gain,
// evaluated analytically through the fundamental matrix and cross-checked
// against finite differences of the computed curves.

#include "specstab/chain.hpp"
#include "specstab/operators.hpp"

#include <Eigen/Dense>
#include <optional>

namespace specstab {

/// Eigenstructure of the mean gain matrix needed by the derivative formulas.
struct MeanGainEigen {
    bool real = false;
    bool distinct = false;
    double lambda_min = 0.0;
    Eigen::VectorXd eigenvalues;  ///< sorted ascending (populated when real)
    Eigen::VectorXd r0;           ///< right eigenvector for lambda_min, unit 2-norm
    Eigen::VectorXd v0;           ///< left eigenvector, scaled so v0 . r0 = 1
};

MeanGainEigen analyze_mean_gain(const StationaryInfo& info);

/// d(radius)/d(alpha) at 0 for the first-moment curve: -lambda_min(Mbar).
/// Throws HypothesisViolated when Mbar has non-real eigenvalues.
double radius_slope_at_zero(const StationaryInfo& info);

/// Second derivative at 0 of the first-moment radius curve, via the
/// fundamental-matrix evaluation of the lagged-gain autocovariance series.
/// Requires real, distinct Mbar eigenvalues (HypothesisViolated otherwise).
double radius_curvature_at_zero(const ChainModel& model, const StationaryInfo& info);

/// d(radius)/d(alpha) at 0 for the second-moment curve: -2 lambda_min(Mbar).
double second_moment_slope_at_zero(const StationaryInfo& info);

struct CltCovariance {
    Eigen::MatrixXd Gamma;  ///< long-run covariance of F_t = (m(Phi_t) - Mbar) v
    Eigen::MatrixXd Sigma;  ///< instantaneous variance of the same process
};

/// Closed-form Gamma and Sigma through the fundamental matrix.
CltCovariance clt_covariance(const ChainModel& model, const StationaryInfo& info,
                             const Eigen::VectorXd& v);

/// Central finite difference of the radius curve at 0; the branch through
/// alpha = 0 is continued to -h by eigenvector overlap so the difference
/// follows one analytic branch rather than the max-of-branches kink.
double fd_radius_slope(const ChainModel& model, OperatorKind kind, double h);
double fd_radius_curvature(const ChainModel& model, OperatorKind kind, double h);
/// Third central difference (coefficient of the cubic term times 6).
double fd_radius_third(const ChainModel& model, OperatorKind kind, double h);

struct DerivativeReport {
    std::optional<double> lambda_prime0;
    std::optional<double> lambda_dprime0_analytic;
    std::optional<double> eta_prime0;
    std::optional<double> eta_dprime0_fd;
    std::optional<double> fd_lambda_prime0;
    std::optional<double> fd_lambda_dprime0;
    std::optional<double> fd_eta_prime0;
    std::optional<Eigen::MatrixXd> Gamma;
    std::optional<Eigen::MatrixXd> Sigma;
    Eigen::VectorXd v0, r0;
    bool mbar_real = false;
    bool mbar_distinct = false;
};

/// Full report with hypothesis flags; analytic fields are left empty where
/// the hypotheses fail, finite-difference fields where the dominant branch
/// is complex.  Step sizes fixed at 1e-4 (first) and 1e-3 (second).
DerivativeReport derivative_report(const ChainModel& model, const StationaryInfo& info);

struct LocalProfile {
    std::vector<double> alphas;
    std::vector<double> lambda_residual;  ///< |xi_L - (1 - alpha)|
    std::vector<double> eta_residual;     ///< |xi_Q - (1 - alpha)^2|
    double lambda_ok_until = 0.0;         ///< largest grid alpha with all residuals <= tol so far
    double eta_ok_until = 0.0;
    double lambda_max_residual = 0.0;
    double eta_max_residual = 0.0;
    double eta_dprime0_fd = 0.0;          ///< second difference of the second-moment curve at 0
    double eta_third0_fd = 0.0;           ///< third difference at 0
    double tol = 0.0;
};

/// Reference-curve profile for shift-register chains (gains must be +-1
/// pattern outer products; OutOfRange otherwise).  In strict mode the first
/// reference-curve violation throws FitFailure naming alpha and residual.
LocalProfile lms_local_profile(const ChainModel& model, double alpha_max, double step,
                               double tol, bool strict);

} // namespace specstab
