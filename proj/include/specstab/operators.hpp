#pragma once

// Dense lifted matrices for the first-moment and second-moment Markov
// operators of the gain recursion, their spectral radii, Perron eigenpairs,
// gain sweeps, the stability region, and the rank-one (or rank-g) ergodic
// limit check.

#include "specstab/chain.hpp"

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

namespace specstab {

enum class OperatorKind {
    FirstMoment,   ///< f(x) -> E_x[(I - alpha M_1)^T f(Phi_1)],  dim n*k
    SecondMoment,  ///< F(x) -> E_x[(I - alpha M_1)^T F(Phi_1) (I - alpha M_1)],  dim n*k^2
};

const char* to_string(OperatorKind kind);

/// Dense block representation.  Block layout: state-major stacking, block
/// (i, j) of size b x b (b = k for FirstMoment, k^2 for SecondMoment) holds
/// P(i,j) * (I - alpha m_j)^T            for FirstMoment,
/// P(i,j) * (B_j^T kron B_j^T)           for SecondMoment, B_j = I - alpha m_j,
/// with column-major matrix vectorization, so vec(B^T F B) = (B^T kron B^T) vec F.
struct LiftedOperator {
    OperatorKind kind;
    double alpha = 0.0;
    int n = 0;
    int k = 0;
    int dim = 0;
    Eigen::MatrixXd A;
};

struct EigenPair {
    std::complex<double> lambda;
    Eigen::VectorXcd h;    ///< right eigenvector, unit inf-norm, leading entry positive
    Eigen::VectorXcd mu;   ///< left eigenvector, scaled so mu . h = 1
    bool is_real = true;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct SpectralPoint {
    double alpha = 0.0;
    double xi = 0.0;                       ///< spectral radius
    std::complex<double> lambda;           ///< maximal eigenvalue
    bool is_real = true;
    int branch_id = 0;
    bool solver_ok = true;
};

struct SpectralReport {
    OperatorKind kind = OperatorKind::FirstMoment;
    std::vector<SpectralPoint> points;
    std::vector<EigenPair> perron;         ///< one per grid point
    std::vector<double> breakpoints;       ///< alphas where the tracked branch lost maximality
    std::vector<Interval> region_O;        ///< where the second-moment radius < 1 (SecondMoment scans)
};

struct ErgodicDecayReport {
    double lambda = 0.0;
    int group_multiplicity = 1;         ///< eigenvalue multiplicity of the dominant group
    double gap = 0.0;                   ///< |lambda| minus next eigenvalue modulus
    std::vector<double> residuals;      ///< r_t = |lambda^-t A^t - projector|_inf, t = 1..t_max
    double fitted_slope = 0.0;          ///< slope of log r_t before the rounding floor
    double final_residual = 0.0;
};

constexpr int kMaxOperatorDim = 4096;

LiftedOperator build_first_moment_operator(const ChainModel& model, double alpha);
LiftedOperator build_second_moment_operator(const ChainModel& model, double alpha);
LiftedOperator build_operator(const ChainModel& model, OperatorKind kind, double alpha);

/// Maximal eigenvalue modulus by dense nonsymmetric eigensolve.
double spectral_radius(const LiftedOperator& op);

/// (|A^t_max|_inf)^(1/t_max) with renormalized binary powering; an
/// independent oracle for spectral_radius (agreement ~5e-3 at t_max = 2048).
double growth_rate_estimate(const LiftedOperator& op, int t_max);

/// Eigenpair of maximal modulus.  On a real/complex modulus tie the real
/// eigenvalue wins; within a complex pair the +Im member is returned.
EigenPair perron_eigenpair(const LiftedOperator& op);

/// Per-alpha radius and Perron pair with nearest-eigenvalue branch tracking;
/// breakpoints mark where the tracked branch stops being maximal.
SpectralReport scan_curve(const ChainModel& model, OperatorKind kind,
                          const std::vector<double>& alphas);

/// Intervals of (0, alpha_max] where the second-moment radius is < 1,
/// endpoints refined by bisection to resolution * 1e-2.
std::vector<Interval> stability_region(const ChainModel& model, double alpha_max,
                                       double resolution);

/// Convergence of lambda^-t A^t to the spectral projector of the dominant
/// eigenvalue.  The dominant eigenvalue must be real with a modulus gap
/// > 1e-8 to the rest of the spectrum; a semisimple repeated dominant
/// eigenvalue is handled via its rank-g group projector (g = 1 recovers the
/// h mu^T form).  Throws NotDominant otherwise.
ErgodicDecayReport multiplicative_ergodic_check(const LiftedOperator& op, int t_max);

/// Least-squares polynomial fit of the radius curve on each branch segment;
/// returns per-segment max absolute residual.
struct SegmentFit {
    double alpha_lo = 0.0;
    double alpha_hi = 0.0;
    std::vector<double> coeffs;  ///< ascending powers
    double max_residual = 0.0;
    int points = 0;
};
std::vector<SegmentFit> fit_branch_segments(const SpectralReport& report, int degree);

} // namespace specstab
