#pragma once

// Nonlinear gain recursion X_{t+1} = X_t - alpha [f(X_t, Phi_{t+1}) + W_{t+1}],
// its averaged ODE, equilibrium/Jacobian analysis, the sensitivity process,
// and gain-scaling experiments.
//
// Sign convention: the recursion is an Euler step of d(gamma)/dt = -fbar(gamma),
// and stability of the equilibrium corresponds to Jacobian eigenvalues of fbar
// with positive real part.  Every report carries this convention string.

#include "specstab/chain.hpp"
#include "specstab/sim_linear.hpp"

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace specstab {

inline constexpr const char* kOdeConvention = "dgamma/dt = -fbar(gamma)";

struct NonlinearProblem {
    ChainModel chain;
    StationaryInfo stat;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)> field;  ///< f(gamma, state)
    double lipschitz_hint = 1.0;
    std::string name;
};

/// f(gamma, i) = m_i gamma on the given chain.
NonlinearProblem linear_problem(const ChainModel& model);

/// Scalar fixture on a 2-state uniform chain: f(g, i) = a_i (g + 0.5 tanh g),
/// a = (1, 3).  fbar(g) = 2 (g + 0.5 tanh g), equilibrium 0, slope 3.
NonlinearProblem tanh_problem();

/// Two-dimensional variant: componentwise tanh field with state coefficients
/// a(0) = (1, 1), a(1) = (3, 5); Jacobian at the origin diag(3, 4.5).
NonlinearProblem tanh_vector_problem();

/// pi-weighted average of f(gamma, .).
Eigen::VectorXd average_field(const NonlinearProblem& problem, const Eigen::VectorXd& gamma);

struct ScaledLimitDiagnostic {
    std::vector<double> r_values;
    std::vector<Eigen::VectorXd> scaled;     ///< r^-1 fbar(r gamma)
    std::vector<double> successive_diff;     ///< |scaled[i+1] - scaled[i]|
};

ScaledLimitDiagnostic scaled_limit_field(const NonlinearProblem& problem,
                                         const Eigen::VectorXd& gamma,
                                         const std::vector<double>& r_values);

struct EquilibriumInfo {
    Eigen::VectorXd xstar;
    Eigen::MatrixXd jacobian;             ///< central-difference Jacobian of fbar at xstar
    Eigen::VectorXd eig_real_parts;
    bool exponentially_stable = false;    ///< all real parts > 0
    double fd_jacobian_agreement = 0.0;   ///< max |forward - backward| FD Jacobian entry
};

/// Damped Newton on fbar with finite-difference Jacobians
/// (central, h = 1e-6 (1 + |gamma|)).
EquilibriumInfo solve_equilibrium(const NonlinearProblem& problem,
                                  const Eigen::VectorXd& guess);

struct OdeTrajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> values;
    double error_estimate = 0.0;   ///< |full-step - half-step| at t_end
};

/// Classical fixed-step RK4 on dgamma/dt = -fbar(gamma).
/// Throws Blowup when |gamma| exceeds 1e12.
OdeTrajectory integrate_ode(const NonlinearProblem& problem, const Eigen::VectorXd& gamma0,
                            double t_end, double dt);

struct NonlinearStats {
    double tail_mean_eps2 = 0.0;    ///< mean |X - xstar|^2 over the final quartile
    double exceed_freq = 0.0;       ///< P(|X - xstar| >= delta) over the same window
    double delta = 0.0;
    double bf_hat = 0.0;            ///< max observed |f - fbar|^2 along the paths
    bool overflowed = false;
    std::string ode_convention = kOdeConvention;
};

NonlinearStats simulate_nonlinear(const NonlinearProblem& problem, const SimConfig& cfg,
                                  const Eigen::VectorXd& xstar, double delta);

struct SensitivityReport {
    double lyapunov_exponent = 0.0;   ///< mean over trials of t^-1 log |S_t|
    double std_error = 0.0;
    bool negative = false;
    std::string ode_convention = kOdeConvention;
};

/// Propagates S_{t+1} = (I - alpha J_{t+1}) S_t with J from central finite
/// differences of the field, with periodic renormalization.
SensitivityReport simulate_sensitivity(const NonlinearProblem& problem, const SimConfig& cfg);

struct ScalingRow {
    double alpha = 0.0;
    double tail_mean_eps2 = 0.0;
    double ratio = 0.0;             ///< eps2 / alpha
    double exceed_freq = 0.0;
};

struct ScalingTable {
    std::vector<ScalingRow> rows;
    double ratio_band = 0.0;        ///< max ratio / min ratio
    bool band_ok = false;           ///< ratio_band <= 3 (reported, never thrown)
    double delta = 0.0;
    std::string ode_convention = kOdeConvention;
};

/// Runs the stationary-fluctuation experiment per gain with a shared master
/// seed.  Default noise is unit-covariance i.i.d.; pass a NoiseSpec to
/// override (e.g. noise off).
ScalingTable alpha_scaling_experiment(const NonlinearProblem& problem,
                                      const std::vector<double>& alphas, int T, int trials,
                                      std::uint64_t seed,
                                      const std::optional<NoiseSpec>& noise = {});

} // namespace specstab
