#pragma once

// Seeded Monte Carlo engine for the gain recursion
//   X_{t+1} = (I - alpha m(Phi_t)) X_t + W_{t+1},
//   W_{t+1} = w(Phi_{t+1}) + optional i.i.d. Gaussian term.
// Per-trial RNG streams are derived from (master seed, trial index); trials
// are aggregated block-by-block in fixed order, so results are bit-identical
// for any worker count.

#include "specstab/chain.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace specstab {

inline constexpr int kStationaryStart = -1;

struct NoiseSpec {
    bool use_model_w = true;
    std::optional<Eigen::MatrixXd> iid_covariance;  ///< k x k symmetric PSD
};

struct SimConfig {
    double alpha = 0.0;
    int T = 1;
    int trials = 1;
    std::uint64_t seed = 0;
    Eigen::VectorXd x0;              ///< empty = origin
    int phi0 = kStationaryStart;     ///< state index, or kStationaryStart to draw from pi
    NoiseSpec noise;
    int threads = 1;
};

enum class Classification { Converged, Diverged, Inconclusive };

const char* to_string(Classification c);

struct TrajectoryStats {
    std::vector<double> m2;              ///< mean |X_t|^2 across trials, t = 0..T
    std::vector<double> ci;              ///< 95% half-widths
    Classification classification = Classification::Inconclusive;
    std::optional<double> sigma2_hat;    ///< plateau mean over the final quartile (converged runs)
    double tail_slope = 0.0;             ///< log-scale slope over the final quartile
    bool overflowed = false;             ///< some path exceeded |X| = 1e150 and was truncated
};

TrajectoryStats simulate_linear(const ChainModel& model, const SimConfig& cfg);

struct CouplingReport {
    std::vector<int> depths;
    std::vector<double> d2;          ///< E|X_0^(n_i) - X_0^(n_i+1)|^2 per consecutive pair
    double fitted_log_slope = 0.0;   ///< slope of log d2 against the smaller depth
    double reference_rate = 0.0;     ///< 2 log xi_alpha
};

/// Paths restarted from zero at increasing depths in the past over one common
/// randomness realization per trial.  Default disturbance is the model w plus
/// unit-covariance i.i.d. noise; pass a NoiseSpec to override.  Throws
/// UnstableGain when the second-moment radius at alpha is >= 1.
CouplingReport backward_couple(const ChainModel& model, double alpha,
                               const std::vector<int>& depths, std::uint64_t seed,
                               int trials, const std::optional<NoiseSpec>& noise = {});

struct DecaySeries {
    std::vector<double> mean_sq;     ///< E|X_t(gamma) - X_t(0)|^2, t = 0..T
    double fitted_rate = 0.0;        ///< per-step slope of the log curve
    double reference_rate = 0.0;     ///< 2 log xi_alpha
    bool within_20pct = false;
};

/// Difference dynamics under common randomness (noise cancels exactly).
/// Throws UnstableGain when the second-moment radius at alpha is >= 1.
DecaySeries stationarity_convergence(const ChainModel& model, double alpha,
                                     const Eigen::VectorXd& gamma, int T, int trials,
                                     std::uint64_t seed);

/// Factor L with L L^T equal to the PSD covariance (eigendecomposition based,
/// tolerates rank deficiency).  Exposed for the nonlinear engine and tests.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& covariance);

} // namespace specstab
