#pragma once

// Finite-state Markov chain environments: transition law P, per-state gain
// matrix m(x) and disturbance vector w(x).  All downstream spectral and
// simulation machinery consumes these models.

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace specstab {

struct ChainModel {
    int n = 0;                        ///< state count
    int k = 0;                        ///< recursion dimension
    Eigen::MatrixXd P;                ///< n x n row-stochastic transition matrix
    std::vector<Eigen::MatrixXd> m;   ///< n gain matrices, each k x k
    std::vector<Eigen::VectorXd> w;   ///< n disturbance vectors, each k
    std::vector<std::string> labels;  ///< n opaque state labels
};

enum class ChainIssue {
    RowSumDefect,
    NegativeEntry,
    NonFiniteGain,
    NonFiniteDisturbance,
    Reducible,
    Periodic,
};

const char* to_string(ChainIssue issue);

struct ValidationReport {
    double max_row_sum_defect = 0.0;  ///< max |row sum - 1|
    int mixing_time = -1;             ///< smallest t <= n^2 with P^t > 0, or -1
    bool gains_finite = true;
    bool disturbances_finite = true;
    std::vector<ChainIssue> issues;

    bool ok() const { return issues.empty(); }
    bool has(ChainIssue issue) const;
};

struct StationaryInfo {
    Eigen::VectorXd pi;    ///< stationary law, pi^T P = pi^T
    Eigen::MatrixXd Z;     ///< fundamental matrix (I - P + 1 pi^T)^{-1}
    Eigen::MatrixXd Mbar;  ///< sum_i pi[i] m[i]
    Eigen::VectorXd Wbar;  ///< sum_i pi[i] w[i]
};

/// Dimensional consistency is an exception (DimensionMismatch); stochasticity,
/// finiteness and mixing problems are reported as issues for the caller.
ValidationReport validate_chain(const ChainModel& model);

/// Stationary law by direct linear solve (deterministic, no simulation),
/// fundamental matrix, and pi-averaged gain/disturbance.
/// Throws SingularSystem if the augmented system cannot be inverted.
StationaryInfo stationary(const ChainModel& model);

/// Chain on {-1,+1}^L tracking the last L symbols of a Bernoulli sequence.
/// State index encodes the symbol tuple MSB-first: bit (L-1-c) of the index
/// is 0 when component c (the c-step-old symbol) equals +1.  Gains are the
/// outer products of the component vectors; disturbances are zero.
/// Throws OutOfRange unless 1 <= L <= 12.
ChainModel build_shift_register(int L);

/// Load a model from the JSON config schema (see README).  Throws ParseError
/// with field context, or ValidationError wrapping validate_chain failures.
ChainModel load_chain(const std::string& path);

/// Parse a model from a JSON string (same schema as load_chain).
ChainModel parse_chain_json(const std::string& text);

} // namespace specstab
