#include "specstab/operators.hpp"

#include "specstab/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace specstab {

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

double inf_norm(const Eigen::MatrixXd& A) {
    return A.cwiseAbs().rowwise().sum().maxCoeff();
}

struct EigenDecomp {
    Eigen::VectorXcd values;
    Eigen::MatrixXcd vectors;
};

EigenDecomp solve_eigen(const Eigen::MatrixXd& A) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(A, /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success)
        throw ConvergenceFailure("dense eigenvalue iteration did not converge");
    return {solver.eigenvalues(), solver.eigenvectors()};
}

// Deterministic eigenvector normalization: unit inf-norm, entry of largest
// modulus rotated to the positive real axis.
Eigen::VectorXcd normalize_vector(const Eigen::VectorXcd& v) {
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    const std::complex<double> pivot = v(imax);
    return v / pivot;
}

// Index of the maximal-modulus eigenvalue; a real eigenvalue wins modulus
// ties against complex ones, and +Im wins within a conjugate pair.
int argmax_modulus(const Eigen::VectorXcd& values, double scale) {
    const double tol = 1e-12 * std::max(1.0, scale);
    int best = 0;
    for (int i = 1; i < values.size(); ++i) {
        const double di = std::abs(values(i)) - std::abs(values(best));
        if (di > tol) {
            best = i;
        } else if (std::abs(di) <= tol) {
            const bool best_real = std::abs(values(best).imag()) <= tol;
            const bool i_real = std::abs(values(i).imag()) <= tol;
            if (!best_real && i_real)
                best = i;
            else if (best_real == i_real && values(i).imag() > values(best).imag() + tol)
                best = i;
        }
    }
    return best;
}

EigenPair make_pair_from(const Eigen::MatrixXd& A, const EigenDecomp& right, int index) {
    const double scale = std::max(1.0, inf_norm(A));
    EigenPair pair;
    pair.lambda = right.values(index);
    pair.is_real = std::abs(pair.lambda.imag()) <= 1e-10 * scale;
    if (pair.is_real) pair.lambda = std::complex<double>(pair.lambda.real(), 0.0);
    pair.h = normalize_vector(right.vectors.col(index));

    // Left eigenvector from the transposed problem, matched by eigenvalue and
    // then by maximal |mu . h| within the matching group (the repeated-value
    // case would otherwise pair near-orthogonal members).
    const EigenDecomp left = solve_eigen(A.transpose());
    const double match_tol = 1e-8 * scale;
    int chosen = -1;
    double best_overlap = -1.0;
    for (int i = 0; i < left.values.size(); ++i) {
        if (std::abs(left.values(i) - pair.lambda) > match_tol &&
            std::abs(left.values(i) - std::conj(pair.lambda)) > match_tol)
            continue;
        Eigen::VectorXcd cand = left.vectors.col(i);
        if (std::abs(left.values(i) - pair.lambda) > match_tol) cand = cand.conjugate();
        const double overlap = std::abs(cand.dot(pair.h)) / cand.norm();
        if (overlap > best_overlap) {
            best_overlap = overlap;
            chosen = i;
        }
    }
    if (chosen < 0)
        throw ConvergenceFailure("left eigenvector matching failed");
    Eigen::VectorXcd mu = left.vectors.col(chosen);
    if (std::abs(left.values(chosen) - pair.lambda) > match_tol) mu = mu.conjugate();
    const std::complex<double> ip = (mu.transpose() * pair.h)(0, 0);
    if (std::abs(ip) < 1e-13 * mu.norm() * pair.h.norm())
        throw ConvergenceFailure("defective eigenpair: left/right vectors are orthogonal");
    pair.mu = mu / ip;
    return pair;
}

} // namespace

const char* to_string(OperatorKind kind) {
    return kind == OperatorKind::FirstMoment ? "first_moment" : "second_moment";
}

LiftedOperator build_first_moment_operator(const ChainModel& model, double alpha) {
    const int n = model.n;
    const int k = model.k;
    const long long dim = static_cast<long long>(n) * k;
    if (dim > kMaxOperatorDim)
        throw CapacityExceeded("first-moment operator dimension exceeds 4096");
    LiftedOperator op{OperatorKind::FirstMoment, alpha, n, k, static_cast<int>(dim),
                      Eigen::MatrixXd::Zero(dim, dim)};
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    for (int j = 0; j < n; ++j) {
        const Eigen::MatrixXd BjT = (I - alpha * model.m[j]).transpose();
        for (int i = 0; i < n; ++i) {
            if (model.P(i, j) == 0.0) continue;
            op.A.block(i * k, j * k, k, k) = model.P(i, j) * BjT;
        }
    }
    return op;
}

LiftedOperator build_second_moment_operator(const ChainModel& model, double alpha) {
    const int n = model.n;
    const int k = model.k;
    const int b = k * k;
    const long long dim = static_cast<long long>(n) * b;
    if (dim > kMaxOperatorDim)
        throw CapacityExceeded("second-moment operator dimension exceeds 4096");
    LiftedOperator op{OperatorKind::SecondMoment, alpha, n, k, static_cast<int>(dim),
                      Eigen::MatrixXd::Zero(dim, dim)};
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    for (int j = 0; j < n; ++j) {
        const Eigen::MatrixXd BjT = (I - alpha * model.m[j]).transpose();
        const Eigen::MatrixXd block = kron(BjT, BjT);
        for (int i = 0; i < n; ++i) {
            if (model.P(i, j) == 0.0) continue;
            op.A.block(i * b, j * b, b, b) = model.P(i, j) * block;
        }
    }
    return op;
}

LiftedOperator build_operator(const ChainModel& model, OperatorKind kind, double alpha) {
    return kind == OperatorKind::FirstMoment ? build_first_moment_operator(model, alpha)
                                             : build_second_moment_operator(model, alpha);
}

double spectral_radius(const LiftedOperator& op) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(op.A, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw ConvergenceFailure(
            "spectral_radius: eigenvalue iteration did not converge; "
            "try growth_rate_estimate");
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double growth_rate_estimate(const LiftedOperator& op, int t_max) {
    if (t_max < 16) throw OutOfRange("growth_rate_estimate: t_max must be >= 16");
    // Binary powering with per-product renormalization; accumulates
    // log |A^t|_inf without overflow or underflow.
    struct Scaled {
        double log_scale;
        Eigen::MatrixXd M;
    };
    const double n0 = inf_norm(op.A);
    if (n0 == 0.0) return 0.0;
    Scaled base{std::log(n0), op.A / n0};
    Scaled acc{0.0, Eigen::MatrixXd::Identity(op.dim, op.dim)};
    int t = t_max;
    while (t > 0) {
        if (t & 1) {
            Eigen::MatrixXd M = acc.M * base.M;
            const double s = inf_norm(M);
            acc = {acc.log_scale + base.log_scale + std::log(s), M / s};
        }
        t >>= 1;
        if (t > 0) {
            Eigen::MatrixXd M = base.M * base.M;
            const double s = inf_norm(M);
            base = {2.0 * base.log_scale + std::log(s), M / s};
        }
    }
    const double log_norm = acc.log_scale + std::log(inf_norm(acc.M));
    return std::exp(log_norm / t_max);
}

EigenPair perron_eigenpair(const LiftedOperator& op) {
    const EigenDecomp dec = solve_eigen(op.A);
    const double scale = std::max(1.0, inf_norm(op.A));
    const int idx = argmax_modulus(dec.values, scale);
    return make_pair_from(op.A, dec, idx);
}

namespace {

// Bisection refinement of a second-moment radius crossing through 1.  The
// documented tolerance is an upper bound; we refine further so the radius at
// the reported endpoint is within ~1e-6 of unity.
double refine_crossing(const ChainModel& model, double lo, double hi, double tol) {
    tol = std::min(tol, 1e-8);
    auto above = [&](double a) {
        return spectral_radius(build_second_moment_operator(model, a)) >= 1.0;
    };
    bool lo_above = above(lo);
    for (int iter = 0; iter < 200 && (hi - lo) > tol; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (above(mid) == lo_above)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

SpectralReport scan_curve(const ChainModel& model, OperatorKind kind,
                          const std::vector<double>& alphas) {
    if (alphas.empty()) throw OutOfRange("scan_curve: empty gain grid");
    if (alphas.front() < 0.0) throw OutOfRange("scan_curve: grid must start at alpha >= 0");
    if (!std::is_sorted(alphas.begin(), alphas.end()))
        throw OutOfRange("scan_curve: grid must be sorted ascending");

    SpectralReport report;
    report.kind = kind;
    report.points.reserve(alphas.size());
    report.perron.reserve(alphas.size());

    int branch_id = 0;
    bool have_prev = false;
    std::complex<double> tracked;

    for (const double alpha : alphas) {
        SpectralPoint pt;
        pt.alpha = alpha;
        try {
            const LiftedOperator op = build_operator(model, kind, alpha);
            const EigenDecomp dec = solve_eigen(op.A);
            const double scale = std::max(1.0, inf_norm(op.A));
            const int imax = argmax_modulus(dec.values, scale);
            pt.xi = std::abs(dec.values(imax));

            if (have_prev) {
                // nearest-eigenvalue continuation of the tracked branch
                int inear = 0;
                for (int i = 1; i < dec.values.size(); ++i)
                    if (std::abs(dec.values(i) - tracked) <
                        std::abs(dec.values(inear) - tracked))
                        inear = i;
                const double drop = pt.xi - std::abs(dec.values(inear));
                if (drop > 1e-9 * std::max(1.0, pt.xi)) {
                    report.breakpoints.push_back(alpha);
                    ++branch_id;
                    tracked = dec.values(imax);
                } else {
                    tracked = dec.values(inear);
                }
            } else {
                tracked = dec.values(imax);
                have_prev = true;
            }
            EigenPair pair = make_pair_from(op.A, dec, imax);
            pt.lambda = pair.lambda;
            pt.is_real = pair.is_real;
            pt.branch_id = branch_id;
            report.perron.push_back(std::move(pair));
        } catch (const ConvergenceFailure&) {
            pt.solver_ok = false;
            pt.xi = std::numeric_limits<double>::quiet_NaN();
            pt.branch_id = branch_id;
            report.perron.push_back(EigenPair{});
        }
        report.points.push_back(pt);
    }

    if (kind == OperatorKind::SecondMoment) {
        // Grid-level region where the radius dips below 1, refined by bisection.
        const double tol = alphas.size() > 1
                               ? 1e-2 * (alphas.back() - alphas.front()) /
                                     static_cast<double>(alphas.size() - 1)
                               : 1e-8;
        std::optional<double> open_lo;
        for (std::size_t i = 0; i < report.points.size(); ++i) {
            const auto& pt = report.points[i];
            if (!pt.solver_ok) continue;
            const bool stable = pt.xi < 1.0 && pt.alpha > 0.0;
            if (stable && !open_lo) {
                if (i == 0 || report.points[i - 1].alpha == 0.0)
                    open_lo = (i == 0) ? pt.alpha : 0.0;
                else
                    open_lo = refine_crossing(model, report.points[i - 1].alpha,
                                              pt.alpha, tol);
            } else if (!stable && open_lo) {
                report.region_O.push_back(
                    {*open_lo, refine_crossing(model, report.points[i - 1].alpha, pt.alpha, tol)});
                open_lo.reset();
            }
        }
        if (open_lo) report.region_O.push_back({*open_lo, alphas.back()});
    }
    return report;
}

std::vector<Interval> stability_region(const ChainModel& model, double alpha_max,
                                       double resolution) {
    if (alpha_max <= 0.0 || resolution <= 0.0)
        throw OutOfRange("stability_region: alpha_max and resolution must be positive");
    std::vector<double> grid;
    for (double a = 0.0; a <= alpha_max + 1e-12 * alpha_max; a += resolution)
        grid.push_back(std::min(a, alpha_max));
    if (grid.back() < alpha_max) grid.push_back(alpha_max);
    const SpectralReport rep = scan_curve(model, OperatorKind::SecondMoment, grid);
    return rep.region_O;
}

ErgodicDecayReport multiplicative_ergodic_check(const LiftedOperator& op, int t_max) {
    if (t_max < 1) throw OutOfRange("multiplicative_ergodic_check: t_max must be >= 1");
    const EigenDecomp right = solve_eigen(op.A);
    const double scale = std::max(1.0, inf_norm(op.A));
    const int imax = argmax_modulus(right.values, scale);
    const std::complex<double> lam_c = right.values(imax);
    if (std::abs(lam_c.imag()) > 1e-10 * scale)
        throw NotDominant("dominant eigenvalue is complex");
    const double lambda = lam_c.real();

    // Dominant group: eigenvalues equal to lambda within the cluster
    // tolerance.  Everything else must sit below by more than the gap bound.
    const double cluster_tol = 1e-8 * scale;
    std::vector<int> group;
    double next_modulus = 0.0;
    for (int i = 0; i < right.values.size(); ++i) {
        if (std::abs(right.values(i) - lam_c) <= cluster_tol)
            group.push_back(i);
        else
            next_modulus = std::max(next_modulus, std::abs(right.values(i)));
    }
    const double gap = std::abs(lambda) - next_modulus;
    if (gap <= 1e-8)
        throw NotDominant("no spectral gap below the dominant eigenvalue");

    const int g = static_cast<int>(group.size());
    const EigenDecomp left = solve_eigen(op.A.transpose());
    Eigen::MatrixXd Hr(op.dim, g), Hl(op.dim, g);
    for (int c = 0; c < g; ++c) {
        Hr.col(c) = right.vectors.col(group[c]).real();
        if (Hr.col(c).norm() < 0.5) Hr.col(c) = right.vectors.col(group[c]).imag();
        Hr.col(c).normalize();
    }
    int filled = 0;
    for (int i = 0; i < left.values.size() && filled < g; ++i) {
        if (std::abs(left.values(i) - lam_c) <= cluster_tol) {
            Hl.col(filled) = left.vectors.col(i).real();
            if (Hl.col(filled).norm() < 0.5) Hl.col(filled) = left.vectors.col(i).imag();
            Hl.col(filled).normalize();
            ++filled;
        }
    }
    if (filled != g) throw NotDominant("left/right dominant multiplicities disagree");
    // With unit columns on both sides, a defective (or nearly defective)
    // group shows up as a tiny singular value of the biorthogonality matrix.
    const Eigen::MatrixXd overlap = Hl.transpose() * Hr;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(overlap,
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues().minCoeff() <= 1e-8)
        throw NotDominant("dominant eigenvalue group is defective");
    const Eigen::MatrixXd projector = Hr * svd.solve(Hl.transpose());

    ErgodicDecayReport report;
    report.lambda = lambda;
    report.group_multiplicity = g;
    report.gap = gap;
    report.residuals.reserve(t_max);

    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(op.dim, op.dim);
    for (int t = 1; t <= t_max; ++t) {
        M = (op.A * M) / lambda;
        report.residuals.push_back(inf_norm(M - projector));
    }
    report.final_residual = report.residuals.back();

    // Fit log r_t on t before the rounding floor.
    const double floor = 1e-13 * std::max(1.0, inf_norm(projector));
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int npts = 0;
    for (int t = 1; t <= t_max; ++t) {
        const double r = report.residuals[t - 1];
        if (r <= floor) break;
        const double y = std::log(r);
        sx += t;
        sy += y;
        sxx += static_cast<double>(t) * t;
        sxy += t * y;
        ++npts;
    }
    report.fitted_slope =
        npts >= 2 ? (npts * sxy - sx * sy) / (npts * sxx - sx * sx) : 0.0;
    return report;
}

std::vector<SegmentFit> fit_branch_segments(const SpectralReport& report, int degree) {
    std::vector<SegmentFit> fits;
    std::size_t start = 0;
    while (start < report.points.size()) {
        std::size_t end = start;
        const int id = report.points[start].branch_id;
        while (end + 1 < report.points.size() && report.points[end + 1].branch_id == id)
            ++end;
        const int npts = static_cast<int>(end - start + 1);
        SegmentFit fit;
        fit.alpha_lo = report.points[start].alpha;
        fit.alpha_hi = report.points[end].alpha;
        fit.points = npts;
        const int ncoef = std::min(degree + 1, npts);
        Eigen::MatrixXd V(npts, ncoef);
        Eigen::VectorXd y(npts);
        for (int r = 0; r < npts; ++r) {
            const auto& pt = report.points[start + r];
            double p = 1.0;
            for (int c = 0; c < ncoef; ++c) {
                V(r, c) = p;
                p *= pt.alpha;
            }
            y(r) = pt.xi;
        }
        const Eigen::VectorXd coef = V.colPivHouseholderQr().solve(y);
        fit.coeffs.assign(coef.data(), coef.data() + coef.size());
        fit.max_residual = (V * coef - y).cwiseAbs().maxCoeff();
        fits.push_back(std::move(fit));
        start = end + 1;
    }
    return fits;
}

} // namespace specstab
