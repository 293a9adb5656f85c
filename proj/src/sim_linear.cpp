#include "specstab/sim_linear.hpp"

#include "specstab/errors.hpp"
#include "specstab/operators.hpp"
#include "specstab/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace specstab {

namespace {

constexpr double kOverflowNorm = 1e150;
constexpr double kValueClamp = 1e300;   // cap on |X|^2 samples (norm guard squared)
constexpr double kSumSqClamp = 1e150;   // tighter cap inside the variance sums
constexpr int kTrialBlock = 32;

struct ChainSampler {
    std::vector<Eigen::VectorXd> cum_rows;
    Eigen::VectorXd cum_pi;

    explicit ChainSampler(const ChainModel& model) {
        cum_rows.reserve(model.n);
        for (int i = 0; i < model.n; ++i) {
            Eigen::VectorXd c(model.n);
            double acc = 0.0;
            for (int j = 0; j < model.n; ++j) {
                acc += model.P(i, j);
                c(j) = acc;
            }
            cum_rows.push_back(std::move(c));
        }
    }

    void set_pi(const Eigen::VectorXd& pi) {
        cum_pi.resize(pi.size());
        double acc = 0.0;
        for (int i = 0; i < pi.size(); ++i) {
            acc += pi(i);
            cum_pi(i) = acc;
        }
    }

    int step(Rng& rng, int state) const {
        return rng.sample_cumulative(cum_rows[state], static_cast<int>(cum_rows[state].size()));
    }

    int initial(Rng& rng, int phi0) const {
        if (phi0 != kStationaryStart) return phi0;
        return rng.sample_cumulative(cum_pi, static_cast<int>(cum_pi.size()));
    }
};

// Fixed-order blocked reduction: blocks may be computed by any number of
// workers, but are combined sequentially by block index.
template <class Block, class Work>
std::vector<Block> run_blocks(int trials, int threads, Work&& work) {
    const int nblocks = (trials + kTrialBlock - 1) / kTrialBlock;
    std::vector<Block> blocks(nblocks);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            const int b = next.fetch_add(1);
            if (b >= nblocks) return;
            const int lo = b * kTrialBlock;
            const int hi = std::min(trials, lo + kTrialBlock);
            work(blocks[b], lo, hi);
        }
    };
    const int nthreads = std::max(1, threads);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return blocks;
}

struct LinearBlock {
    std::vector<double> sum;
    std::vector<double> sumsq;
    bool overflowed = false;
};

double fit_slope(const std::vector<double>& y, int lo, int hi) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int t = lo; t <= hi; ++t) {
        const double v = std::log(std::max(y[t], 1e-300));
        sx += t;
        sy += v;
        sxx += static_cast<double>(t) * t;
        sxy += t * v;
        ++n;
    }
    if (n < 2) return 0.0;
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace

const char* to_string(Classification c) {
    switch (c) {
        case Classification::Converged: return "converged";
        case Classification::Diverged: return "diverged";
        case Classification::Inconclusive: return "inconclusive";
    }
    return "?";
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& covariance) {
    if (covariance.rows() != covariance.cols())
        throw DimensionMismatch("psd_factor: covariance must be square");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * (1.0 + covariance.cwiseAbs().maxCoeff()))
        throw ValidationError("psd_factor: covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
    if (es.info() != Eigen::Success)
        throw ConvergenceFailure("psd_factor: eigendecomposition failed");
    if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + covariance.cwiseAbs().maxCoeff()))
        throw ValidationError("psd_factor: covariance has a negative eigenvalue");
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

TrajectoryStats simulate_linear(const ChainModel& model, const SimConfig& cfg) {
    if (cfg.T < 1 || cfg.trials < 1)
        throw OutOfRange("simulate_linear: T and trials must be >= 1");
    const int k = model.k;
    Eigen::VectorXd x0 = cfg.x0.size() == 0 ? Eigen::VectorXd::Zero(k) : cfg.x0;
    if (x0.size() != k) throw DimensionMismatch("simulate_linear: x0 must have length k");
    if (cfg.phi0 != kStationaryStart && (cfg.phi0 < 0 || cfg.phi0 >= model.n))
        throw OutOfRange("simulate_linear: phi0 out of range");

    ChainSampler sampler(model);
    if (cfg.phi0 == kStationaryStart) sampler.set_pi(stationary(model).pi);

    Eigen::MatrixXd noise_factor;
    const bool iid = cfg.noise.iid_covariance.has_value();
    if (iid) {
        if (cfg.noise.iid_covariance->rows() != k)
            throw DimensionMismatch("simulate_linear: iid covariance must be k x k");
        noise_factor = psd_factor(*cfg.noise.iid_covariance);
    }

    std::vector<Eigen::MatrixXd> step_mats;
    step_mats.reserve(model.n);
    for (int i = 0; i < model.n; ++i)
        step_mats.push_back(Eigen::MatrixXd::Identity(k, k) - cfg.alpha * model.m[i]);

    const int steps = cfg.T + 1;
    auto blocks = run_blocks<LinearBlock>(
        cfg.trials, cfg.threads, [&](LinearBlock& block, int lo, int hi) {
            block.sum.assign(steps, 0.0);
            block.sumsq.assign(steps, 0.0);
            Eigen::VectorXd x(k), z(k), xn(k);
            for (int trial = lo; trial < hi; ++trial) {
                Rng rng(cfg.seed, static_cast<std::uint64_t>(trial));
                int state = sampler.initial(rng, cfg.phi0);
                x = x0;
                bool truncated = false;
                double frozen = 0.0;
                for (int t = 0; t < steps; ++t) {
                    double v = truncated ? frozen : x.squaredNorm();
                    v = std::min(v, kValueClamp);
                    block.sum[t] += v;
                    const double vc = std::min(v, kSumSqClamp);
                    block.sumsq[t] += vc * vc;
                    if (t == steps - 1) break;
                    if (!truncated) {
                        xn.noalias() = step_mats[state] * x;
                        state = sampler.step(rng, state);
                        if (cfg.noise.use_model_w) xn += model.w[state];
                        if (iid) {
                            for (int c = 0; c < k; ++c) z(c) = rng.gaussian();
                            xn.noalias() += noise_factor * z;
                        }
                        x = xn;
                        if (!(x.norm() <= kOverflowNorm)) {
                            truncated = true;
                            frozen = kValueClamp;
                            block.overflowed = true;
                        }
                    } else {
                        // keep the stream aligned so later trials are unaffected
                        state = sampler.step(rng, state);
                        if (iid)
                            for (int c = 0; c < k; ++c) (void)rng.gaussian();
                    }
                }
            }
        });

    TrajectoryStats stats;
    stats.m2.assign(steps, 0.0);
    stats.ci.assign(steps, 0.0);
    std::vector<double> sum(steps, 0.0), sumsq(steps, 0.0);
    for (const auto& block : blocks) {
        stats.overflowed = stats.overflowed || block.overflowed;
        for (int t = 0; t < steps; ++t) {
            sum[t] += block.sum[t];
            sumsq[t] += block.sumsq[t];
        }
    }
    const double nt = static_cast<double>(cfg.trials);
    for (int t = 0; t < steps; ++t) {
        stats.m2[t] = sum[t] / nt;
        if (cfg.trials > 1) {
            const double var = std::max(0.0, (sumsq[t] - sum[t] * sum[t] / nt) / (nt - 1.0));
            stats.ci[t] = 1.96 * std::sqrt(var / nt);
        }
    }

    const int lo = 3 * (steps - 1) / 4;
    stats.tail_slope = fit_slope(stats.m2, lo, steps - 1);
    if (stats.overflowed || stats.tail_slope > 0.05) {
        stats.classification = Classification::Diverged;
    } else if (std::abs(stats.tail_slope) <= 1e-3) {
        stats.classification = Classification::Converged;
        double acc = 0.0;
        for (int t = lo; t < steps; ++t) acc += stats.m2[t];
        stats.sigma2_hat = acc / (steps - lo);
    } else {
        stats.classification = Classification::Inconclusive;
    }
    return stats;
}

namespace {

void require_stable(const ChainModel& model, double alpha, const char* who) {
    const double xi_q = spectral_radius(build_second_moment_operator(model, alpha));
    if (!(xi_q < 1.0))
        throw UnstableGain(std::string(who) +
                           ": gain outside the stability region (second-moment radius " +
                           std::to_string(xi_q) + ")");
}

} // namespace

CouplingReport backward_couple(const ChainModel& model, double alpha,
                               const std::vector<int>& depths, std::uint64_t seed,
                               int trials, const std::optional<NoiseSpec>& noise_spec) {
    if (depths.size() < 2) throw OutOfRange("backward_couple: need at least two depths");
    for (int d : depths)
        if (d < 0) throw OutOfRange("backward_couple: depths must be nonnegative");
    if (trials < 1) throw OutOfRange("backward_couple: trials must be >= 1");
    require_stable(model, alpha, "backward_couple");

    const int k = model.k;
    NoiseSpec spec;
    if (noise_spec) {
        spec = *noise_spec;
    } else {
        spec.iid_covariance = Eigen::MatrixXd::Identity(k, k);
    }
    Eigen::MatrixXd noise_factor;
    if (spec.iid_covariance) noise_factor = psd_factor(*spec.iid_covariance);
    const int nmax = *std::max_element(depths.begin(), depths.end());
    ChainSampler sampler(model);
    sampler.set_pi(stationary(model).pi);

    std::vector<Eigen::MatrixXd> step_mats;
    for (int i = 0; i < model.n; ++i)
        step_mats.push_back(Eigen::MatrixXd::Identity(k, k) - alpha * model.m[i]);

    CouplingReport report;
    report.depths = depths;
    report.d2.assign(depths.size() - 1, 0.0);
    report.reference_rate =
        2.0 * std::log(spectral_radius(build_first_moment_operator(model, alpha)));

    std::vector<int> states(nmax + 1);
    std::vector<Eigen::VectorXd> noise(nmax + 1, Eigen::VectorXd(k));
    std::vector<Eigen::VectorXd> endpoints(depths.size(), Eigen::VectorXd(k));
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(seed, static_cast<std::uint64_t>(trial));
        // one common-randomness realization: chain path from time -nmax and
        // the unit-Gaussian disturbances entering each step
        states[0] = sampler.initial(rng, kStationaryStart);
        for (int s = 1; s <= nmax; ++s) states[s] = sampler.step(rng, states[s - 1]);
        for (int s = 1; s <= nmax; ++s) {
            noise[s].setZero();
            if (spec.use_model_w) noise[s] += model.w[states[s]];
            if (spec.iid_covariance) {
                Eigen::VectorXd z(k);
                for (int c = 0; c < k; ++c) z(c) = rng.gaussian();
                noise[s].noalias() += noise_factor * z;
            }
        }
        for (std::size_t di = 0; di < depths.size(); ++di) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
            for (int s = nmax - depths[di]; s < nmax; ++s)
                x = step_mats[states[s]] * x + noise[s + 1];
            endpoints[di] = x;
        }
        for (std::size_t di = 0; di + 1 < depths.size(); ++di)
            report.d2[di] += (endpoints[di] - endpoints[di + 1]).squaredNorm();
    }
    for (auto& v : report.d2) v /= trials;

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int npts = 0;
    for (std::size_t di = 0; di + 1 < depths.size(); ++di) {
        if (report.d2[di] <= 1e-280) continue;
        const double xd = std::min(depths[di], depths[di + 1]);
        const double yv = std::log(report.d2[di]);
        sx += xd;
        sy += yv;
        sxx += xd * xd;
        sxy += xd * yv;
        ++npts;
    }
    report.fitted_log_slope =
        npts >= 2 ? (npts * sxy - sx * sy) / (npts * sxx - sx * sx) : 0.0;
    return report;
}

DecaySeries stationarity_convergence(const ChainModel& model, double alpha,
                                     const Eigen::VectorXd& gamma, int T, int trials,
                                     std::uint64_t seed) {
    if (gamma.size() != model.k)
        throw DimensionMismatch("stationarity_convergence: gamma must have length k");
    if (T < 1 || trials < 1)
        throw OutOfRange("stationarity_convergence: T and trials must be >= 1");
    require_stable(model, alpha, "stationarity_convergence");

    const int k = model.k;
    ChainSampler sampler(model);
    sampler.set_pi(stationary(model).pi);
    std::vector<Eigen::MatrixXd> step_mats;
    for (int i = 0; i < model.n; ++i)
        step_mats.push_back(Eigen::MatrixXd::Identity(k, k) - alpha * model.m[i]);

    DecaySeries series;
    series.mean_sq.assign(T + 1, 0.0);
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(seed, static_cast<std::uint64_t>(trial));
        int state = sampler.initial(rng, kStationaryStart);
        Eigen::VectorXd d = gamma;
        for (int t = 0; t <= T; ++t) {
            series.mean_sq[t] += d.squaredNorm();
            if (t == T) break;
            d = step_mats[state] * d;
            state = sampler.step(rng, state);
        }
    }
    for (auto& v : series.mean_sq) v /= trials;

    series.reference_rate =
        2.0 * std::log(spectral_radius(build_first_moment_operator(model, alpha)));
    int hi = T;
    while (hi > 0 && series.mean_sq[hi] <= 1e-280) --hi;
    const int lo = std::min(10, hi / 2);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int t = lo; t <= hi; ++t) {
        const double y = std::log(std::max(series.mean_sq[t], 1e-300));
        sx += t;
        sy += y;
        sxx += static_cast<double>(t) * t;
        sxy += t * y;
        ++n;
    }
    series.fitted_rate = n >= 2 ? (n * sxy - sx * sy) / (n * sxx - sx * sx) : 0.0;
    series.within_20pct =
        std::abs(series.fitted_rate - series.reference_rate) <=
        0.2 * std::abs(series.reference_rate);
    return series;
}

} // namespace specstab
