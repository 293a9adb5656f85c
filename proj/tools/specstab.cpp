// Command-line front end: wires chain configs to the analysis modules and
// writes CSV/JSON artifacts plus a run manifest.  Exit codes: 0 success,
// 2 configuration error, 3 numerical failure, 4 theory discrepancy
// (simulation diverged at a gain the spectral analysis predicts stable).

#include "specstab/chain.hpp"
#include "specstab/errors.hpp"
#include "specstab/nonlinear.hpp"
#include "specstab/operators.hpp"
#include "specstab/perturbation.hpp"
#include "specstab/report_io.hpp"
#include "specstab/rng.hpp"
#include "specstab/sim_linear.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitDiscrepancy = 4;

using namespace specstab;

std::string default_out_dir() {
    if (const char* env = std::getenv("SPECSTAB_OUT")) return env;
    return ".";
}

double parse_double(const std::string& tok) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw ParseError("bad number '" + tok + "'");
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "'");
    }
}

int parse_int(const std::string& tok) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw ParseError("bad integer '" + tok + "'");
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad integer '" + tok + "'");
    }
}

ChainModel resolve_chain(const std::string& builtin, const std::string& config_path) {
    if (!builtin.empty() && !config_path.empty())
        throw ParseError("give either --builtin or --config, not both");
    if (!builtin.empty()) {
        const auto colon = builtin.find(':');
        const std::string name = builtin.substr(0, colon);
        if (name != "shift-register" && name != "shift_register")
            throw ParseError("unknown builtin '" + name + "'");
        if (colon == std::string::npos)
            throw ParseError("builtin needs a length, e.g. shift-register:2");
        const int L = parse_int(builtin.substr(colon + 1));
        return build_shift_register(L);
    }
    if (config_path.empty()) throw ParseError("a chain is required (--builtin or --config)");
    return load_chain(config_path);
}

std::vector<double> parse_grid(const std::string& spec) {
    // start:stop:step with inclusive endpoints (1e-12 slack)
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ParseError("grid must be start:stop:step");
    const double start = parse_double(spec.substr(0, c1));
    const double stop = parse_double(spec.substr(c1 + 1, c2 - c1 - 1));
    const double step = parse_double(spec.substr(c2 + 1));
    if (step <= 0.0 || stop < start) throw ParseError("grid must satisfy stop >= start, step > 0");
    std::vector<double> grid;
    for (double a = start; a <= stop + 1e-12; a += step) grid.push_back(std::min(a, stop));
    if (grid.empty() || grid.back() < stop - 1e-12) grid.push_back(stop);
    return grid;
}

std::vector<double> parse_list(const std::string& spec) {
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const auto comma = spec.find(',', pos);
        const std::string tok =
            spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) vals.push_back(parse_double(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (vals.empty()) throw ParseError("empty list");
    return vals;
}

std::vector<int> parse_int_list(const std::string& spec) {
    std::vector<int> out;
    for (double v : parse_list(spec)) out.push_back(static_cast<int>(v));
    return out;
}

struct ArtifactWriter {
    std::string dir;
    RunManifest manifest;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    ArtifactWriter(std::string subcommand, std::string config, std::string seed,
                   std::string out_dir)
        : dir(std::move(out_dir)) {
        std::filesystem::create_directories(dir);
        manifest.subcommand = std::move(subcommand);
        manifest.config = std::move(config);
        manifest.seed = std::move(seed);
        manifest.output_directory = dir;
        manifest.tool_version = kVersion;
        manifest.rng_id = Rng::kAlgorithmId;
    }

    void add(const std::string& name, const std::string& content) {
        write_text_file(dir + "/" + name, content);
        manifest.outputs.push_back({name, fnv1a64_hex(content)});
    }

    void finish() {
        manifest.duration_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_text_file(dir + "/manifest.json", manifest_json(manifest));
    }
};

int cmd_spectrum(const std::string& builtin, const std::string& config,
                 const std::string& grid_spec, const std::string& out_dir) {
    const ChainModel model = resolve_chain(builtin, config);
    const std::vector<double> grid = parse_grid(grid_spec);
    ArtifactWriter writer("spectrum", builtin.empty() ? config : builtin, "-", out_dir);
    const SpectralReport first = scan_curve(model, OperatorKind::FirstMoment, grid);
    const SpectralReport second = scan_curve(model, OperatorKind::SecondMoment, grid);
    writer.add("spectrum_first_moment.csv", spectral_report_csv(first));
    writer.add("spectrum_second_moment.csv", spectral_report_csv(second));
    writer.add("region_O.json", region_json(second.region_O));
    writer.finish();
    bool flagged = false;
    for (const auto& pt : first.points) flagged = flagged || !pt.solver_ok;
    for (const auto& pt : second.points) flagged = flagged || !pt.solver_ok;
    if (flagged) {
        std::cerr << "spectrum: some grid points flagged (eigensolve failure)\n";
        return kExitNumerical;
    }
    return kExitOk;
}

int cmd_derivatives(const std::string& builtin, const std::string& config,
                    const std::string& out_dir) {
    const ChainModel model = resolve_chain(builtin, config);
    const StationaryInfo info = stationary(model);
    ArtifactWriter writer("derivatives", builtin.empty() ? config : builtin, "-", out_dir);
    const DerivativeReport report = derivative_report(model, info);
    writer.add("derivatives.json", derivative_report_json(report));
    writer.finish();
    return kExitOk;
}

NoiseSpec parse_noise(const std::string& spec, int k) {
    NoiseSpec noise;
    if (spec.empty() || spec == "off") {
        noise.iid_covariance.reset();
        return noise;
    }
    if (spec.rfind("iid:", 0) == 0) {
        const double var = parse_double(spec.substr(4));
        if (var < 0.0) throw ParseError("--noise iid variance must be >= 0");
        noise.iid_covariance = var * Eigen::MatrixXd::Identity(k, k);
        return noise;
    }
    throw ParseError("--noise must be 'off' or 'iid:<variance>'");
}

int cmd_simulate(const std::string& builtin, const std::string& config, double alpha, int T,
                 int trials, std::uint64_t seed, const std::string& noise_spec,
                 const std::string& x0_spec, const std::string& phi0_spec, int threads,
                 const std::string& out_dir) {
    const ChainModel model = resolve_chain(builtin, config);
    SimConfig cfg;
    cfg.alpha = alpha;
    cfg.T = T;
    cfg.trials = trials;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.noise = parse_noise(noise_spec, model.k);
    if (!x0_spec.empty()) {
        const auto vals = parse_list(x0_spec);
        cfg.x0 = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
    }
    if (!phi0_spec.empty() && phi0_spec != "stationary") cfg.phi0 = parse_int(phi0_spec);

    ArtifactWriter writer("simulate", builtin.empty() ? config : builtin,
                          std::to_string(seed), out_dir);
    const TrajectoryStats stats = simulate_linear(model, cfg);
    writer.add("trajectory.csv", trajectory_csv(stats, cfg));
    writer.finish();

    const double xi_q = spectral_radius(build_second_moment_operator(model, alpha));
    if (xi_q < 1.0 && stats.classification == Classification::Diverged) {
        std::cerr << "simulate: diverged although the second-moment radius is " << xi_q
                  << " < 1\n";
        return kExitDiscrepancy;
    }
    return kExitOk;
}

int cmd_couple(const std::string& builtin, const std::string& config, double alpha,
               const std::string& depths_spec, int trials, std::uint64_t seed, int T,
               const std::string& gamma_spec, const std::string& out_dir) {
    const ChainModel model = resolve_chain(builtin, config);
    ArtifactWriter writer("couple", builtin.empty() ? config : builtin,
                          std::to_string(seed), out_dir);
    const CouplingReport coupling =
        backward_couple(model, alpha, parse_int_list(depths_spec), seed, trials);
    writer.add("coupling.csv", coupling_csv(coupling));
    Eigen::VectorXd gamma = Eigen::VectorXd::Ones(model.k);
    if (!gamma_spec.empty()) {
        const auto vals = parse_list(gamma_spec);
        gamma = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
    }
    const DecaySeries decay = stationarity_convergence(model, alpha, gamma, T, trials, seed);
    writer.add("stationarity.csv", decay_csv(decay));
    writer.finish();
    return kExitOk;
}

int cmd_nonlinear(const std::string& fixture, const std::string& alphas_spec, int T,
                  int trials, std::uint64_t seed, double sens_alpha,
                  const std::string& out_dir) {
    NonlinearProblem problem;
    if (fixture == "tanh") {
        problem = tanh_problem();
    } else if (fixture == "tanh2") {
        problem = tanh_vector_problem();
    } else if (fixture.rfind("linear-sr:", 0) == 0) {
        problem = linear_problem(build_shift_register(parse_int(fixture.substr(10))));
    } else {
        throw ParseError("unknown fixture '" + fixture +
                         "' (expected tanh, tanh2, or linear-sr:<L>)");
    }
    ArtifactWriter writer("nonlinear", fixture, std::to_string(seed), out_dir);
    const ScalingTable table =
        alpha_scaling_experiment(problem, parse_list(alphas_spec), T, trials, seed);
    writer.add("scaling.csv", scaling_table_csv(table));

    // diagnostic overlay: one simulated path against the averaged flow on
    // the grid T_j = j * alpha
    const EquilibriumInfo eq =
        solve_equilibrium(problem, Eigen::VectorXd::Zero(problem.chain.k));
    const double alpha0 = parse_list(alphas_spec).front();
    const int overlay_steps = std::min(T, 400);
    const Eigen::VectorXd start =
        eq.xstar + Eigen::VectorXd::Ones(problem.chain.k);
    std::vector<double> times;
    std::vector<Eigen::VectorXd> sim_path;
    {
        Rng rng(seed, 0);
        std::vector<Eigen::VectorXd> cum;
        for (int i = 0; i < problem.chain.n; ++i) {
            Eigen::VectorXd row(problem.chain.n);
            double acc = 0.0;
            for (int j = 0; j < problem.chain.n; ++j) {
                acc += problem.chain.P(i, j);
                row(j) = acc;
            }
            cum.push_back(row);
        }
        Eigen::VectorXd cpi(problem.stat.pi.size());
        double acc = 0.0;
        for (int i = 0; i < problem.stat.pi.size(); ++i) {
            acc += problem.stat.pi(i);
            cpi(i) = acc;
        }
        int state = rng.sample_cumulative(cpi, problem.chain.n);
        Eigen::VectorXd x = start;
        for (int t = 0; t <= overlay_steps; ++t) {
            times.push_back(t * alpha0);
            sim_path.push_back(x);
            if (t == overlay_steps) break;
            state = rng.sample_cumulative(cum[state], problem.chain.n);
            Eigen::VectorXd z(problem.chain.k);
            for (int c = 0; c < problem.chain.k; ++c) z(c) = rng.gaussian();
            x -= alpha0 * (problem.field(x, state) + z);
        }
    }
    const OdeTrajectory ode =
        integrate_ode(problem, start, overlay_steps * alpha0, alpha0);
    std::vector<Eigen::VectorXd> ode_path;
    for (std::size_t i = 0; i < times.size() && i < ode.values.size(); ++i)
        ode_path.push_back(ode.values[i]);
    while (ode_path.size() < times.size()) ode_path.push_back(ode.values.back());
    writer.add("overlay.csv", overlay_csv(times, sim_path, ode_path));

    // sensitivity exponent at the requested (or smallest) gain
    SimConfig scfg;
    scfg.alpha = sens_alpha > 0.0 ? sens_alpha : alpha0;
    scfg.T = std::min(T, 4000);
    scfg.trials = std::min(trials, 64);
    scfg.seed = seed;
    scfg.x0 = eq.xstar;
    scfg.noise.iid_covariance =
        Eigen::MatrixXd::Identity(problem.chain.k, problem.chain.k);
    const SensitivityReport sens = simulate_sensitivity(problem, scfg);
    std::ostringstream sens_txt;
    sens_txt << "# ode_convention=\"" << kOdeConvention << "\"\n"
             << "alpha,lyapunov_exponent,std_error,negative\n"
             << fmt17(scfg.alpha) << ',' << fmt17(sens.lyapunov_exponent) << ','
             << fmt17(sens.std_error) << ',' << (sens.negative ? 1 : 0) << '\n';
    writer.add("sensitivity.csv", sens_txt.str());
    writer.finish();
    return table.band_ok ? kExitOk : kExitDiscrepancy;
}

int cmd_reproduce_figures(double alpha_max, double step, const std::string& out_dir) {
    ArtifactWriter writer("reproduce-figures", "builtin", "-", out_dir);
    std::vector<double> grid;
    for (double a = 0.0; a <= alpha_max + 1e-12; a += step)
        grid.push_back(std::min(a, alpha_max));

    const ChainModel sr2 = build_shift_register(2);
    const ChainModel sr3 = build_shift_register(3);
    const SpectralReport lambda2 = scan_curve(sr2, OperatorKind::FirstMoment, grid);
    const SpectralReport lambda3 = scan_curve(sr3, OperatorKind::FirstMoment, grid);
    const SpectralReport eta2 = scan_curve(sr2, OperatorKind::SecondMoment, grid);
    writer.add("lambda_sr2.csv", spectral_report_csv(lambda2));
    writer.add("lambda_sr3.csv", spectral_report_csv(lambda3));
    writer.add("eta_sr2.csv", spectral_report_csv(eta2));

    auto segments_json = [](const SpectralReport& report, int degree) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& fit : fit_branch_segments(report, degree)) {
            nlohmann::ordered_json seg;
            seg["alpha_lo"] = fit.alpha_lo;
            seg["alpha_hi"] = fit.alpha_hi;
            seg["coeffs"] = fit.coeffs;
            seg["max_residual"] = fit.max_residual;
            seg["points"] = fit.points;
            arr.push_back(seg);
        }
        return arr;
    };
    nlohmann::ordered_json doc;
    doc["lambda_sr2_segments_deg1"] = segments_json(lambda2, 1);
    doc["lambda_sr3_segments_deg1"] = segments_json(lambda3, 1);
    doc["eta_sr2_segments_deg2"] = segments_json(eta2, 2);
    writer.add("segments.json", doc.dump(2) + "\n");
    writer.finish();
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral stability analysis for Markov-modulated gain recursions"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string builtin, config, grid = "0:1:0.01", out_dir = default_out_dir();
    std::string noise = "off", x0, phi0 = "stationary", depths = "8,16,32,64";
    std::string fixture = "tanh", alphas = "0.02,0.04,0.08", gamma;
    double alpha = 0.1, alpha_max = 3.0, step = 0.01, sens_alpha = 0.0;
    int T = 2000, trials = 1000, threads = 1;
    std::uint64_t seed = 0;

    auto add_chain_opts = [&](CLI::App* cmd) {
        cmd->add_option("--builtin", builtin, "builtin chain, e.g. shift-register:2");
        cmd->add_option("--config", config, "chain config JSON path");
        cmd->add_option("--out", out_dir, "output directory");
    };

    CLI::App* spectrum = app.add_subcommand("spectrum", "radius curves and stability region");
    add_chain_opts(spectrum);
    spectrum->add_option("--alpha", grid, "gain grid start:stop:step");

    CLI::App* derivatives = app.add_subcommand("derivatives", "gain-derivative report");
    add_chain_opts(derivatives);

    CLI::App* simulate = app.add_subcommand("simulate", "second-moment trajectories");
    add_chain_opts(simulate);
    simulate->add_option("--alpha", alpha, "gain");
    simulate->add_option("--T", T, "horizon");
    simulate->add_option("--trials", trials);
    simulate->add_option("--seed", seed)->required();
    simulate->add_option("--noise", noise, "off or iid:<variance>");
    simulate->add_option("--x0", x0, "initial vector, comma separated");
    simulate->add_option("--phi0", phi0, "initial state index or 'stationary'");
    simulate->add_option("--threads", threads);

    CLI::App* couple = app.add_subcommand("couple", "backward coupling + stationarity decay");
    add_chain_opts(couple);
    couple->add_option("--alpha", alpha, "gain (must be stable)");
    couple->add_option("--depths", depths, "comma separated depths");
    couple->add_option("--trials", trials);
    couple->add_option("--T", T, "stationarity horizon");
    couple->add_option("--gamma", gamma, "initial offset, comma separated");
    couple->add_option("--seed", seed)->required();

    CLI::App* nonlinear = app.add_subcommand("nonlinear", "nonlinear scaling experiments");
    nonlinear->add_option("--fixture", fixture, "tanh, tanh2, or linear-sr:<L>");
    nonlinear->add_option("--alphas", alphas, "comma separated gains");
    nonlinear->add_option("--T", T);
    nonlinear->add_option("--trials", trials);
    nonlinear->add_option("--seed", seed)->required();
    nonlinear->add_option("--sens-alpha", sens_alpha, "gain for the sensitivity exponent");
    nonlinear->add_option("--out", out_dir, "output directory");

    CLI::App* figures = app.add_subcommand("reproduce-figures", "builtin curve artifacts");
    figures->add_option("--alpha-max", alpha_max);
    figures->add_option("--step", step);
    figures->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (spectrum->parsed()) return cmd_spectrum(builtin, config, grid, out_dir);
        if (derivatives->parsed()) return cmd_derivatives(builtin, config, out_dir);
        if (simulate->parsed())
            return cmd_simulate(builtin, config, alpha, T, trials, seed, noise, x0, phi0,
                                threads, out_dir);
        if (couple->parsed())
            return cmd_couple(builtin, config, alpha, depths, trials, seed, T, gamma, out_dir);
        if (nonlinear->parsed())
            return cmd_nonlinear(fixture, alphas, T, trials, seed, sens_alpha, out_dir);
        if (figures->parsed()) return cmd_reproduce_figures(alpha_max, step, out_dir);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const OutOfRange& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DimensionMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitConfig;
}
