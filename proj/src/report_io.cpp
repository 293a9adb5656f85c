#include "specstab/report_io.hpp"

#include "specstab/errors.hpp"
#include "specstab/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace specstab {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json matrix_json(const Eigen::MatrixXd& M) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(row);
    }
    return rows;
}

ordered_json vector_json(const Eigen::VectorXd& v) {
    ordered_json out = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

} // namespace

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw Error("write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string spectral_report_csv(const SpectralReport& report) {
    std::ostringstream out;
    out << "alpha,xi,lambda_re,lambda_im,is_real,branch_id\n";
    for (const auto& pt : report.points) {
        out << fmt17(pt.alpha) << ',' << fmt17(pt.xi) << ',' << fmt17(pt.lambda.real())
            << ',' << fmt17(pt.lambda.imag()) << ',' << (pt.is_real ? 1 : 0) << ','
            << pt.branch_id << '\n';
    }
    return out.str();
}

std::string region_json(const std::vector<Interval>& region) {
    ordered_json arr = ordered_json::array();
    for (const auto& iv : region) arr.push_back({iv.lo, iv.hi});
    return arr.dump() + "\n";
}

std::string trajectory_csv(const TrajectoryStats& stats, const SimConfig& cfg) {
    ordered_json meta;
    meta["seed"] = cfg.seed;
    meta["trials"] = cfg.trials;
    meta["alpha"] = cfg.alpha;
    meta["classification"] = to_string(stats.classification);
    if (stats.sigma2_hat)
        meta["sigma2_hat"] = *stats.sigma2_hat;
    else
        meta["sigma2_hat"] = nullptr;
    meta["tail_slope"] = stats.tail_slope;
    meta["overflowed"] = stats.overflowed;
    meta["rng"] = Rng::kAlgorithmId;

    std::ostringstream out;
    out << "# " << meta.dump() << "\n";
    out << "t,m2,ci\n";
    for (std::size_t t = 0; t < stats.m2.size(); ++t)
        out << t << ',' << fmt17(stats.m2[t]) << ',' << fmt17(stats.ci[t]) << '\n';
    return out.str();
}

std::string coupling_csv(const CouplingReport& report) {
    std::ostringstream out;
    out << "# fitted_log_slope=" << fmt17(report.fitted_log_slope)
        << " reference_rate=" << fmt17(report.reference_rate) << "\n";
    out << "depth_lo,depth_hi,d2\n";
    for (std::size_t i = 0; i + 1 < report.depths.size(); ++i)
        out << report.depths[i] << ',' << report.depths[i + 1] << ','
            << fmt17(report.d2[i]) << '\n';
    return out.str();
}

std::string decay_csv(const DecaySeries& series) {
    std::ostringstream out;
    out << "# fitted_rate=" << fmt17(series.fitted_rate)
        << " reference_rate=" << fmt17(series.reference_rate)
        << " within_20pct=" << (series.within_20pct ? 1 : 0) << "\n";
    out << "t,mean_sq\n";
    for (std::size_t t = 0; t < series.mean_sq.size(); ++t)
        out << t << ',' << fmt17(series.mean_sq[t]) << '\n';
    return out.str();
}

std::string derivative_report_json(const DerivativeReport& report) {
    ordered_json doc;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            doc[key] = *v;
        else
            doc[key] = nullptr;
    };
    put("lambda_prime0", report.lambda_prime0);
    put("lambda_dprime0_analytic", report.lambda_dprime0_analytic);
    put("eta_prime0", report.eta_prime0);
    put("eta_dprime0_fd", report.eta_dprime0_fd);
    put("fd_lambda_prime0", report.fd_lambda_prime0);
    put("fd_lambda_dprime0", report.fd_lambda_dprime0);
    put("fd_eta_prime0", report.fd_eta_prime0);
    if (report.lambda_prime0 && report.fd_lambda_prime0)
        doc["delta_lambda_prime0"] = std::abs(*report.lambda_prime0 - *report.fd_lambda_prime0);
    if (report.lambda_dprime0_analytic && report.fd_lambda_dprime0)
        doc["delta_lambda_dprime0"] =
            std::abs(*report.lambda_dprime0_analytic - *report.fd_lambda_dprime0);
    if (report.eta_prime0 && report.fd_eta_prime0)
        doc["delta_eta_prime0"] = std::abs(*report.eta_prime0 - *report.fd_eta_prime0);
    doc["Gamma"] = report.Gamma ? matrix_json(*report.Gamma) : ordered_json(nullptr);
    doc["Sigma"] = report.Sigma ? matrix_json(*report.Sigma) : ordered_json(nullptr);
    doc["v0"] = report.v0.size() ? vector_json(report.v0) : ordered_json(nullptr);
    doc["r0"] = report.r0.size() ? vector_json(report.r0) : ordered_json(nullptr);
    doc["hypothesis_flags"] = {{"mbar_eigenvalues_real", report.mbar_real},
                               {"mbar_eigenvalues_distinct", report.mbar_distinct}};
    return doc.dump(2) + "\n";
}

std::string scaling_table_csv(const ScalingTable& table) {
    std::ostringstream out;
    out << "# delta=" << fmt17(table.delta) << " ratio_band=" << fmt17(table.ratio_band)
        << " band_ok=" << (table.band_ok ? 1 : 0) << " ode_convention=\""
        << table.ode_convention << "\"\n";
    out << "alpha,tail_mean_eps2,ratio,exceed_freq\n";
    for (const auto& row : table.rows)
        out << fmt17(row.alpha) << ',' << fmt17(row.tail_mean_eps2) << ','
            << fmt17(row.ratio) << ',' << fmt17(row.exceed_freq) << '\n';
    return out.str();
}

std::string local_profile_csv(const LocalProfile& profile) {
    std::ostringstream out;
    out << "# lambda_ok_until=" << fmt17(profile.lambda_ok_until)
        << " eta_ok_until=" << fmt17(profile.eta_ok_until)
        << " eta_dprime0_fd=" << fmt17(profile.eta_dprime0_fd)
        << " eta_third0_fd=" << fmt17(profile.eta_third0_fd) << "\n";
    out << "alpha,lambda_residual,eta_residual\n";
    for (std::size_t i = 0; i < profile.alphas.size(); ++i)
        out << fmt17(profile.alphas[i]) << ',' << fmt17(profile.lambda_residual[i]) << ','
            << fmt17(profile.eta_residual[i]) << '\n';
    return out.str();
}

std::string overlay_csv(const std::vector<double>& times,
                        const std::vector<Eigen::VectorXd>& sim_path,
                        const std::vector<Eigen::VectorXd>& ode_path) {
    std::ostringstream out;
    const int k = sim_path.empty() ? 0 : static_cast<int>(sim_path.front().size());
    out << "t";
    for (int c = 0; c < k; ++c) out << ",x" << c;
    for (int c = 0; c < k; ++c) out << ",gamma" << c;
    out << "\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
        out << fmt17(times[i]);
        for (int c = 0; c < k; ++c) out << ',' << fmt17(sim_path[i](c));
        for (int c = 0; c < k; ++c) out << ',' << fmt17(ode_path[i](c));
        out << '\n';
    }
    return out.str();
}

std::string manifest_json(const RunManifest& manifest) {
    ordered_json doc;
    doc["subcommand"] = manifest.subcommand;
    doc["config"] = manifest.config;
    doc["seed"] = manifest.seed;
    doc["output_directory"] = manifest.output_directory;
    doc["tool_version"] = manifest.tool_version;
    doc["rng"] = manifest.rng_id;
    doc["duration_seconds"] = manifest.duration_seconds;
    ordered_json outs = ordered_json::array();
    for (const auto& entry : manifest.outputs)
        outs.push_back({{"file", entry.file}, {"fnv1a64", entry.checksum}});
    doc["outputs"] = outs;
    return doc.dump(2) + "\n";
}

} // namespace specstab
