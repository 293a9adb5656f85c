#pragma once

// Deterministic text artifacts: 17-significant-digit CSV, JSON reports, and
// the run manifest with per-file checksums.

#include "specstab/nonlinear.hpp"
#include "specstab/operators.hpp"
#include "specstab/perturbation.hpp"
#include "specstab/sim_linear.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace specstab {

/// Round-trip formatting (printf %.17g).
std::string fmt17(double v);

std::uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

std::string spectral_report_csv(const SpectralReport& report);
std::string region_json(const std::vector<Interval>& region);
std::string trajectory_csv(const TrajectoryStats& stats, const SimConfig& cfg);
std::string coupling_csv(const CouplingReport& report);
std::string decay_csv(const DecaySeries& series);
std::string derivative_report_json(const DerivativeReport& report);
std::string scaling_table_csv(const ScalingTable& table);
std::string local_profile_csv(const LocalProfile& profile);
std::string overlay_csv(const std::vector<double>& times,
                        const std::vector<Eigen::VectorXd>& sim_path,
                        const std::vector<Eigen::VectorXd>& ode_path);

struct ManifestEntry {
    std::string file;
    std::string checksum;  ///< fnv1a64 of the file bytes, hex
};

struct RunManifest {
    std::string subcommand;
    std::string config;           ///< path or builtin descriptor
    std::string seed;             ///< decimal, or "-" when not applicable
    std::string output_directory;
    std::string tool_version;
    std::string rng_id;
    double duration_seconds = 0.0;
    std::vector<ManifestEntry> outputs;
};

std::string manifest_json(const RunManifest& manifest);

} // namespace specstab
