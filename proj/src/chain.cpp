#include "specstab/chain.hpp"

#include "specstab/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

namespace specstab {

namespace {

constexpr double kRowSumTol = 1e-12;

bool all_finite(const Eigen::MatrixXd& A) {
    return A.allFinite();
}

// Row-bitset support matrix for cheap boolean powers.
struct SupportMatrix {
    int n;
    int words;
    std::vector<std::uint64_t> rows;  // n * words

    explicit SupportMatrix(const Eigen::MatrixXd& P)
        : n(static_cast<int>(P.rows())), words((n + 63) / 64), rows(n * words, 0) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (P(i, j) > 0.0) rows[i * words + j / 64] |= 1ull << (j % 64);
    }

    bool all_set() const {
        const std::uint64_t tail =
            (n % 64) ? ((1ull << (n % 64)) - 1) : ~0ull;
        for (int i = 0; i < n; ++i) {
            for (int w = 0; w + 1 < words; ++w)
                if (rows[i * words + w] != ~0ull) return false;
            if (rows[i * words + words - 1] != tail) return false;
        }
        return true;
    }

    SupportMatrix times(const SupportMatrix& other) const {
        SupportMatrix out(*this);
        std::fill(out.rows.begin(), out.rows.end(), 0ull);
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < n; ++l)
                if (rows[i * words + l / 64] & (1ull << (l % 64)))
                    for (int w = 0; w < words; ++w)
                        out.rows[i * words + w] |= other.rows[l * words + w];
        return out;
    }
};

// Smallest t with P^t entrywise positive, scanning up to a work cap.
// Returns -1 when not found within the cap.
int primitivity_index(const Eigen::MatrixXd& P, long long tmax) {
    const SupportMatrix base(P);
    SupportMatrix power = base;
    for (long long t = 1; t <= tmax; ++t) {
        if (power.all_set()) return static_cast<int>(t);
        power = power.times(base);
    }
    return -1;
}

// Strong connectivity of the support digraph.
bool strongly_connected(const Eigen::MatrixXd& P) {
    const int n = static_cast<int>(P.rows());
    auto reach_all = [&](bool transpose) {
        std::vector<char> seen(n, 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (int j = 0; j < n; ++j) {
                const double p = transpose ? P(j, v) : P(v, j);
                if (p > 0.0 && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    };
    return reach_all(false) && reach_all(true);
}

// For a strongly connected support digraph: aperiodic iff the gcd of
// (level[u] + 1 - level[v]) over edges u->v is 1 (BFS levels from node 0).
bool aperiodic_when_connected(const Eigen::MatrixXd& P) {
    const int n = static_cast<int>(P.rows());
    std::vector<int> level(n, -1);
    std::vector<int> queue{0};
    level[0] = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const int u = queue[head];
        for (int v = 0; v < n; ++v)
            if (P(u, v) > 0.0 && level[v] < 0) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
    }
    long long g = 0;
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v)
            if (P(u, v) > 0.0) g = std::gcd(g, static_cast<long long>(level[u]) + 1 - level[v]);
    return g == 1;
}

} // namespace

const char* to_string(ChainIssue issue) {
    switch (issue) {
        case ChainIssue::RowSumDefect: return "RowSumDefect";
        case ChainIssue::NegativeEntry: return "NegativeEntry";
        case ChainIssue::NonFiniteGain: return "NonFiniteGain";
        case ChainIssue::NonFiniteDisturbance: return "NonFiniteDisturbance";
        case ChainIssue::Reducible: return "Reducible";
        case ChainIssue::Periodic: return "Periodic";
    }
    return "?";
}

bool ValidationReport::has(ChainIssue issue) const {
    return std::find(issues.begin(), issues.end(), issue) != issues.end();
}

ValidationReport validate_chain(const ChainModel& model) {
    if (model.n <= 0 || model.k <= 0)
        throw DimensionMismatch("chain: n and k must be positive");
    if (model.P.rows() != model.n || model.P.cols() != model.n)
        throw DimensionMismatch("chain: P must be n x n");
    if (static_cast<int>(model.m.size()) != model.n)
        throw DimensionMismatch("chain: need one gain matrix per state");
    if (static_cast<int>(model.w.size()) != model.n)
        throw DimensionMismatch("chain: need one disturbance vector per state");
    for (const auto& mi : model.m)
        if (mi.rows() != model.k || mi.cols() != model.k)
            throw DimensionMismatch("chain: every m[i] must be k x k");
    for (const auto& wi : model.w)
        if (wi.size() != model.k)
            throw DimensionMismatch("chain: every w[i] must have length k");
    if (!model.labels.empty() && static_cast<int>(model.labels.size()) != model.n)
        throw DimensionMismatch("chain: labels must be empty or length n");

    ValidationReport report;
    if ((model.P.array() < 0.0).any())
        report.issues.push_back(ChainIssue::NegativeEntry);
    for (int i = 0; i < model.n; ++i)
        report.max_row_sum_defect =
            std::max(report.max_row_sum_defect, std::abs(model.P.row(i).sum() - 1.0));
    if (report.max_row_sum_defect > kRowSumTol)
        report.issues.push_back(ChainIssue::RowSumDefect);

    for (const auto& mi : model.m) report.gains_finite = report.gains_finite && all_finite(mi);
    for (const auto& wi : model.w)
        report.disturbances_finite = report.disturbances_finite && wi.allFinite();
    if (!report.gains_finite) report.issues.push_back(ChainIssue::NonFiniteGain);
    if (!report.disturbances_finite) report.issues.push_back(ChainIssue::NonFiniteDisturbance);

    if (!strongly_connected(model.P)) {
        report.issues.push_back(ChainIssue::Reducible);
    } else if (!aperiodic_when_connected(model.P)) {
        report.issues.push_back(ChainIssue::Periodic);
    } else {
        // exact smallest positive power, capped so huge slow-mixing chains
        // cannot stall validation (the graph tests above already decided
        // irreducibility and aperiodicity)
        const long long cap =
            std::min<long long>(static_cast<long long>(model.n) * model.n, 20000);
        report.mixing_time = primitivity_index(model.P, cap);
    }
    return report;
}

StationaryInfo stationary(const ChainModel& model) {
    const int n = model.n;
    // Augmented least squares: rows of (P^T - I) plus the normalization row.
    Eigen::MatrixXd A(n + 1, n);
    A.topRows(n) = model.P.transpose() - Eigen::MatrixXd::Identity(n, n);
    A.bottomRows(1).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
    b(n) = 1.0;
    Eigen::VectorXd pi = A.colPivHouseholderQr().solve(b);

    StationaryInfo info;
    info.pi = pi;
    const Eigen::MatrixXd core =
        Eigen::MatrixXd::Identity(n, n) - model.P + Eigen::VectorXd::Ones(n) * pi.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(core);
    info.Z = lu.solve(Eigen::MatrixXd::Identity(n, n));
    const double residual = (info.Z * core - Eigen::MatrixXd::Identity(n, n))
                                .cwiseAbs()
                                .maxCoeff();
    if (!info.Z.allFinite() || residual > 1e-9)
        throw SingularSystem("stationary: I - P + 1 pi^T is numerically singular");

    info.Mbar = Eigen::MatrixXd::Zero(model.k, model.k);
    info.Wbar = Eigen::VectorXd::Zero(model.k);
    for (int i = 0; i < n; ++i) {
        info.Mbar += pi(i) * model.m[i];
        info.Wbar += pi(i) * model.w[i];
    }
    return info;
}

ChainModel build_shift_register(int L) {
    if (L < 1 || L > 12)
        throw OutOfRange("build_shift_register: length must be in [1, 12]");
    const int n = 1 << L;
    ChainModel model;
    model.n = n;
    model.k = L;
    model.P = Eigen::MatrixXd::Zero(n, n);
    model.m.reserve(n);
    model.w.assign(n, Eigen::VectorXd::Zero(L));
    model.labels.reserve(n);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd phi(L);
        std::string label;
        for (int c = 0; c < L; ++c) {
            const bool minus = (i >> (L - 1 - c)) & 1;
            phi(c) = minus ? -1.0 : 1.0;
            label += minus ? '-' : '+';
        }
        model.m.push_back(phi * phi.transpose());
        model.labels.push_back(label);
        for (int sbit = 0; sbit < 2; ++sbit) {
            const int j = (sbit << (L - 1)) | (i >> 1);
            model.P(i, j) += 0.5;
        }
    }
    return model;
}

namespace {

ChainModel chain_from_json(const nlohmann::json& doc) {
    if (doc.contains("builtin")) {
        const auto& b = doc.at("builtin");
        const std::string type = b.at("type").get<std::string>();
        if (type == "shift_register")
            return build_shift_register(b.at("length").get<int>());
        throw ParseError("chain config: unknown builtin type '" + type + "'");
    }

    ChainModel model;
    try {
        model.k = doc.at("k").get<int>();
        const auto& P = doc.at("P");
        model.n = static_cast<int>(P.size());
        if (model.n <= 0 || model.k <= 0)
            throw ParseError("chain config: k and the row count of P must be positive");
        model.P.resize(model.n, model.n);
        for (int i = 0; i < model.n; ++i) {
            const auto& row = P.at(i);
            if (static_cast<int>(row.size()) != model.n)
                throw ParseError("chain config: P row " + std::to_string(i) +
                                 " has wrong length");
            for (int j = 0; j < model.n; ++j) model.P(i, j) = row.at(j).get<double>();
        }
        const auto& ms = doc.at("m");
        if (static_cast<int>(ms.size()) != model.n)
            throw ParseError("chain config: m must list one k*k row-major array per state");
        for (int i = 0; i < model.n; ++i) {
            const auto& flat = ms.at(i);
            if (static_cast<int>(flat.size()) != model.k * model.k)
                throw ParseError("chain config: m[" + std::to_string(i) +
                                 "] must have k*k entries");
            Eigen::MatrixXd mi(model.k, model.k);
            for (int r = 0; r < model.k; ++r)
                for (int c = 0; c < model.k; ++c)
                    mi(r, c) = flat.at(r * model.k + c).get<double>();
            model.m.push_back(mi);
        }
        if (doc.contains("w")) {
            const auto& ws = doc.at("w");
            if (static_cast<int>(ws.size()) != model.n)
                throw ParseError("chain config: w must list one k-vector per state");
            for (int i = 0; i < model.n; ++i) {
                const auto& wi = ws.at(i);
                if (static_cast<int>(wi.size()) != model.k)
                    throw ParseError("chain config: w[" + std::to_string(i) +
                                     "] must have k entries");
                Eigen::VectorXd v(model.k);
                for (int c = 0; c < model.k; ++c) v(c) = wi.at(c).get<double>();
                model.w.push_back(v);
            }
        } else {
            model.w.assign(model.n, Eigen::VectorXd::Zero(model.k));
        }
        if (doc.contains("states")) {
            for (const auto& s : doc.at("states"))
                model.labels.push_back(s.get<std::string>());
        } else {
            for (int i = 0; i < model.n; ++i) model.labels.push_back("s" + std::to_string(i));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("chain config: ") + e.what());
    }
    return model;
}

} // namespace

ChainModel parse_chain_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("chain config: ") + e.what());
    }
    ChainModel model = chain_from_json(doc);
    const ValidationReport report = validate_chain(model);
    if (!report.ok()) {
        std::ostringstream oss;
        oss << "chain config failed validation:";
        for (const auto issue : report.issues) oss << ' ' << to_string(issue);
        throw ValidationError(oss.str());
    }
    return model;
}

ChainModel load_chain(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open chain config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_chain_json(buf.str());
}

} // namespace specstab
