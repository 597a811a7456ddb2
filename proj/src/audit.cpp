#include "driftlab/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace driftlab {

namespace {

std::pair<double, double> mean_se(const Eigen::ArrayXd& v) {
    const double n = static_cast<double>(v.size());
    if (v.size() < 2) return {v.size() ? v(0) : 0.0, 0.0};
    const double m = v.mean();
    const double var = (v - m).square().sum() / (n - 1.0);
    return {m, std::sqrt(var / n)};
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(10);
    os << x;
    return os.str();
}

}  // namespace

bool AuditReport::all_pass() const {
    for (const auto& e : entries)
        if (!e.pass) return false;
    return true;
}

const AuditEntry& AuditReport::entry(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw std::invalid_argument("AuditReport: no entry named '" + name + "'");
}

void AuditReport::add(std::string name, double statistic, double se) {
    AuditEntry e;
    e.name = std::move(name);
    e.statistic = statistic;
    e.se = se;
    e.z = se > 0.0 ? statistic / se : (statistic == 0.0 ? 0.0 : 1e18);
    e.pass = std::abs(e.z) <= level;
    entries.push_back(std::move(e));
}

void AuditReport::sort_entries() {
    std::sort(entries.begin(), entries.end(),
              [](const AuditEntry& a, const AuditEntry& b) { return a.name < b.name; });
}

void AuditReport::merge(AuditReport&& other) {
    for (auto& e : other.entries) entries.push_back(std::move(e));
    sort_entries();
}

std::string AuditReport::to_json() const {
    nlohmann::json j;
    j["level"] = level;
    j["n_paths"] = n_paths;
    j["seed"] = seed;
    j["grid"] = grid_desc;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
        j["entries"].push_back({{"name", e.name},
                                {"statistic", e.statistic},
                                {"se", e.se},
                                {"z", e.z},
                                {"pass", e.pass}});
    return j.dump(2);
}

AuditReport increment_test(const Eigen::ArrayXXd& m_channel, const FeatureStream& features,
                           const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("increment_test: pairs must be non-empty");
    const TimeGrid& g = features.grid();
    AuditReport rep;
    rep.n_paths = static_cast<std::size_t>(m_channel.rows());
    rep.grid_desc = "m=" + std::to_string(g.size()) + ",T=" + fmt(g.horizon());

    for (const auto& [s, t] : pairs) {
        if (!(s < t)) throw std::invalid_argument("increment_test: need s < t in every pair");
        auto is = g.index_of(s), it = g.index_of(t);
        if (!is || !it)
            throw std::invalid_argument("increment_test: pair times must be grid times");
        const Eigen::ArrayXd incr = m_channel.col(static_cast<Eigen::Index>(*it)) -
                                    m_channel.col(static_cast<Eigen::Index>(*is));
        const std::string prefix = "pair(" + fmt(s) + "," + fmt(t) + ")/";

        const Eigen::ArrayXXd F = features.features_at(*is);
        const auto labels = features.labels_at(*is);
        for (Eigen::Index c = 0; c < F.cols(); ++c) {
            const Eigen::ArrayXd xi = F.col(c);
            auto [m, se] = mean_se(incr * xi);
            rep.add(prefix + labels[static_cast<std::size_t>(c)] + "/raw", m, se);
            const double sd = std::sqrt((xi - xi.mean()).square().sum() /
                                        std::max<double>(1.0, double(xi.size() - 1)));
            const Eigen::ArrayXd clipped = xi.min(3.0 * sd).max(-3.0 * sd);
            auto [mc, sec] = mean_se(incr * clipped);
            rep.add(prefix + labels[static_cast<std::size_t>(c)] + "/clip", mc, sec);
        }
        auto [m1, se1] = mean_se(incr);
        rep.add(prefix + "const", m1, se1);
    }
    rep.sort_entries();
    return rep;
}

AuditReport qv_check(const TimeGrid& grid, const Eigen::ArrayXXd& channel,
                     const std::vector<double>& checkpoints) {
    if (channel.cols() < 2) throw std::invalid_argument("qv_check: need at least 2 grid points");
    AuditReport rep;
    rep.n_paths = static_cast<std::size_t>(channel.rows());
    rep.grid_desc = "m=" + std::to_string(grid.size()) + ",T=" + fmt(grid.horizon());
    const Eigen::ArrayXXd qv = quadratic_variation(channel);
    for (double t : checkpoints) {
        auto idx = grid.index_of(t);
        if (!idx) throw std::invalid_argument("qv_check: checkpoint must be a grid time");
        const Eigen::ArrayXd bracket = qv.col(static_cast<Eigen::Index>(*idx));
        auto [m, se] = mean_se(bracket);
        if (se == 0.0 && bracket.size() > 1) {
            // Deterministic path family: flag as degenerate.
            rep.add("qv@" + fmt(t) + "/degenerate", m - t, 0.0);
            continue;
        }
        rep.add("qv@" + fmt(t), m - t, se);
    }
    rep.sort_entries();
    return rep;
}

uint64_t array_hash(const Eigen::ArrayXXd& a) {
    uint64_t h = 0xcbf29ce484222325ull;
    const double* p = a.data();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        uint64_t bits;
        std::memcpy(&bits, p + i, sizeof(bits));
        h ^= bits;
        h *= 0x100000001b3ull;
    }
    return h;
}

DeflatorPath deflator(const Eigen::ArrayXXd& loading, const Eigen::ArrayXXd& m_tilde,
                      const Eigen::ArrayXXd& qv, std::shared_ptr<const TimeGrid> grid) {
    if (loading.rows() != m_tilde.rows() || loading.cols() + 1 != m_tilde.cols() ||
        qv.rows() != m_tilde.rows() || qv.cols() != m_tilde.cols())
        throw std::invalid_argument("deflator: length mismatch");
    Eigen::ArrayXXd z(m_tilde.rows(), m_tilde.cols());
    z.col(0).setOnes();
    Eigen::ArrayXd logz = Eigen::ArrayXd::Zero(m_tilde.rows());
    for (Eigen::Index j = 1; j < m_tilde.cols(); ++j) {
        logz += loading.col(j - 1) * (m_tilde.col(j) - m_tilde.col(j - 1)) -
                0.5 * loading.col(j - 1).square() * (qv.col(j) - qv.col(j - 1));
        z.col(j) = logz.exp();
    }
    DeflatorPath out;
    out.grid = std::move(grid);
    out.z = std::move(z);
    out.construction_log = "log-scheme; loading on M~; qv compensator";
    out.loading_hash = array_hash(loading);
    return out;
}

SamplePath deflator(const std::vector<double>& loading, const SamplePath& m_tilde,
                    const SamplePath& qv) {
    if (qv.kind != PathKind::qv) throw std::invalid_argument("deflator: qv path required");
    const std::size_t n = m_tilde.values.size();
    if (loading.size() + 1 != n || qv.values.size() != n)
        throw std::invalid_argument("deflator: length mismatch");
    std::vector<double> z(n);
    z[0] = 1.0;
    double logz = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        const double dm = m_tilde.values[i] - m_tilde.values[i - 1];
        const double dq = qv.values[i] - qv.values[i - 1];
        logz += loading[i - 1] * dm - 0.5 * loading[i - 1] * loading[i - 1] * dq;
        z[i] = std::exp(logz);
    }
    return SamplePath(m_tilde.grid, std::move(z), PathKind::custom);
}

AuditReport deflator_audit(const DeflatorPath& z, const Eigen::ArrayXXd& m,
                           const Eigen::ArrayXXd& loading, const Eigen::ArrayXXd& qv,
                           const FeatureStream& features,
                           const std::vector<std::pair<double, double>>& pairs) {
    if (array_hash(loading) != z.loading_hash)
        throw std::invalid_argument("deflator_audit: deflator was built from a different loading");
    if (m.rows() != z.z.rows() || m.cols() < z.z.cols())
        throw std::invalid_argument("deflator_audit: channel shape mismatch");

    const Eigen::Index cols = z.z.cols();
    const Eigen::ArrayXXd zm = z.z * m.leftCols(cols);

    AuditReport rep = increment_test(zm, features, pairs);
    for (auto& e : rep.entries) e.name = "ZM/" + e.name;

    // Bracket identity: realized dZ dM against l Z dqv, slope z-scored
    // against 1 with per-path cluster SE.
    Eigen::ArrayXd sxy = Eigen::ArrayXd::Zero(m.rows());
    Eigen::ArrayXd sxx = Eigen::ArrayXd::Zero(m.rows());
    for (Eigen::Index j = 0; j + 1 < cols; ++j) {
        const Eigen::ArrayXd x =
            loading.col(j) * z.z.col(j) * (qv.col(j + 1) - qv.col(j));
        const Eigen::ArrayXd y =
            (z.z.col(j + 1) - z.z.col(j)) * (m.col(j + 1) - m.col(j));
        sxy += x * y;
        sxx += x * x;
    }
    if (sxx.sum() > 0.0) {
        const double slope = sxy.sum() / sxx.sum();
        const Eigen::ArrayXd infl = sxy - slope * sxx;
        const double n = static_cast<double>(m.rows());
        const double se_slope =
            std::sqrt((infl - infl.mean()).square().sum() / (n - 1.0) * n) / sxx.sum();
        rep.add("bracket_slope_minus_1", slope - 1.0, se_slope);
    } else {
        // No bracket exposure (zero loading): the identity holds trivially.
        rep.add("bracket_slope_minus_1", 0.0, 0.0);
    }

    // Positivity census: structural, not statistical.
    const std::size_t violations = static_cast<std::size_t>((z.z <= 0.0).count());
    rep.add("positivity_violations", static_cast<double>(violations), 0.0);

    rep.sort_entries();
    rep.n_paths = static_cast<std::size_t>(m.rows());
    return rep;
}

}  // namespace driftlab
