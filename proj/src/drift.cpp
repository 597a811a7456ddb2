#include "driftlab/drift.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "driftlab/errors.hpp"

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

// Mean/SE over paths not flagged excluded.
std::pair<double, double> mean_se_kept(const Eigen::ArrayXd& v,
                                       const std::vector<uint8_t>& excluded) {
    if (excluded.empty()) return mean_se(v);
    std::vector<double> kept;
    kept.reserve(static_cast<std::size_t>(v.size()));
    for (Eigen::Index p = 0; p < v.size(); ++p)
        if (!excluded[static_cast<std::size_t>(p)]) kept.push_back(v(p));
    Eigen::ArrayXd k = Eigen::Map<Eigen::ArrayXd>(kept.data(), static_cast<Eigen::Index>(kept.size()));
    return mean_se(k);
}

}  // namespace

DriftEstimate::Norms DriftEstimate::norms_on(const Eigen::ArrayXXd& qv, double t_lo,
                                             double t_hi) const {
    if (qv.cols() != static_cast<Eigen::Index>(grid->size()) || qv.rows() != alphas.rows())
        throw std::invalid_argument("DriftEstimate: qv shape mismatch");
    Eigen::ArrayXd h1p = Eigen::ArrayXd::Zero(alphas.rows());
    Eigen::ArrayXd h2p = Eigen::ArrayXd::Zero(alphas.rows());
    for (Eigen::Index j = 0; j < alphas.cols(); ++j) {
        const double t = (*grid)[static_cast<std::size_t>(j)];
        if (t < t_lo - 1e-12 || t >= t_hi - 1e-12) continue;
        const Eigen::ArrayXd dqv = qv.col(j + 1) - qv.col(j);
        h1p += alphas.col(j).abs() * dqv;
        h2p += alphas.col(j).square() * dqv;
    }
    auto [m1, s1] = mean_se_kept(h1p, excluded);
    auto [m2, s2] = mean_se_kept(h2p, excluded);
    return {m1, s1, m2, s2};
}

void DriftEstimate::compute_norms(const Eigen::ArrayXXd& qv) {
    const Norms n = norms_on(qv, 0.0, grid->horizon() + 1.0);
    h1_norm = n.h1;
    h1_se = n.h1_se;
    h2_norm_sq = n.h2;
    h2_se = n.h2_se;

    Eigen::ArrayXd h2p = Eigen::ArrayXd::Zero(alphas.rows());
    for (Eigen::Index j = 0; j < alphas.cols(); ++j)
        h2p += alphas.col(j).square() * (qv.col(j + 1) - qv.col(j));
    std::vector<double> sorted;
    sorted.reserve(static_cast<std::size_t>(h2p.size()));
    for (Eigen::Index p = 0; p < h2p.size(); ++p)
        if (excluded.empty() || !excluded[static_cast<std::size_t>(p)])
            sorted.push_back(h2p(p));
    std::sort(sorted.begin(), sorted.end());
    h2_path_quantiles.clear();
    if (!sorted.empty()) {
        for (double q : {0.05, 0.25, 0.5, 0.75, 0.95, 0.99}) {
            const std::size_t idx = std::min(
                sorted.size() - 1,
                static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1) + 0.5));
            h2_path_quantiles.emplace_back(q, sorted[idx]);
        }
    }
}

std::pair<double, double> DriftEstimate::alpha_sq_at(std::size_t time_index) const {
    if (time_index >= static_cast<std::size_t>(alphas.cols()))
        throw std::invalid_argument("DriftEstimate: time index out of range");
    Eigen::ArrayXd sq = alphas.col(static_cast<Eigen::Index>(time_index)).square();
    return mean_se_kept(sq, excluded);
}

DriftEstimate make_estimate(std::shared_ptr<const TimeGrid> grid, Eigen::ArrayXXd alphas,
                            std::string method, const Eigen::ArrayXXd& qv,
                            std::vector<uint8_t> excluded) {
    DriftEstimate est;
    est.grid = std::move(grid);
    if (alphas.cols() + 1 != static_cast<Eigen::Index>(est.grid->size()))
        throw std::invalid_argument("make_estimate: alphas must have m-1 columns");
    est.alphas = std::move(alphas);
    est.method = std::move(method);
    est.excluded = std::move(excluded);
    est.exclusions = 0;
    for (uint8_t e : est.excluded) est.exclusions += e ? 1u : 0u;
    est.compute_norms(qv);
    return est;
}

double closed_form_drift(const std::string& example,
                         const std::map<std::string, double>& state) {
    auto need = [&](const char* key) {
        auto it = state.find(key);
        if (it == state.end())
            throw std::invalid_argument(std::string("closed_form_drift: missing field '") +
                                        key + "'");
        return it->second;
    };
    if (example == "ito") {
        const double s = need("s");
        if (s >= 1.0) throw std::domain_error("closed_form_drift: ito requires s < 1");
        return (need("W_1") - need("W_s")) / (1.0 - s);
    }
    if (example == "fbm_noise") {
        const double s = need("s");
        if (s >= 1.0) throw std::domain_error("closed_form_drift: fbm_noise requires s < 1");
        const double eps = need("eps"), H = need("H");
        const double den = (1.0 - s) + eps * eps * std::pow(1.0 - s, 2.0 * H);
        return (need("dW") + eps * need("G")) / den;
    }
    throw std::invalid_argument("closed_form_drift: unknown example '" + example + "'");
}

double fbm_noise_expected_alpha_sq(double s, double eps, double H) {
    if (s >= 1.0) throw std::domain_error("fbm_noise_expected_alpha_sq: s < 1 required");
    return 1.0 / ((1.0 - s) + eps * eps * std::pow(1.0 - s, 2.0 * H));
}

DriftEstimate regression_drift(const PathEnsemble& ens, const FeatureStream& features,
                               const std::string& m_channel) {
    const TimeGrid& g = *ens.grid;
    if (!(features.grid() == g))
        throw std::invalid_argument("regression_drift: ensemble and features must share grid");
    const Eigen::ArrayXXd& M = ens.channel(m_channel);
    const Eigen::Index n = static_cast<Eigen::Index>(ens.n_paths);
    const Eigen::Index mcols = static_cast<Eigen::Index>(g.size());

    Eigen::ArrayXXd alphas(n, mcols - 1);
    bool ridge_any = false;
    for (Eigen::Index j = 0; j + 1 < mcols; ++j) {
        const double dt = g.dt(static_cast<std::size_t>(j));
        Eigen::ArrayXXd F = features.features_at(static_cast<std::size_t>(j));
        const Eigen::Index k = F.cols() + 1;
        if (n < 10 * k)
            throw std::invalid_argument("regression_drift: need >= 10x more paths than features");
        Eigen::MatrixXd X(n, k);
        X.col(0).setOnes();
        X.rightCols(F.cols()) = F.matrix();
        Eigen::VectorXd y = ((M.col(j + 1) - M.col(j)) / dt).matrix();
        Eigen::MatrixXd XtX = X.transpose() * X;
        Eigen::VectorXd Xty = X.transpose() * y;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
        Eigen::VectorXd coef;
        const Eigen::VectorXd d = ldlt.vectorD();
        if (ldlt.info() == Eigen::Success &&
            d.minCoeff() > 1e-12 * std::max(d.cwiseAbs().maxCoeff(), 1e-30)) {
            coef = ldlt.solve(Xty);
        } else {
            ridge_any = true;
            Eigen::MatrixXd Xr = XtX;
            Xr.diagonal().array() += 1e-10 * XtX.trace() / static_cast<double>(k);
            coef = Xr.ldlt().solve(Xty);
        }
        alphas.col(j) = (X * coef).array();
    }
    DriftEstimate est = make_estimate(ens.grid, std::move(alphas), "regression",
                                      ens.channel("qv"));
    est.ridge_fallback = ridge_any;
    return est;
}

SamplePath compensate(const SamplePath& m, const std::vector<double>& alpha,
                      const SamplePath& qv) {
    if (qv.kind != PathKind::qv) throw std::invalid_argument("compensate: qv path required");
    const std::size_t n = m.values.size();
    if (qv.values.size() != n || alpha.size() + 1 != n)
        throw std::invalid_argument("compensate: length mismatch");
    std::vector<double> out(n);
    out[0] = m.values[0];
    double acc = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        acc += alpha[i - 1] * (qv.values[i] - qv.values[i - 1]);
        out[i] = m.values[i] - acc;
    }
    return SamplePath(m.grid, std::move(out), m.kind);
}

Eigen::ArrayXXd compensate(const Eigen::ArrayXXd& m, const Eigen::ArrayXXd& alphas,
                           const Eigen::ArrayXXd& qv) {
    if (m.rows() != alphas.rows() || m.rows() != qv.rows() || m.cols() != qv.cols() ||
        alphas.cols() + 1 != m.cols())
        throw std::invalid_argument("compensate: shape mismatch");
    Eigen::ArrayXXd out(m.rows(), m.cols());
    out.col(0) = m.col(0);
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(m.rows());
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
        acc += alphas.col(j - 1) * (qv.col(j) - qv.col(j - 1));
        out.col(j) = m.col(j) - acc;
    }
    return out;
}

ConvergenceReport convergence_report(const std::vector<const DriftEstimate*>& estimates,
                                     const DriftEstimate* reference,
                                     ConvergenceThresholds thresholds) {
    if (estimates.empty())
        throw std::invalid_argument("convergence_report: need at least one estimate");
    const TimeGrid& g = *estimates.front()->grid;
    const Eigen::Index n = estimates.front()->alphas.rows();
    for (const auto* e : estimates)
        if (!(*e->grid == g) || e->alphas.rows() != n)
            throw std::invalid_argument("convergence_report: estimates must share grid and paths");
    if (reference && (!(*reference->grid == g) || reference->alphas.rows() != n))
        throw std::invalid_argument("convergence_report: reference grid mismatch");

    // dt weights on left endpoints.
    Eigen::ArrayXd dts(static_cast<Eigen::Index>(g.size()) - 1);
    for (Eigen::Index j = 0; j < dts.size(); ++j) dts(j) = g.dt(static_cast<std::size_t>(j));

    auto h2_paths = [&](const Eigen::ArrayXXd& a) {
        Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n);
        for (Eigen::Index j = 0; j < a.cols(); ++j) out += a.col(j).square() * dts(j);
        return out;
    };

    ConvergenceReport rep;
    rep.thresholds = thresholds;
    std::vector<Eigen::ArrayXd> h2s;
    for (const auto* e : estimates) {
        Eigen::ArrayXd h2p = h2_paths(e->alphas);
        auto [m, se] = mean_se(h2p);
        rep.levels.push_back({e->level ? e->level : e->alphas.cols() + 1, m, se});
        h2s.push_back(std::move(h2p));
    }

    for (std::size_t k = 0; k + 1 < estimates.size(); ++k) {
        const auto& Ac = estimates[k]->alphas;
        const auto& Af = estimates[k + 1]->alphas;
        Eigen::ArrayXd gap = h2_paths(Af - Ac);
        auto [gm, gse] = mean_se(gap);
        Eigen::ArrayXd pyth = h2s[k + 1] - h2s[k] - gap;
        auto [pm, pse] = mean_se(pyth);
        // Projection residual: <alpha_coarse, alpha_fine - alpha_coarse>.
        Eigen::ArrayXd proj = Eigen::ArrayXd::Zero(n);
        for (Eigen::Index j = 0; j < Ac.cols(); ++j)
            proj += Ac.col(j) * (Af.col(j) - Ac.col(j)) * dts(j);
        auto [prm, prse] = mean_se(proj);
        rep.pairs.push_back({k, k + 1, gm, gse, pm, pse, prm, prse});
    }

    if (reference) {
        for (const auto* e : estimates) {
            Eigen::ArrayXd gap = h2_paths(reference->alphas - e->alphas);
            auto [m, se] = mean_se(gap);
            rep.reference_gaps.push_back({m, se});
        }
    }

    if (estimates.size() < 2) {
        rep.verdict = "inconclusive";
        return rep;
    }
    const double last_gap = rep.pairs.back().cauchy_gap;
    const double last_incr = rep.levels.back().h2_norm_sq -
                             rep.levels[rep.levels.size() - 2].h2_norm_sq;
    bool diverging = rep.levels.size() >= 3;
    if (diverging) {
        const double prev_incr = rep.levels[rep.levels.size() - 2].h2_norm_sq -
                                 rep.levels[rep.levels.size() - 3].h2_norm_sq;
        diverging = last_incr >= thresholds.div_floor && prev_incr >= thresholds.div_floor;
    }
    if (last_gap <= thresholds.tol_c && std::abs(last_incr) <= thresholds.tol_n)
        rep.verdict = "converged";
    else if (diverging)
        rep.verdict = "diverging";
    else
        rep.verdict = "inconclusive";
    return rep;
}

std::string ConvergenceReport::to_json() const {
    nlohmann::json j;
    j["verdict"] = verdict;
    j["measure"] = measure;
    j["thresholds"] = {{"tol_c", thresholds.tol_c},
                       {"tol_n", thresholds.tol_n},
                       {"div_floor", thresholds.div_floor}};
    j["levels"] = nlohmann::json::array();
    for (const auto& l : levels)
        j["levels"].push_back(
            {{"grid_size", l.grid_size}, {"h2_norm_sq", l.h2_norm_sq}, {"se", l.h2_se}});
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs)
        j["pairs"].push_back({{"coarse", p.coarse},
                              {"fine", p.fine},
                              {"cauchy_gap", p.cauchy_gap},
                              {"cauchy_se", p.cauchy_se},
                              {"pythagoras_residual", p.pythagoras_residual},
                              {"pythagoras_se", p.pythagoras_se},
                              {"projection_residual", p.projection_residual},
                              {"projection_se", p.projection_se}});
    j["reference_gaps"] = nlohmann::json::array();
    for (const auto& [m, se] : reference_gaps)
        j["reference_gaps"].push_back({{"gap", m}, {"se", se}});
    return j.dump(2);
}

void write_drift_csv(const DriftEstimate& est, const Eigen::ArrayXXd& qv, std::ostream& out) {
    out << "s,alpha_mean,alpha_var,h2_cum\n";
    out.precision(17);
    Eigen::ArrayXd h2cum = Eigen::ArrayXd::Zero(est.alphas.rows());
    for (Eigen::Index j = 0; j < est.alphas.cols(); ++j) {
        h2cum += est.alphas.col(j).square() * (qv.col(j + 1) - qv.col(j));
        const double m = est.alphas.col(j).mean();
        const double var =
            (est.alphas.col(j) - m).square().sum() /
            std::max<double>(1.0, static_cast<double>(est.alphas.rows() - 1));
        out << (*est.grid)[static_cast<std::size_t>(j)] << ',' << m << ',' << var << ','
            << h2cum.mean() << '\n';
    }
}

std::string drift_estimate_json(const DriftEstimate& est) {
    nlohmann::json j;
    j["method"] = est.method;
    j["level"] = est.level;
    j["n_paths"] = est.alphas.rows();
    j["n_times"] = est.alphas.cols();
    j["h1_norm"] = est.h1_norm;
    j["h1_se"] = est.h1_se;
    j["h2_norm_sq"] = est.h2_norm_sq;
    j["h2_se"] = est.h2_se;
    j["h2_path_quantiles"] = nlohmann::json::array();
    for (const auto& [q, v] : est.h2_path_quantiles)
        j["h2_path_quantiles"].push_back({{"q", q}, {"value", v}});
    j["exclusions"] = est.exclusions;
    j["ridge_fallback"] = est.ridge_fallback;
    return j.dump(2);
}

}  // namespace driftlab
