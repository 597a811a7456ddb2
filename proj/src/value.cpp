#include "driftlab/value.hpp"

#include <cmath>
#include <ostream>
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

}  // namespace

ValuationReport backtest(const PathEnsemble& ens, const DriftEstimate& alpha, double lambda,
                         double x, const std::string& m_channel, double t_hi) {
    if (!(lambda > 0.0)) throw std::invalid_argument("backtest: lambda must be > 0");
    if (!(*alpha.grid == *ens.grid))
        throw std::invalid_argument("backtest: alpha and ensemble must share grid");
    const TimeGrid& g = *ens.grid;
    if (t_hi < 0.0) t_hi = g.horizon();
    const Eigen::ArrayXXd& M = ens.channel(m_channel);
    const Eigen::ArrayXXd& qv = ens.channel("qv");
    const Eigen::Index n = M.rows();

    ValuationReport rep;
    rep.lambda = lambda;
    rep.x = x;
    rep.pnl = Eigen::ArrayXd::Zero(n);
    rep.theo_path = Eigen::ArrayXd::Zero(n);
    rep.quad_path = Eigen::ArrayXd::Zero(n);
    Eigen::ArrayXd wealth_min = Eigen::ArrayXd::Constant(n, x);

    for (Eigen::Index j = 0; j < alpha.alphas.cols(); ++j) {
        const double t = g[static_cast<std::size_t>(j)];
        if (t >= t_hi - 1e-12) break;
        const Eigen::ArrayXd h = alpha.alphas.col(j) / (2.0 * lambda);
        const Eigen::ArrayXd dqv = qv.col(j + 1) - qv.col(j);
        rep.pnl += h * (M.col(j + 1) - M.col(j));
        rep.quad_path += h.square() * dqv;
        rep.theo_path += alpha.alphas.col(j).square() / (2.0 * lambda) * dqv;
        wealth_min = wealth_min.min(x + rep.pnl);
    }

    auto [pm, pse] = mean_se(rep.pnl);
    rep.realized_mean = pm;
    rep.realized_se = pse;
    rep.realized_var = pse * pse * static_cast<double>(n);
    auto [tm, tse] = mean_se(rep.theo_path);
    rep.theo_value = tm;
    rep.theo_value_se = tse;
    rep.risk_gap = 0.5 * tm;
    rep.risk_gap_se = 0.5 * tse;
    Eigen::ArrayXd risk_objective = rep.pnl - lambda * rep.quad_path;
    auto [rm, rse] = mean_se(risk_objective);
    rep.realized_risk_adjusted = x + rm;
    rep.realized_risk_adjusted_se = rse;
    const DriftEstimate::Norms norms = alpha.norms_on(qv, 0.0, t_hi);
    rep.theo_value_from_h2 = norms.h2 / (2.0 * lambda);
    rep.constraint_violation_fraction =
        static_cast<double>((wealth_min < 0.0).count()) / static_cast<double>(n);
    return rep;
}

AuditReport value_identity_check(const ValuationReport& report) {
    AuditReport rep;
    rep.n_paths = static_cast<std::size_t>(report.pnl.size());
    // Paired residual: realized P&L against its theoretical compensator.
    auto [dm, dse] = mean_se(report.pnl - report.theo_path);
    rep.add("mean_return_residual", dm, dse);
    // Risk-adjusted: pnl - lambda*quad against half the compensator.
    auto [rm, rse] =
        mean_se(report.pnl - report.lambda * report.quad_path - 0.5 * report.theo_path);
    rep.add("risk_adjusted_residual", rm, rse);
    rep.sort_entries();
    return rep;
}

std::string ValuationReport::to_json() const {
    nlohmann::json j;
    j["lambda"] = lambda;
    j["x"] = x;
    j["realized_mean"] = realized_mean;
    j["realized_se"] = realized_se;
    j["realized_var"] = realized_var;
    j["theoretical_value"] = theo_value;
    j["theoretical_value_se"] = theo_value_se;
    j["risk_adjusted_gap"] = risk_gap;
    j["risk_adjusted_gap_se"] = risk_gap_se;
    j["realized_risk_adjusted"] = realized_risk_adjusted;
    j["realized_risk_adjusted_se"] = realized_risk_adjusted_se;
    j["theoretical_value_from_h2"] = theo_value_from_h2;
    j["constraint_violation_fraction"] = constraint_violation_fraction;
    j["n_paths"] = pnl.size();
    return j.dump(2);
}

void write_pnl_csv(const ValuationReport& report, std::ostream& out) {
    out << "path_id,pnl\n";
    out.precision(17);
    for (Eigen::Index p = 0; p < report.pnl.size(); ++p)
        out << p << ',' << report.pnl(p) << '\n';
}

}  // namespace driftlab
