#pragma once

#include <Eigen/Core>
#include <string>

#include "driftlab/audit.hpp"
#include "driftlab/drift.hpp"
#include "driftlab/gridpath.hpp"

namespace driftlab {

// Insider portfolio outcome for the mean-variance program with strategy
// H* = alpha / (2 lambda), left-point execution against M.
struct ValuationReport {
    double lambda = 1.0;
    double x = 0.0;

    double realized_mean = 0.0, realized_se = 0.0;
    double realized_var = 0.0;
    double theo_value = 0.0, theo_value_se = 0.0;     // E int alpha^2/(2 lambda) dqv
    double risk_gap = 0.0, risk_gap_se = 0.0;         // E int alpha^2/(4 lambda) dqv
    double realized_risk_adjusted = 0.0, realized_risk_adjusted_se = 0.0;
    double theo_value_from_h2 = 0.0;                  // h2_norm_sq/(2 lambda) cross-check
    double constraint_violation_fraction = 0.0;       // x + H.M < 0 somewhere on [0,T]

    // Per-path accumulators kept for paired identity tests and perturbation.
    Eigen::ArrayXd pnl;        // sum H dM
    Eigen::ArrayXd theo_path;  // sum alpha^2/(2 lambda) dqv
    Eigen::ArrayXd quad_path;  // sum H^2 dqv

    // Sample risk-adjusted objective when H* is scaled by c.
    double objective_at_scale(double c) const {
        return x + c * pnl.mean() - lambda * c * c * quad_path.mean();
    }
    std::string to_json() const;
};

ValuationReport backtest(const PathEnsemble& ens, const DriftEstimate& alpha, double lambda,
                         double x, const std::string& m_channel = "W",
                         double t_hi = -1.0);

// z-scores for (realized mean - theoretical value) and the risk-adjusted
// residual, both as paired per-path differences.
AuditReport value_identity_check(const ValuationReport& report);

void write_pnl_csv(const ValuationReport& report, std::ostream& out);

}  // namespace driftlab
