#pragma once

#include <Eigen/Core>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "driftlab/expand.hpp"
#include "driftlab/gridpath.hpp"

namespace driftlab {

// Per-path information-drift values on the left endpoints of a grid
// (columns 0..m-2), with H1/H2 norms accumulated against a realized qv
// channel. Paths flagged excluded (ladder singularities) do not enter norms.
struct DriftEstimate {
    std::shared_ptr<const TimeGrid> grid;
    Eigen::ArrayXXd alphas;  // n_paths x (m-1)
    std::string method;      // closed_form | projection | jacod | regression | ladder
    std::size_t level = 0;   // obs-grid size for convergence sequences (0 = n/a)

    double h1_norm = 0.0, h1_se = 0.0;
    double h2_norm_sq = 0.0, h2_se = 0.0;
    // Pathwise quantile curve of int alpha^2 d[M,M] at
    // {5, 25, 50, 75, 95, 99}%; the immediate-arbitrage condition is a
    // pathwise statement, so the distribution is reported, not gated.
    std::vector<std::pair<double, double>> h2_path_quantiles;
    std::size_t exclusions = 0;
    std::vector<uint8_t> excluded;  // per-path flag
    bool ridge_fallback = false;

    // Norms over grid times in [t_lo, t_hi) against qv increments.
    struct Norms {
        double h1, h1_se, h2, h2_se;
    };
    Norms norms_on(const Eigen::ArrayXXd& qv, double t_lo, double t_hi) const;
    void compute_norms(const Eigen::ArrayXXd& qv);

    // Mean and standard error of alpha_s^2 at one grid time.
    std::pair<double, double> alpha_sq_at(std::size_t time_index) const;
};

DriftEstimate make_estimate(std::shared_ptr<const TimeGrid> grid, Eigen::ArrayXXd alphas,
                            std::string method, const Eigen::ArrayXXd& qv,
                            std::vector<uint8_t> excluded = {});

// Closed-form drift catalog.
//   ito:       (W1 - Ws) / (1 - s)                 state: s, W_s, W_1
//   fbm_noise: (W1 - Ws + eps*G) / (1-s+eps^2(1-s)^{2H})
//              state: s, dW (=W1-Ws), G (=fBm at 1-s), eps, H
double closed_form_drift(const std::string& example,
                         const std::map<std::string, double>& state);

// E[alpha_s^2] for the fbm_noise example, used by integrability scans.
double fbm_noise_expected_alpha_sq(double s, double eps, double H);

// Least-squares estimate of alpha from one-step difference quotients
// regressed on the feature vector at each grid time.
DriftEstimate regression_drift(const PathEnsemble& ens, const FeatureStream& features,
                               const std::string& m_channel = "W");

// M~ = M - sum_{u<t} alpha_u d[M,M]_u (left-point rule).
SamplePath compensate(const SamplePath& m, const std::vector<double>& alpha,
                      const SamplePath& qv);
Eigen::ArrayXXd compensate(const Eigen::ArrayXXd& m, const Eigen::ArrayXXd& alphas,
                           const Eigen::ArrayXXd& qv);

struct ConvergenceThresholds {
    double tol_c = 1e-3;
    double tol_n = 1e-3;
    double div_floor = 1e-2;

    static ConvergenceThresholds mc() { return {}; }
    static ConvergenceThresholds gaussian_exact() { return {1e-8, 1e-8, 1e-2}; }
};

struct ConvergenceReport {
    struct Level {
        std::size_t grid_size;
        double h2_norm_sq, h2_se;
    };
    struct PairStat {
        std::size_t coarse, fine;  // level indices
        double cauchy_gap, cauchy_se;
        double pythagoras_residual, pythagoras_se;
        double projection_residual, projection_se;
    };
    std::vector<Level> levels;
    std::vector<PairStat> pairs;              // adjacent pairs in level order
    std::vector<std::pair<double, double>> reference_gaps;  // per level, with SE
    std::string verdict;  // converged | diverging | inconclusive
    ConvergenceThresholds thresholds;
    std::string measure = "dt";  // gap/norm weighting (exact Brownian bracket)

    std::string to_json() const;
};

// Diagnostics across refining observation grids on a common simulation grid
// with common random numbers. Gap and norm integrals use Lebesgue dt.
ConvergenceReport convergence_report(const std::vector<const DriftEstimate*>& estimates,
                                     const DriftEstimate* reference = nullptr,
                                     ConvergenceThresholds thresholds = {});

// CSV of per-time norms: `s,alpha_mean,alpha_var,h2_cum` (h2 against qv).
void write_drift_csv(const DriftEstimate& est, const Eigen::ArrayXXd& qv, std::ostream& out);
std::string drift_estimate_json(const DriftEstimate& est);

}  // namespace driftlab
