#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftlab/audit.hpp"
#include "driftlab/drift.hpp"
#include "driftlab/expand.hpp"
#include "driftlab/gridpath.hpp"
#include "driftlab/value.hpp"

namespace driftlab {

struct GridConfig {
    double t = 1.0;
    int n0 = 512;
    int levels = 5;
};

// Declarative experiment description; JSON schema is strict (unknown keys are
// rejected naming the key) and the effective config materializes every
// default.
struct ExperimentConfig {
    std::string experiment = "ito";
    std::size_t n_paths = 20000;
    uint64_t seed = 42;
    double delta = 0.1;
    double epsilon = 1.0;
    double hurst = 0.25;
    double sigma = 0.5;
    double theta = 1.0;
    double lambda = 1.0;
    double x = 0.0;
    std::vector<double> eps_levels = {0.5, 0.25, 0.125, 0.0625};
    int obs_n0 = 4;
    double obs_span = 0.8;
    GridConfig grid;
    std::string out_dir = "out";
    std::string format = "csv";  // csv | json
    bool strict = false;
    std::vector<std::string> overrides;  // CLI-supplied keys, recorded

    static ExperimentConfig defaults_for(const std::string& experiment);
    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json() const;
    uint64_t hash() const;
    void validate() const;
};

enum class Stage { simulate, drift, audit, converge, value, full };
Stage stage_from_name(const std::string& name);

struct RunRecord {
    std::string config_hash;
    std::vector<std::string> artifacts;
    double wall_seconds = 0.0;
    int exit_status = 0;
    std::string version;
    std::string to_json() const;
};

// --- Pipeline results (exposed so tests and the acceptance suite can gate
// --- on the same objects the CLI serializes).

struct ItoResult {
    PathEnsemble ens;
    DriftEstimate alpha;                       // closed-form catalog drift
    DriftEstimate::Norms ds_norms_09;          // dt-weighted E int_0^0.9 alpha^2 ds
    std::pair<double, double> alpha_sq_half;   // E[alpha_{0.5}^2] with SE
    std::shared_ptr<const TimeGrid> subgrid;   // [0, 0.9]
    Eigen::ArrayXXd m_tilde;                   // compensated on the subgrid
    Eigen::ArrayXXd qv_dt_sub;                 // deterministic bracket on subgrid
    AuditReport audit_uncompensated;
    AuditReport audit_compensated;
    AuditReport audit_qv;
    DeflatorPath Z;
    AuditReport audit_deflator;
    AuditReport audit_deflator_ez;             // E[Z_T] entry
    ValuationReport valuation;                 // x = config.x
    AuditReport value_check;
    ValuationReport valuation_x5;              // constraint-monitor configuration
};

struct FbmNoiseResult {
    PathEnsemble ens;
    DriftEstimate alpha;
    struct ScanRow {
        int k;
        double value_h;       // configured H
        double value_h_high;  // mirrored H (1 - H)
    };
    std::vector<ScanRow> integrability_scan;  // over [0, 1 - 10^{-k}]
};

struct ConvergeResult {
    PathEnsemble ens;
    std::vector<DriftEstimate> levels;
    std::optional<DriftEstimate> reference;
    ConvergenceReport report;
};

struct BesselResult {
    PathEnsemble ens;
    std::vector<DriftEstimate> levels;  // one per eps in eps_levels
    ConvergenceReport report;
    AuditReport ladder_identity;  // at s = horizon, p = 0,1,2, quantile bins
};

struct AnticipationResult {
    AuditReport tau_repr;
};

ItoResult run_ito(const ExperimentConfig& cfg);
FbmNoiseResult run_fbm_noise(const ExperimentConfig& cfg);
ConvergeResult run_converge(const ExperimentConfig& cfg);
ConvergeResult run_white_noise(const ExperimentConfig& cfg);
BesselResult run_bessel3(const ExperimentConfig& cfg);
AnticipationResult run_anticipation(const ExperimentConfig& cfg);

// Deterministic bracket d[M,M] = t rows, usable wherever a qv channel is
// expected for Brownian models.
Eigen::ArrayXXd dt_bracket(const TimeGrid& grid, std::size_t n_paths);

// Executes the named pipeline up to `stage`, writes artifacts + effective
// config + run record under cfg.out_dir. Throws config_error for unknown
// experiments; strict audit failures surface in the returned exit_status.
RunRecord run_experiment(const ExperimentConfig& cfg, Stage stage = Stage::full);

}  // namespace driftlab
