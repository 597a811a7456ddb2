#pragma once

#include <string>

#include "driftlab/drift.hpp"
#include "driftlab/expand.hpp"
#include "driftlab/gauss.hpp"
#include "driftlab/gridpath.hpp"

namespace driftlab {

// Per-path observed values for the variables of a drift weight system,
// materialized from ensemble channels (column order = weights.observed).
Eigen::MatrixXd observed_values(const DriftWeights& w, const ExpansionSpec& spec,
                                const PathEnsemble& ens);

// Gaussian-exact drift estimate: alpha_s per path at every grid left point,
// computed by projection_drift_weights ("projection") or jacod_drift_weights
// ("jacod") and applied across the ensemble.
DriftEstimate gaussian_exact_drift(const ExpansionSpec& spec, const PathEnsemble& ens,
                                   const std::string& method = "projection");

}  // namespace driftlab
