#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "driftlab/expand.hpp"
#include "driftlab/gridpath.hpp"

namespace driftlab {

struct AuditEntry {
    std::string name;
    double statistic = 0.0;
    double se = 0.0;
    double z = 0.0;
    bool pass = true;  // |z| <= level, exactly as stored
};

struct AuditReport {
    std::vector<AuditEntry> entries;  // sorted by name
    double level = 3.0;               // significance convention |z| <= 3
    std::size_t n_paths = 0;
    uint64_t seed = 0;
    std::string grid_desc;

    bool all_pass() const;
    const AuditEntry& entry(const std::string& name) const;
    void add(std::string name, double statistic, double se);
    void sort_entries();
    void merge(AuditReport&& other);
    std::string to_json() const;
};

// E[(M_t - M_s) xi] = 0 for xi among the time-s features, their clipped
// versions (at +-3 sample SD) and the constant 1.
AuditReport increment_test(const Eigen::ArrayXXd& m_channel, const FeatureStream& features,
                           const std::vector<std::pair<double, double>>& pairs);

// Realized bracket mean against t at the checkpoint times.
AuditReport qv_check(const TimeGrid& grid, const Eigen::ArrayXXd& channel,
                     const std::vector<double>& checkpoints);

// Positive ensemble deflator built by the log scheme
//   log Z_t = sum_{u<t} (l_u dM~_u - 1/2 l_u^2 d[M,M]_u)
// from a loading l (the stochastic-log coefficient of Z against M~).
struct DeflatorPath {
    std::shared_ptr<const TimeGrid> grid;
    Eigen::ArrayXXd z;  // n_paths x m, Z_0 = 1, Z > 0
    std::string construction_log;
    uint64_t loading_hash = 0;
};

DeflatorPath deflator(const Eigen::ArrayXXd& loading, const Eigen::ArrayXXd& m_tilde,
                      const Eigen::ArrayXXd& qv, std::shared_ptr<const TimeGrid> grid);
// Single-path convenience.
SamplePath deflator(const std::vector<double>& loading, const SamplePath& m_tilde,
                    const SamplePath& qv);

uint64_t array_hash(const Eigen::ArrayXXd& a);

// Three entry groups: increment tests on the product Z*M; the bracket
// identity d[Z,M] = l Z d[M,M] as a pooled slope regressed against 1 with
// cluster (per path) standard errors; a positivity census.
AuditReport deflator_audit(const DeflatorPath& z, const Eigen::ArrayXXd& m,
                           const Eigen::ArrayXXd& loading, const Eigen::ArrayXXd& qv,
                           const FeatureStream& features,
                           const std::vector<std::pair<double, double>>& pairs);

}  // namespace driftlab
