#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace driftlab {

// Strictly increasing time grid from 0 to the horizon T.
class TimeGrid {
public:
    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> times);

    static TimeGrid uniform(double T, std::size_t n_intervals);

    const std::vector<double>& times() const { return times_; }
    double operator[](std::size_t i) const { return times_[i]; }
    std::size_t size() const { return times_.size(); }
    double horizon() const { return times_.back(); }
    double mesh() const;
    double dt(std::size_t i) const { return times_[i + 1] - times_[i]; }

    // B refines A iff every time of A occurs in B.
    bool refines(const TimeGrid& coarser, double tol = 1e-12) const;
    bool contains(double t, double tol = 1e-12) const;
    // Index of grid time equal to t, or nullopt.
    std::optional<std::size_t> index_of(double t, double tol = 1e-12) const;
    // Largest index with times[i] <= t (t >= 0 required).
    std::size_t last_index_leq(double t, double tol = 1e-12) const;

    // Returns a grid whose times are this grid's plus `extra`, deduplicated.
    TimeGrid with_times(const std::vector<double>& extra, double tol = 1e-12) const;

    bool operator==(const TimeGrid& o) const { return times_ == o.times_; }

private:
    std::vector<double> times_;
};

std::vector<TimeGrid> build_refining_grids(double T, int n0, int levels);

enum class PathKind { brownian, fbm, bessel3, future_inf, noise, qv, drift, custom };

std::string to_string(PathKind k);

// One trajectory on a grid.
struct SamplePath {
    std::shared_ptr<const TimeGrid> grid;
    std::vector<double> values;
    PathKind kind = PathKind::custom;

    SamplePath() = default;
    SamplePath(std::shared_ptr<const TimeGrid> g, std::vector<double> v, PathKind k);
    void validate() const;
};

// Generating-law descriptor for simulate().
struct Model {
    enum class Kind { brownian, fbm, bessel3, ou, white };
    Kind kind = Kind::brownian;
    double hurst = 0.5;   // fbm
    double theta = 1.0;   // ou
    double sigma = 1.0;   // ou / white

    static Model brownian() { return {Kind::brownian, 0.5, 0, 0}; }
    static Model fbm(double H) { return {Kind::fbm, H, 0, 0}; }
    static Model bessel3() { return {Kind::bessel3, 0.5, 0, 0}; }
    static Model ou(double th, double sg) { return {Kind::ou, 0.5, th, sg}; }
    static Model white(double sg) { return {Kind::white, 0.5, 0, sg}; }

    std::string describe() const;
    // Name of the channel carrying the primary process.
    std::string primary_channel() const;
};

// Seeded ensemble of trajectories; channels are (n_paths x n_times) arrays
// sharing one grid. Regeneration from (seed, model, grid, n_paths) is
// bit-identical and independent of generation order.
struct PathEnsemble {
    std::shared_ptr<const TimeGrid> grid;
    std::size_t n_paths = 0;
    std::map<std::string, Eigen::ArrayXXd> channels;
    uint64_t seed = 0;
    std::string model_desc;

    const Eigen::ArrayXXd& channel(const std::string& name) const;
    bool has_channel(const std::string& name) const { return channels.count(name) != 0; }
    SamplePath path(const std::string& channel_name, std::size_t p, PathKind kind) const;

    // Merge channels of another ensemble simulated on the same grid/seed.
    void absorb(PathEnsemble&& other);
};

PathEnsemble simulate(const Model& model, const TimeGrid& grid, std::size_t n_paths,
                      uint64_t seed);

SamplePath quadratic_variation(const SamplePath& path);
// Realized bracket rows for a whole channel.
Eigen::ArrayXXd quadratic_variation(const Eigen::ArrayXXd& channel);

SamplePath step_discretize(const SamplePath& path, const TimeGrid& obs);
// Observation times given directly (allows the single-observation case {0}).
SamplePath step_discretize(const SamplePath& path, const std::vector<double>& obs_times);

// Worker cap honored by simulate(); reads DRIFTLAB_THREADS, result-invariant.
unsigned worker_count();

// ensemble CSV dump: header `time,path_id,channel,value`, rows time-major,
// then path, then channel.
void write_ensemble_csv(const PathEnsemble& ens, std::ostream& out);

}  // namespace driftlab
