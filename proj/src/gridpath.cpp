#include "driftlab/gridpath.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "driftlab/errors.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
    if (times_.size() < 2) throw std::invalid_argument("TimeGrid: need at least 2 times");
    if (times_.front() != 0.0) throw std::invalid_argument("TimeGrid: first time must be 0");
    for (std::size_t i = 1; i < times_.size(); ++i)
        if (!(times_[i] > times_[i - 1]))
            throw std::invalid_argument("TimeGrid: times must be strictly increasing");
    if (!(times_.back() > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be > 0");
}

TimeGrid TimeGrid::uniform(double T, std::size_t n_intervals) {
    if (!(T > 0.0) || n_intervals == 0)
        throw std::invalid_argument("TimeGrid::uniform: T > 0 and n_intervals >= 1 required");
    std::vector<double> ts(n_intervals + 1);
    for (std::size_t i = 0; i <= n_intervals; ++i)
        ts[i] = T * static_cast<double>(i) / static_cast<double>(n_intervals);
    ts.back() = T;
    return TimeGrid(std::move(ts));
}

double TimeGrid::mesh() const {
    double m = 0.0;
    for (std::size_t i = 1; i < times_.size(); ++i) m = std::max(m, times_[i] - times_[i - 1]);
    return m;
}

bool TimeGrid::contains(double t, double tol) const {
    auto it = std::lower_bound(times_.begin(), times_.end(), t - tol);
    return it != times_.end() && std::abs(*it - t) <= tol;
}

std::optional<std::size_t> TimeGrid::index_of(double t, double tol) const {
    auto it = std::lower_bound(times_.begin(), times_.end(), t - tol);
    if (it != times_.end() && std::abs(*it - t) <= tol)
        return static_cast<std::size_t>(it - times_.begin());
    return std::nullopt;
}

std::size_t TimeGrid::last_index_leq(double t, double tol) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t + tol);
    if (it == times_.begin()) throw std::invalid_argument("TimeGrid: t before grid start");
    return static_cast<std::size_t>(it - times_.begin()) - 1;
}

bool TimeGrid::refines(const TimeGrid& coarser, double tol) const {
    for (double t : coarser.times_)
        if (!contains(t, tol)) return false;
    return true;
}

TimeGrid TimeGrid::with_times(const std::vector<double>& extra, double tol) const {
    std::vector<double> ts = times_;
    for (double t : extra) {
        if (t < -tol || t > horizon() + tol)
            throw std::invalid_argument("TimeGrid::with_times: time outside [0, T]");
        if (!contains(t, tol)) ts.push_back(t);
    }
    std::sort(ts.begin(), ts.end());
    return TimeGrid(std::move(ts));
}

std::vector<TimeGrid> build_refining_grids(double T, int n0, int levels) {
    if (!(T > 0.0)) throw std::invalid_argument("build_refining_grids: T must be > 0");
    if (n0 < 1) throw std::invalid_argument("build_refining_grids: n0 must be >= 1");
    if (levels < 1) throw std::invalid_argument("build_refining_grids: levels must be >= 1");
    std::vector<TimeGrid> out;
    out.reserve(static_cast<std::size_t>(levels));
    std::size_t n = static_cast<std::size_t>(n0);
    for (int k = 0; k < levels; ++k, n *= 2) out.push_back(TimeGrid::uniform(T, n));
    return out;
}

std::string to_string(PathKind k) {
    switch (k) {
        case PathKind::brownian: return "brownian";
        case PathKind::fbm: return "fbm";
        case PathKind::bessel3: return "bessel3";
        case PathKind::future_inf: return "future_inf";
        case PathKind::noise: return "noise";
        case PathKind::qv: return "qv";
        case PathKind::drift: return "drift";
        case PathKind::custom: return "custom";
    }
    return "custom";
}

SamplePath::SamplePath(std::shared_ptr<const TimeGrid> g, std::vector<double> v, PathKind k)
    : grid(std::move(g)), values(std::move(v)), kind(k) {
    validate();
}

void SamplePath::validate() const {
    if (!grid) throw std::invalid_argument("SamplePath: null grid");
    if (values.size() != grid->size())
        throw std::invalid_argument("SamplePath: values length must equal grid length");
    if (kind == PathKind::qv) {
        if (values.front() != 0.0) throw std::invalid_argument("SamplePath: qv must start at 0");
        for (std::size_t i = 1; i < values.size(); ++i)
            if (values[i] < values[i - 1] - 1e-15)
                throw std::invalid_argument("SamplePath: qv must be non-decreasing");
    }
    if (kind == PathKind::bessel3) {
        for (double v : values)
            if (v < 0.0) throw std::invalid_argument("SamplePath: bessel3 values must be >= 0");
    }
}

std::string Model::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::brownian: os << "brownian"; break;
        case Kind::fbm: os << "fbm(H=" << hurst << ")"; break;
        case Kind::bessel3: os << "bessel3"; break;
        case Kind::ou: os << "ou(theta=" << theta << ",sigma=" << sigma << ")"; break;
        case Kind::white: os << "white(sigma=" << sigma << ")"; break;
    }
    return os.str();
}

std::string Model::primary_channel() const {
    switch (kind) {
        case Kind::brownian: return "W";
        case Kind::fbm: return "fbm";
        case Kind::bessel3: return "Z";
        case Kind::ou: return "noise";
        case Kind::white: return "noise";
    }
    return "W";
}

const Eigen::ArrayXXd& PathEnsemble::channel(const std::string& name) const {
    auto it = channels.find(name);
    if (it == channels.end())
        throw std::invalid_argument("PathEnsemble: missing channel '" + name + "'");
    return it->second;
}

SamplePath PathEnsemble::path(const std::string& channel_name, std::size_t p, PathKind kind) const {
    const auto& ch = channel(channel_name);
    if (p >= n_paths) throw std::invalid_argument("PathEnsemble: path index out of range");
    std::vector<double> v(ch.cols());
    for (Eigen::Index j = 0; j < ch.cols(); ++j) v[static_cast<std::size_t>(j)] = ch(p, j);
    return SamplePath(grid, std::move(v), kind);
}

void PathEnsemble::absorb(PathEnsemble&& other) {
    if (other.n_paths != n_paths || !(*other.grid == *grid))
        throw std::invalid_argument("PathEnsemble::absorb: grid/n_paths mismatch");
    for (auto& [name, arr] : other.channels) {
        if (channels.count(name))
            throw std::invalid_argument("PathEnsemble::absorb: duplicate channel '" + name + "'");
        channels.emplace(name, std::move(arr));
    }
    model_desc += "+" + other.model_desc;
}

unsigned worker_count() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    unsigned cap = std::min(hw, 8u);
    if (const char* env = std::getenv("DRIFTLAB_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) cap = static_cast<unsigned>(std::min<long>(v, 64));
    }
    return cap;
}

namespace {

// Static partition over paths; per-path RNG streams make the result
// independent of the partition.
template <typename Fn>
void parallel_over_paths(std::size_t n_paths, Fn&& body) {
    unsigned workers = worker_count();
    if (workers <= 1 || n_paths < 256) {
        for (std::size_t p = 0; p < n_paths; ++p) body(p);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n_paths + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        std::size_t lo = w * chunk, hi = std::min(n_paths, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t p = lo; p < hi; ++p) body(p);
        });
    }
    for (auto& th : pool) th.join();
}

Eigen::MatrixXd fbm_covariance(const std::vector<double>& times, double H) {
    // Levels at t_1..t_end; exact joint law with the standard fBm kernel.
    const std::size_t m = times.size() - 1;
    Eigen::MatrixXd C(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double a = times[i + 1], b = times[j + 1];
            double v = 0.5 * (std::pow(a, 2 * H) + std::pow(b, 2 * H) -
                              std::pow(std::abs(a - b), 2 * H));
            C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            C(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    return C;
}

}  // namespace

PathEnsemble simulate(const Model& model, const TimeGrid& grid, std::size_t n_paths,
                      uint64_t seed) {
    if (n_paths == 0) throw std::invalid_argument("simulate: n_paths must be >= 1");
    const std::size_t m = grid.size();
    const auto& ts = grid.times();

    PathEnsemble ens;
    ens.grid = std::make_shared<const TimeGrid>(grid);
    ens.n_paths = n_paths;
    ens.seed = seed;
    ens.model_desc = model.describe();

    const std::string primary = model.primary_channel();
    const uint64_t tag = channel_tag(primary);
    const Eigen::Index cols = static_cast<Eigen::Index>(m);
    const Eigen::Index rows = static_cast<Eigen::Index>(n_paths);

    switch (model.kind) {
        case Model::Kind::brownian: {
            Eigen::ArrayXXd W(rows, cols);
            parallel_over_paths(n_paths, [&](std::size_t p) {
                Rng rng(derive_stream(seed, p, tag));
                double w = 0.0;
                W(static_cast<Eigen::Index>(p), 0) = 0.0;
                for (std::size_t i = 1; i < m; ++i) {
                    w += std::sqrt(ts[i] - ts[i - 1]) * rng.normal();
                    W(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = w;
                }
            });
            ens.channels.emplace("qv", quadratic_variation(W));
            ens.channels.emplace("W", std::move(W));
            break;
        }
        case Model::Kind::fbm: {
            const double H = model.hurst;
            if (!(H > 0.0) || !(H < 1.0))
                throw std::invalid_argument("simulate: fbm Hurst parameter must be in (0,1)");
            if (m > 4097)
                throw std::invalid_argument("simulate: fbm grid too large for dense factorization");
            Eigen::MatrixXd C = fbm_covariance(ts, H);
            Eigen::LLT<Eigen::MatrixXd> llt(C);
            if (llt.info() != Eigen::Success)
                throw numerical_degeneracy("simulate: fbm covariance factorization failed");
            const Eigen::MatrixXd L = llt.matrixL();
            Eigen::ArrayXXd X(rows, cols);
            parallel_over_paths(n_paths, [&](std::size_t p) {
                Rng rng(derive_stream(seed, p, tag));
                Eigen::VectorXd z(static_cast<Eigen::Index>(m - 1));
                for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
                Eigen::VectorXd path = L.template triangularView<Eigen::Lower>() * z;
                X(static_cast<Eigen::Index>(p), 0) = 0.0;
                for (std::size_t i = 1; i < m; ++i)
                    X(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
                        path(static_cast<Eigen::Index>(i - 1));
            });
            ens.channels.emplace("qv", quadratic_variation(X));
            ens.channels.emplace("fbm", std::move(X));
            break;
        }
        case Model::Kind::bessel3: {
            Eigen::ArrayXXd Z(rows, cols), X(rows, cols);
            parallel_over_paths(n_paths, [&](std::size_t p) {
                Rng rng(derive_stream(seed, p, tag));
                const Eigen::Index r = static_cast<Eigen::Index>(p);
                double b1 = 0.0, b2 = 0.0, b3 = 0.0;
                Z(r, 0) = 0.0;
                for (std::size_t i = 1; i < m; ++i) {
                    const double sd = std::sqrt(ts[i] - ts[i - 1]);
                    b1 += sd * rng.normal();
                    b2 += sd * rng.normal();
                    b3 += sd * rng.normal();
                    Z(r, static_cast<Eigen::Index>(i)) = std::sqrt(b1 * b1 + b2 * b2 + b3 * b3);
                }
                // Future infimum: exact uniform tail law at the horizon, then
                // backward min over the grid. The current point enters the
                // min (inf over (s,T] equals inf over [s,T] for continuous
                // paths), which keeps X <= Z pathwise.
                const double u = rng.uniform01();
                double x = u * Z(r, cols - 1);
                X(r, cols - 1) = x;
                for (Eigen::Index i = cols - 2; i >= 0; --i) {
                    x = std::min(x, Z(r, i));
                    X(r, i) = x;
                }
            });
            ens.channels.emplace("qv", quadratic_variation(Z));
            ens.channels.emplace("Z", std::move(Z));
            ens.channels.emplace("X", std::move(X));
            break;
        }
        case Model::Kind::ou: {
            if (!(model.theta > 0.0) || !(model.sigma > 0.0))
                throw std::invalid_argument("simulate: ou requires theta > 0 and sigma > 0");
            const double var_stat = model.sigma * model.sigma / (2.0 * model.theta);
            Eigen::ArrayXXd N(rows, cols);
            parallel_over_paths(n_paths, [&](std::size_t p) {
                Rng rng(derive_stream(seed, p, tag));
                const Eigen::Index r = static_cast<Eigen::Index>(p);
                double x = std::sqrt(var_stat) * rng.normal();
                N(r, 0) = x;
                for (std::size_t i = 1; i < m; ++i) {
                    const double rho = std::exp(-model.theta * (ts[i] - ts[i - 1]));
                    x = rho * x + std::sqrt(var_stat * (1.0 - rho * rho)) * rng.normal();
                    N(r, static_cast<Eigen::Index>(i)) = x;
                }
            });
            ens.channels.emplace("qv", quadratic_variation(N));
            ens.channels.emplace("noise", std::move(N));
            break;
        }
        case Model::Kind::white: {
            if (model.sigma < 0.0)
                throw std::invalid_argument("simulate: white requires sigma >= 0");
            Eigen::ArrayXXd N(rows, cols);
            parallel_over_paths(n_paths, [&](std::size_t p) {
                Rng rng(derive_stream(seed, p, tag));
                const Eigen::Index r = static_cast<Eigen::Index>(p);
                for (std::size_t i = 0; i < m; ++i)
                    N(r, static_cast<Eigen::Index>(i)) = model.sigma * rng.normal();
            });
            ens.channels.emplace("qv", quadratic_variation(N));
            ens.channels.emplace("noise", std::move(N));
            break;
        }
    }
    return ens;
}

SamplePath quadratic_variation(const SamplePath& path) {
    if (path.values.size() < 2)
        throw std::invalid_argument("quadratic_variation: need at least 2 grid points");
    std::vector<double> qv(path.values.size());
    qv[0] = 0.0;
    for (std::size_t i = 1; i < path.values.size(); ++i) {
        const double d = path.values[i] - path.values[i - 1];
        qv[i] = qv[i - 1] + d * d;
    }
    return SamplePath(path.grid, std::move(qv), PathKind::qv);
}

Eigen::ArrayXXd quadratic_variation(const Eigen::ArrayXXd& channel) {
    if (channel.cols() < 2)
        throw std::invalid_argument("quadratic_variation: need at least 2 grid points");
    Eigen::ArrayXXd qv(channel.rows(), channel.cols());
    qv.col(0).setZero();
    for (Eigen::Index j = 1; j < channel.cols(); ++j) {
        qv.col(j) = qv.col(j - 1) + (channel.col(j) - channel.col(j - 1)).square();
    }
    return qv;
}

SamplePath step_discretize(const SamplePath& path, const TimeGrid& obs) {
    return step_discretize(path, obs.times());
}

SamplePath step_discretize(const SamplePath& path, const std::vector<double>& obs_times) {
    if (obs_times.empty() || obs_times.front() != 0.0)
        throw std::invalid_argument("step_discretize: obs must start at 0");
    const TimeGrid& g = *path.grid;
    std::vector<std::size_t> obs_idx;
    obs_idx.reserve(obs_times.size());
    for (double t : obs_times) {
        auto idx = g.index_of(t);
        if (!idx) throw std::invalid_argument("step_discretize: obs times must be grid times");
        obs_idx.push_back(*idx);
    }
    std::vector<double> out(g.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        while (k + 1 < obs_idx.size() && obs_idx[k + 1] <= i) ++k;
        out[i] = path.values[obs_idx[k] <= i ? obs_idx[k] : 0];
    }
    return SamplePath(path.grid, std::move(out), PathKind::custom);
}

void write_ensemble_csv(const PathEnsemble& ens, std::ostream& out) {
    out << "time,path_id,channel,value\n";
    out.precision(17);
    const auto& ts = ens.grid->times();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            for (const auto& [name, arr] : ens.channels) {
                out << ts[i] << ',' << p << ',' << name << ','
                    << arr(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) << '\n';
            }
        }
    }
}

}  // namespace driftlab
