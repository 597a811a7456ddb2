#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "driftlab/gridpath.hpp"

namespace driftlab {

struct NoiseModel {
    enum class Kind { none, white, ou };
    Kind kind = Kind::none;
    double sigma = 0.0;
    double theta = 1.0;

    static NoiseModel none() { return {}; }
    static NoiseModel white(double sigma) { return {Kind::white, sigma, 0.0}; }
    static NoiseModel ou(double theta, double sigma) { return {Kind::ou, sigma, theta}; }
};

// Initial expansion with L = sum c_i W_{u_i} + nu, nu ~ N(0, noise_var).
struct InitialSignal {
    std::vector<std::pair<double, double>> terms;  // (time, coefficient)
    double noise_var = 0.0;

    static InitialSignal terminal(double time, double noise_var = 0.0) {
        return {{{time, 1.0}}, noise_var};
    }
};

// Progressive expansion with a discretely observed signal process.
//   delta_anticipation: X_t = W_{t+delta} + eps_t
//   fbm_bridge:         X_t = W_{T1} + eps_scale * G_{T1 - t},  G an fBm(H)
// Observations are revealed at the obs-grid times, conditioning variables are
// the increments (X_{t_0}, X_{t_1}-X_{t_0}, ...).
struct DiscretizedProcess {
    enum class Signal { delta_anticipation, fbm_bridge };
    Signal signal = Signal::delta_anticipation;
    double delta = 0.0;       // delta_anticipation
    double hurst = 0.5;       // fbm_bridge
    double eps_scale = 1.0;   // fbm_bridge
    double t1 = 1.0;          // fbm_bridge anchor time
    NoiseModel noise;
    TimeGrid obs;
};

struct Bessel3Ladder {
    double eps = 1.0;
};

// Deterministic time change phi given as a grid function.
struct TimeChange {
    TimeGrid grid;
    std::vector<double> phi;
};

struct ExpansionSpec {
    std::variant<InitialSignal, DiscretizedProcess, Bessel3Ladder, TimeChange> v;

    ExpansionSpec(InitialSignal s) : v(std::move(s)) {}
    ExpansionSpec(DiscretizedProcess s) : v(std::move(s)) {}
    ExpansionSpec(Bessel3Ladder s) : v(s) {}
    ExpansionSpec(TimeChange s) : v(std::move(s)) {}

    template <typename T>
    const T* get() const { return std::get_if<T>(&v); }
    std::string describe() const;
};

// Signal level X_{t_i} across paths, materialized from ensemble channels.
Eigen::ArrayXd signal_level(const DiscretizedProcess& dp, const PathEnsemble& ens,
                            std::size_t obs_index);

// Per-time conditioning features induced by a spec on an ensemble. Feature
// vectors are computed on demand; at time s they depend only on data whose
// revelation time under the spec is <= s.
class FeatureStream {
public:
    FeatureStream(ExpansionSpec spec, const PathEnsemble& ens);

    const TimeGrid& grid() const { return *ens_->grid; }
    const ExpansionSpec& spec() const { return spec_; }
    const PathEnsemble& ensemble() const { return *ens_; }

    std::vector<std::string> labels_at(std::size_t time_index) const;
    Eigen::ArrayXXd features_at(std::size_t time_index) const;  // n_paths x k

private:
    ExpansionSpec spec_;
    const PathEnsemble* ens_;
};

// Exclusion of a (path, time) sample whose ladder term hits the singularity
// Z - p*eps <= 1e-12; callers drop the path from norm estimates and count it.
class ladder_singularity : public std::runtime_error {
public:
    explicit ladder_singularity(const std::string& what) : std::runtime_error(what) {}
};

// alpha^n at a ladder state: 1/z minus the single active term 1/(z - p eps),
// active iff p*eps < x and z <= (p+1)*eps.
double bessel_ladder_drift(double z, double x, double eps);

// Grid function u -> phi(u) with linear interpolation and pseudo-inverse
// phi^{-1}(u) = inf{v >= 0 : phi(v) = u} (+infinity when unreached).
class GridFunction {
public:
    GridFunction(TimeGrid grid, std::vector<double> values);
    double operator()(double u) const;
    double inverse(double level) const;
    const TimeGrid& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }

private:
    TimeGrid grid_;
    std::vector<double> values_;
};

// tau(s,t) = phi^{-1}_t 1_{t <= phi_s} + (s v phi^{-1}_s) 1_{t > phi_s};
// the t == phi_s boundary uses the first branch (the two agree there).
double anticipation_tau(const GridFunction& phi, double s, double t);

struct TimeChangeDrift {
    double alpha = 0.0;
    bool accuracy_warning = false;  // two quadrature levels disagreed beyond 1e-4 rel
};

// alpha_s = int_0^s w(u) * d/dt f(u; s, t)|_{t=s} du by composite trapezoid on
// u_grid; dfdt analytic when supplied, else central difference with h=1e-6.
TimeChangeDrift time_change_drift(
    const std::vector<double>& u_grid, const std::vector<double>& w_values, double s,
    const std::function<double(double u, double s, double t)>& f,
    const std::function<double(double u, double s)>& dfdt_at_s = nullptr);

}  // namespace driftlab
