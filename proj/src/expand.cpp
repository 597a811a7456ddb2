#include "driftlab/expand.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "driftlab/errors.hpp"

namespace driftlab {

std::string ExpansionSpec::describe() const {
    std::ostringstream os;
    if (auto* is = get<InitialSignal>()) {
        os << "initial_signal(";
        for (std::size_t i = 0; i < is->terms.size(); ++i)
            os << (i ? "+" : "") << is->terms[i].second << "*W@" << is->terms[i].first;
        os << ",noise_var=" << is->noise_var << ")";
    } else if (auto* dp = get<DiscretizedProcess>()) {
        if (dp->signal == DiscretizedProcess::Signal::delta_anticipation)
            os << "delta_anticipation(delta=" << dp->delta;
        else
            os << "fbm_bridge(H=" << dp->hurst << ",eps=" << dp->eps_scale;
        os << ",obs=" << dp->obs.size() << "pts)";
    } else if (auto* bl = get<Bessel3Ladder>()) {
        os << "bessel3_ladder(eps=" << bl->eps << ")";
    } else {
        os << "time_change";
    }
    return os.str();
}

Eigen::ArrayXd signal_level(const DiscretizedProcess& dp, const PathEnsemble& ens,
                            std::size_t obs_index) {
    if (obs_index >= dp.obs.size())
        throw std::invalid_argument("signal_level: obs index out of range");
    const double ti = dp.obs[obs_index];
    const TimeGrid& g = *ens.grid;
    if (dp.signal == DiscretizedProcess::Signal::delta_anticipation) {
        auto widx = g.index_of(ti + dp.delta);
        if (!widx)
            throw std::invalid_argument("signal_level: t_i + delta not on ensemble grid");
        Eigen::ArrayXd x = ens.channel("W").col(static_cast<Eigen::Index>(*widx));
        if (dp.noise.kind != NoiseModel::Kind::none) {
            auto nidx = g.index_of(ti);
            if (!nidx) throw std::invalid_argument("signal_level: t_i not on ensemble grid");
            x += ens.channel("noise").col(static_cast<Eigen::Index>(*nidx));
        }
        return x;
    }
    auto widx = g.index_of(dp.t1);
    auto gidx = g.index_of(dp.t1 - ti);
    if (!widx || !gidx)
        throw std::invalid_argument("signal_level: fbm_bridge times not on ensemble grid");
    return ens.channel("W").col(static_cast<Eigen::Index>(*widx)) +
           dp.eps_scale * ens.channel("fbm").col(static_cast<Eigen::Index>(*gidx));
}

FeatureStream::FeatureStream(ExpansionSpec spec, const PathEnsemble& ens)
    : spec_(std::move(spec)), ens_(&ens) {
    if (auto* is = spec_.get<InitialSignal>()) {
        for (auto& [u, c] : is->terms)
            if (!ens.grid->contains(u))
                throw std::invalid_argument("FeatureStream: signal time not on ensemble grid");
        if (is->noise_var > 0.0 && !ens.has_channel("signal_noise"))
            throw std::invalid_argument("FeatureStream: noisy initial signal needs signal_noise channel");
    } else if (auto* dp = spec_.get<DiscretizedProcess>()) {
        if (!ens.grid->refines(dp->obs))
            throw std::invalid_argument("FeatureStream: obs grid must be a subset of the ensemble grid");
        if (dp->noise.kind != NoiseModel::Kind::none && !ens.has_channel("noise"))
            throw std::invalid_argument("FeatureStream: noise model needs a noise channel");
        if (dp->signal == DiscretizedProcess::Signal::fbm_bridge && !ens.has_channel("fbm"))
            throw std::invalid_argument("FeatureStream: fbm_bridge needs an fbm channel");
    } else if (spec_.get<Bessel3Ladder>()) {
        if (!ens.has_channel("Z") || !ens.has_channel("X"))
            throw std::invalid_argument("FeatureStream: Bessel3Ladder requires bessel3 + future_inf channels");
    } else if (auto* tc = spec_.get<TimeChange>()) {
        if (tc->phi.size() != tc->grid.size())
            throw std::invalid_argument("FeatureStream: phi values must match its grid");
    }
}

std::vector<std::string> FeatureStream::labels_at(std::size_t i) const {
    const double s = (*ens_->grid)[i];
    std::vector<std::string> out;
    if (spec_.get<InitialSignal>()) {
        out.push_back("L");
    } else if (auto* dp = spec_.get<DiscretizedProcess>()) {
        const auto& obs = dp->obs.times();
        for (std::size_t k = 0; k < obs.size() && obs[k] <= s + 1e-12; ++k)
            out.push_back(k == 0 ? "X0" : "dX" + std::to_string(k));
    } else if (spec_.get<Bessel3Ladder>()) {
        out = {"Xq", "Z"};
    } else {
        out = {"W_phi_s", "W_s"};
    }
    return out;
}

Eigen::ArrayXXd FeatureStream::features_at(std::size_t i) const {
    const PathEnsemble& ens = *ens_;
    const Eigen::Index n = static_cast<Eigen::Index>(ens.n_paths);
    const double s = (*ens.grid)[i];

    if (auto* is = spec_.get<InitialSignal>()) {
        Eigen::ArrayXXd f(n, 1);
        Eigen::ArrayXd v = Eigen::ArrayXd::Zero(n);
        for (auto& [u, c] : is->terms)
            v += c * ens.channel("W").col(static_cast<Eigen::Index>(*ens.grid->index_of(u)));
        if (is->noise_var > 0.0) v += ens.channel("signal_noise").col(0);
        f.col(0) = v;
        return f;
    }
    if (auto* dp = spec_.get<DiscretizedProcess>()) {
        std::vector<std::size_t> revealed;
        for (std::size_t k = 0; k < dp->obs.size() && dp->obs[k] <= s + 1e-12; ++k)
            revealed.push_back(k);
        Eigen::ArrayXXd f(n, static_cast<Eigen::Index>(revealed.size()));
        Eigen::ArrayXd prev;
        for (std::size_t k = 0; k < revealed.size(); ++k) {
            Eigen::ArrayXd level = signal_level(*dp, ens, revealed[k]);
            f.col(static_cast<Eigen::Index>(k)) = (k == 0) ? level : (level - prev).eval();
            prev = std::move(level);
        }
        return f;
    }
    if (auto* bl = spec_.get<Bessel3Ladder>()) {
        Eigen::ArrayXXd f(n, 2);
        const auto col = static_cast<Eigen::Index>(i);
        f.col(0) = (ens.channel("X").col(col) / bl->eps).floor() * bl->eps;
        f.col(1) = ens.channel("Z").col(col);
        return f;
    }
    auto* tc = spec_.get<TimeChange>();
    GridFunction phi(tc->grid, tc->phi);
    const double phis = phi(s);
    auto pidx = ens.grid->index_of(phis, 1e-9);
    if (!pidx)
        throw std::invalid_argument("FeatureStream: phi(s) not on ensemble grid");
    Eigen::ArrayXXd f(n, 2);
    f.col(0) = ens.channel("W").col(static_cast<Eigen::Index>(*pidx));
    f.col(1) = ens.channel("W").col(static_cast<Eigen::Index>(i));
    return f;
}

double bessel_ladder_drift(double z, double x, double eps) {
    if (!(z > 0.0) || x < 0.0 || x > z || !(eps > 0.0))
        throw std::invalid_argument("bessel_ladder_drift: need 0 <= x <= z, z > 0, eps > 0");
    // z <= (p+1) eps picks p* = ceil(z/eps) - 1, the only candidate.
    double pstar = std::ceil(z / eps) - 1.0;
    if (pstar < 0.0) pstar = 0.0;
    const bool active = (pstar * eps < x) && (z <= (pstar + 1.0) * eps);
    if (!active) return 1.0 / z;
    const double denom = z - pstar * eps;
    if (denom <= 1e-12)
        throw ladder_singularity("bessel_ladder_drift: Z - p*eps below 1e-12");
    return 1.0 / z - 1.0 / denom;
}

GridFunction::GridFunction(TimeGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size())
        throw std::invalid_argument("GridFunction: values length must equal grid length");
    for (std::size_t i = 1; i < values_.size(); ++i)
        if (values_[i] < values_[i - 1] - 1e-12)
            throw std::invalid_argument("GridFunction: phi must be non-decreasing");
    if (values_.front() < 0.0)
        throw std::invalid_argument("GridFunction: phi(0) must be >= 0");
}

double GridFunction::operator()(double u) const {
    const auto& ts = grid_.times();
    if (u <= ts.front()) return values_.front();
    if (u >= ts.back()) return values_.back();
    std::size_t i = grid_.last_index_leq(u);
    if (i + 1 >= ts.size()) return values_.back();
    const double w = (u - ts[i]) / (ts[i + 1] - ts[i]);
    return values_[i] + w * (values_[i + 1] - values_[i]);
}

double GridFunction::inverse(double level) const {
    const auto& ts = grid_.times();
    if (level < values_.front() - 1e-12 || level > values_.back() + 1e-12)
        return std::numeric_limits<double>::infinity();
    if (level <= values_.front()) return ts.front();
    for (std::size_t i = 1; i < values_.size(); ++i) {
        if (values_[i] >= level) {
            if (values_[i] == values_[i - 1]) return ts[i - 1];
            const double w = (level - values_[i - 1]) / (values_[i] - values_[i - 1]);
            return ts[i - 1] + w * (ts[i] - ts[i - 1]);
        }
    }
    return ts.back();
}

double anticipation_tau(const GridFunction& phi, double s, double t) {
    if (s > t) throw std::invalid_argument("anticipation_tau: s <= t required");
    const double phis = phi(s);
    // Displayed formula implemented verbatim. The two branches agree at
    // t = phi_s (this code takes the first there); the t > phi_s branch can
    // return s v phi^{-1}_s > s even though tau is defined as an infimum
    // over u <= s -- a tension in the source formula left as is.
    if (t <= phis + 1e-12) return phi.inverse(t);
    return std::max(s, phi.inverse(s));
}

TimeChangeDrift time_change_drift(
    const std::vector<double>& u_grid, const std::vector<double>& w_values, double s,
    const std::function<double(double, double, double)>& f,
    const std::function<double(double, double)>& dfdt_at_s) {
    if (u_grid.size() < 3 || u_grid.size() != w_values.size())
        throw std::invalid_argument("time_change_drift: need matching u grid and values");
    if (!(u_grid.front() == 0.0) || u_grid.back() < s - 1e-12)
        throw std::invalid_argument("time_change_drift: u grid must cover [0, s]");

    // Density checks at t = s: nonnegative, integrates to 1.
    std::vector<double> fu(u_grid.size()), dfu(u_grid.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < u_grid.size(); ++i) {
        if (u_grid[i] > s + 1e-12) break;
        fu[i] = f(u_grid[i], s, s);
        if (fu[i] < -1e-9)
            throw invalid_density("time_change_drift: density negative beyond tolerance");
        dfu[i] = dfdt_at_s ? dfdt_at_s(u_grid[i], s)
                           : (f(u_grid[i], s, s + h) - f(u_grid[i], s, s - h)) / (2.0 * h);
    }

    auto trapezoid = [&](std::size_t stride, const std::vector<double>& vals) {
        double acc = 0.0;
        std::size_t prev = 0;
        for (std::size_t i = stride; i < u_grid.size() && u_grid[prev] < s - 1e-12;
             i += stride) {
            const std::size_t j = std::min(i, u_grid.size() - 1);
            const double a = u_grid[prev], b = std::min(u_grid[j], s);
            if (b <= a) break;
            acc += 0.5 * (vals[prev] + vals[j]) * (b - a);
            prev = j;
        }
        return acc;
    };

    const double mass = trapezoid(1, fu);
    if (std::abs(mass - 1.0) > 1e-6)
        throw invalid_density("time_change_drift: density mass deviates from 1 beyond 1e-6");

    std::vector<double> integrand(u_grid.size(), 0.0);
    for (std::size_t i = 0; i < u_grid.size(); ++i) integrand[i] = w_values[i] * dfu[i];
    const double full = trapezoid(1, integrand);
    const double half = trapezoid(2, integrand);

    TimeChangeDrift out;
    out.alpha = full;
    out.accuracy_warning = std::abs(full - half) > 1e-4 * (1.0 + std::abs(full));
    return out;
}

}  // namespace driftlab
