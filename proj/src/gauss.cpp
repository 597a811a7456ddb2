#include "driftlab/gauss.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "driftlab/errors.hpp"

namespace driftlab {

namespace {

std::string format_time(double t) {
    std::ostringstream os;
    os.precision(12);
    os << t;
    return os.str();
}

double prim_cov(const Prim& a, const Prim& b, const KernelParams& kp) {
    if (a.fam != b.fam) return 0.0;
    switch (a.fam) {
        case Prim::Fam::W:
            return std::min(a.time, b.time);
        case Prim::Fam::G: {
            const double H2 = 2.0 * kp.hurst;
            return 0.5 * (std::pow(a.time, H2) + std::pow(b.time, H2) -
                          std::pow(std::abs(a.time - b.time), H2));
        }
        case Prim::Fam::Eps: {
            if (a.index == -1 || b.index == -1)
                return a.index == b.index ? kp.init_noise_var : 0.0;
            switch (kp.noise.kind) {
                case NoiseModel::Kind::none: return 0.0;
                case NoiseModel::Kind::white:
                    return a.index == b.index ? kp.noise.sigma * kp.noise.sigma : 0.0;
                case NoiseModel::Kind::ou:
                    return kp.noise.sigma * kp.noise.sigma / (2.0 * kp.noise.theta) *
                           std::exp(-kp.noise.theta * std::abs(a.time - b.time));
            }
            return 0.0;
        }
    }
    return 0.0;
}

// LDLT solve with the spec's ridge policy: plain solve when well conditioned,
// one retry with ridge 1e-10 trace/dim, numerical_degeneracy after that.
Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& A, const Eigen::MatrixXd& rhs,
                          bool* ridge_used = nullptr) {
    if (ridge_used) *ridge_used = false;
    if (A.rows() == 0) return Eigen::MatrixXd(0, rhs.cols());
    if (!(A.trace() > 0.0))
        throw numerical_degeneracy("gauss: covariance block has nonpositive trace");
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const auto diag_ok = [&](const Eigen::LDLT<Eigen::MatrixXd>& f) {
        const Eigen::VectorXd d = f.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        return f.info() == Eigen::Success && d.minCoeff() > 1e-12 * std::max(dmax, 1e-30);
    };
    if (diag_ok(ldlt)) return ldlt.solve(rhs);
    const double ridge = 1e-10 * A.trace() / static_cast<double>(A.rows());
    Eigen::MatrixXd Ar = A;
    Ar.diagonal().array() += std::max(ridge, 1e-300);
    Eigen::LDLT<Eigen::MatrixXd> ldlt2(Ar);
    if (ldlt2.info() != Eigen::Success || ldlt2.vectorD().minCoeff() <= 0.0)
        throw numerical_degeneracy("gauss: observed covariance degenerate beyond ridge tolerance");
    if (ridge_used) *ridge_used = true;
    return ldlt2.solve(rhs);
}

GaussVar w_at(double t) { return {"W@" + format_time(t), {{Prim{Prim::Fam::W, t, 0}, 1.0}}}; }

GaussVar combine_diff(const GaussVar& a, const GaussVar& b, const std::string& label) {
    GaussVar out{label, a.combo};
    for (auto [p, c] : b.combo) out.combo.emplace_back(p, -c);
    return out;
}

GaussVar signal_var(const DiscretizedProcess& dp, std::size_t i) {
    const double ti = dp.obs[i];
    GaussVar v{"X@" + format_time(ti), {}};
    if (dp.signal == DiscretizedProcess::Signal::delta_anticipation) {
        v.combo.emplace_back(Prim{Prim::Fam::W, ti + dp.delta, 0}, 1.0);
        if (dp.noise.kind != NoiseModel::Kind::none)
            v.combo.emplace_back(Prim{Prim::Fam::Eps, ti, static_cast<int>(i)}, 1.0);
    } else {
        v.combo.emplace_back(Prim{Prim::Fam::W, dp.t1, 0}, 1.0);
        v.combo.emplace_back(Prim{Prim::Fam::G, dp.t1 - ti, 0}, dp.eps_scale);
    }
    return v;
}

}  // namespace

double cov(const GaussVar& a, const GaussVar& b, const KernelParams& kp) {
    double acc = 0.0;
    for (const auto& [pa, ca] : a.combo)
        for (const auto& [pb, cb] : b.combo) acc += ca * cb * prim_cov(pa, pb, kp);
    return acc;
}

double dcov_dt(double t, const GaussVar& v) {
    double acc = 0.0;
    for (const auto& [p, c] : v.combo)
        if (p.fam == Prim::Fam::W && t < p.time - 1e-15) acc += c;
    return acc;
}

Eigen::Index GaussianSystem::index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) return static_cast<Eigen::Index>(i);
    throw std::invalid_argument("GaussianSystem: unknown label '" + label + "'");
}

void GaussianSystem::validate() const {
    const Eigen::Index n = cov.rows();
    if (cov.cols() != n || mean.size() != n ||
        labels.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("GaussianSystem: dimension mismatch");
    std::set<std::string> uniq(labels.begin(), labels.end());
    if (uniq.size() != labels.size())
        throw std::invalid_argument("GaussianSystem: labels must be distinct");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("GaussianSystem: covariance not symmetric within 1e-12");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument("GaussianSystem: covariance not numerically PSD");
}

ConditionalRepr condition(const GaussianSystem& sys, const std::string& target,
                          const std::vector<std::string>& observed) {
    const Eigen::Index ti = sys.index_of(target);
    const Eigen::Index k = static_cast<Eigen::Index>(observed.size());
    Eigen::MatrixXd S(k, k);
    Eigen::VectorXd c(k), mu(k);
    std::vector<Eigen::Index> oi(observed.size());
    for (Eigen::Index i = 0; i < k; ++i) oi[static_cast<std::size_t>(i)] = sys.index_of(observed[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < k; ++i) {
        c(i) = sys.cov(oi[static_cast<std::size_t>(i)], ti);
        mu(i) = sys.mean(oi[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < k; ++j)
            S(i, j) = sys.cov(oi[static_cast<std::size_t>(i)], oi[static_cast<std::size_t>(j)]);
    }
    ConditionalRepr out;
    out.target = target;
    out.observed = observed;
    out.weights = solve_spd(S, c, &out.ridge_used);
    out.intercept = sys.mean(ti) - out.weights.dot(mu);
    const double vt = sys.cov(ti, ti);
    out.residual_var = std::clamp(vt - out.weights.dot(c), 0.0, vt);
    return out;
}

AssembledSystem assemble_full(const ExpansionSpec& spec, double s, double t) {
    if (s < 0.0 || t < s)
        throw std::invalid_argument("assemble: require 0 <= s <= t");
    if (spec.get<Bessel3Ladder>() || spec.get<TimeChange>())
        throw unsupported_spec("assemble: spec is not jointly Gaussian with W (" +
                               spec.describe() + ")");

    AssembledSystem A;
    std::vector<GaussVar> vars;
    std::vector<ObsVar> obs;

    auto add_resolved = [&](double u) {
        if (u > s + 1e-12 || u <= 1e-15) return;              // only F_s variables
        if (std::abs(u - s) <= 1e-12) return;                 // anchor covers u == s
        for (const auto& o : obs)
            if (o.kind == ObsVar::Kind::resolved_w && std::abs(o.time - u) <= 1e-12) return;
        vars.push_back(w_at(u));
        obs.push_back({ObsVar::Kind::resolved_w, u, 0, vars.back().label});
    };

    if (s > 0.0) {
        vars.push_back(w_at(s));
        vars.back().label = "W@s";
        obs.push_back({ObsVar::Kind::anchor_w, s, 0, "W@s"});
    }

    if (auto* is = spec.get<InitialSignal>()) {
        A.kp.init_noise_var = is->noise_var;
        for (auto& [u, c] : is->terms) add_resolved(u);
        if (!is->terms.empty() || is->noise_var > 0.0) {
            GaussVar L{"L", {}};
            for (auto& [u, c] : is->terms) L.combo.emplace_back(Prim{Prim::Fam::W, u, 0}, c);
            if (is->noise_var > 0.0) L.combo.emplace_back(Prim{Prim::Fam::Eps, 0.0, -1}, 1.0);
            vars.push_back(std::move(L));
            obs.push_back({ObsVar::Kind::signal_incr, 0.0, 0, "L"});
        }
    } else if (auto* dp = spec.get<DiscretizedProcess>()) {
        A.kp.hurst = dp->hurst;
        A.kp.noise = dp->noise;
        std::vector<std::size_t> revealed;
        for (std::size_t i = 0; i < dp->obs.size() && dp->obs[i] <= s + 1e-12; ++i)
            revealed.push_back(i);
        if (dp->signal == DiscretizedProcess::Signal::delta_anticipation) {
            for (std::size_t i : revealed) add_resolved(dp->obs[i] + dp->delta);
        } else {
            add_resolved(dp->t1);
        }
        GaussVar prev;
        for (std::size_t k = 0; k < revealed.size(); ++k) {
            GaussVar level = signal_var(*dp, revealed[k]);
            GaussVar incr = (k == 0)
                                ? level
                                : combine_diff(level, prev, "d" + level.label);
            vars.push_back(incr);
            obs.push_back({ObsVar::Kind::signal_incr, dp->obs[revealed[k]], revealed[k],
                           vars.back().label});
            prev = std::move(level);
        }
    }

    // Target last.
    GaussVar target = w_at(t);
    target.label = "W@t";
    vars.push_back(std::move(target));

    const Eigen::Index n = static_cast<Eigen::Index>(vars.size());
    GaussianSystem sys;
    sys.mean = Eigen::VectorXd::Zero(n);
    sys.cov.resize(n, n);
    sys.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        sys.labels[static_cast<std::size_t>(i)] = vars[static_cast<std::size_t>(i)].label;
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double v = cov(vars[static_cast<std::size_t>(i)],
                                 vars[static_cast<std::size_t>(j)], A.kp);
            sys.cov(i, j) = v;
            sys.cov(j, i) = v;
        }
    }

    A.sys = std::move(sys);
    A.vars = std::move(vars);
    A.observed = std::move(obs);
    A.target = n - 1;
    A.anchor = (s > 0.0) ? 0 : -1;
    return A;
}

GaussianSystem assemble(const ExpansionSpec& spec, double s, double t) {
    return assemble_full(spec, s, t).sys;
}

namespace {

Eigen::MatrixXd observed_cov(const AssembledSystem& A) {
    const Eigen::Index k = static_cast<Eigen::Index>(A.observed.size());
    return A.sys.cov.topLeftCorner(k, k);
}

}  // namespace

DriftWeights projection_drift_weights(const ExpansionSpec& spec, double s) {
    AssembledSystem A = assemble_full(spec, s, s);
    const Eigen::Index k = static_cast<Eigen::Index>(A.observed.size());
    Eigen::VectorXd cdot(k);
    for (Eigen::Index i = 0; i < k; ++i)
        cdot(i) = dcov_dt(s, A.vars[static_cast<std::size_t>(i)]);
    DriftWeights out;
    out.observed = A.observed;
    out.weights = (k == 0) ? Eigen::VectorXd(0) : solve_spd(observed_cov(A), cdot).col(0);
    return out;
}

DriftWeights jacod_drift_weights(const ExpansionSpec& spec, double s) {
    AssembledSystem A = assemble_full(spec, s, s);
    std::vector<Eigen::Index> fidx, yidx;
    for (std::size_t i = 0; i < A.observed.size(); ++i) {
        if (A.observed[i].kind == ObsVar::Kind::signal_incr)
            yidx.push_back(static_cast<Eigen::Index>(i));
        else
            fidx.push_back(static_cast<Eigen::Index>(i));
    }
    DriftWeights out;
    out.observed = A.observed;
    out.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(A.observed.size()));
    if (yidx.empty()) return out;

    const Eigen::Index nf = static_cast<Eigen::Index>(fidx.size());
    const Eigen::Index ny = static_cast<Eigen::Index>(yidx.size());
    Eigen::MatrixXd Sff(nf, nf), Syf(ny, nf), Syy(ny, ny);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b) Sff(a, b) = A.sys.cov(fidx[a], fidx[b]);
    for (Eigen::Index a = 0; a < ny; ++a) {
        for (Eigen::Index b = 0; b < nf; ++b) Syf(a, b) = A.sys.cov(yidx[a], fidx[b]);
        for (Eigen::Index b = 0; b < ny; ++b) Syy(a, b) = A.sys.cov(yidx[a], yidx[b]);
    }

    // m_s = R f, C = cov(Y | F_s), beta = dm/dW_s.
    Eigen::MatrixXd R(ny, nf);
    Eigen::VectorXd beta(ny);
    if (nf > 0) {
        R = solve_spd(Sff, Syf.transpose()).transpose();
        Eigen::Index anchor_col = -1;
        for (Eigen::Index b = 0; b < nf; ++b)
            if (A.observed[static_cast<std::size_t>(fidx[b])].kind == ObsVar::Kind::anchor_w)
                anchor_col = b;
        beta = (anchor_col >= 0) ? Eigen::VectorXd(R.col(anchor_col))
                                 : Eigen::VectorXd(Eigen::VectorXd::Zero(ny));
    } else {
        // s = 0: conditional mean has loading d/du cov(Y, W_u)|_{u=0+}.
        R.resize(ny, 0);
        for (Eigen::Index a = 0; a < ny; ++a)
            beta(a) = dcov_dt(0.0, A.vars[static_cast<std::size_t>(yidx[a])]);
    }
    Eigen::MatrixXd C = Syy;
    if (nf > 0) C -= R * Syf.transpose();
    C = 0.5 * (C + C.transpose());
    if (!(C.trace() > 1e-12 * std::max(Syy.trace(), 1e-30)))
        throw numerical_degeneracy("jacod_drift: conditional signal covariance degenerate");

    Eigen::VectorXd v;
    try {
        v = solve_spd(C, beta).col(0);
    } catch (const numerical_degeneracy&) {
        throw numerical_degeneracy("jacod_drift: conditional signal covariance degenerate");
    }

    for (Eigen::Index a = 0; a < ny; ++a) out.weights(yidx[a]) = v(a);
    if (nf > 0) {
        Eigen::VectorXd wf = -R.transpose() * v;
        for (Eigen::Index b = 0; b < nf; ++b) out.weights(fidx[b]) = wf(b);
    }
    return out;
}

double projection_drift(const ExpansionSpec& spec, double s,
                        const Eigen::VectorXd& observed_values) {
    DriftWeights w = projection_drift_weights(spec, s);
    if (w.weights.size() != observed_values.size())
        throw std::invalid_argument("projection_drift: observed values size mismatch");
    return w.apply(observed_values);
}

double jacod_drift(const ExpansionSpec& spec, double s,
                   const Eigen::VectorXd& observed_values) {
    DriftWeights w = jacod_drift_weights(spec, s);
    if (w.weights.size() != observed_values.size())
        throw std::invalid_argument("jacod_drift: observed values size mismatch");
    return w.apply(observed_values);
}

double projection_drift_fd(const ExpansionSpec& spec, double s,
                           const Eigen::VectorXd& observed_values, double h) {
    AssembledSystem A = assemble_full(spec, s, s);
    const Eigen::Index k = static_cast<Eigen::Index>(A.observed.size());
    if (observed_values.size() != k)
        throw std::invalid_argument("projection_drift_fd: observed values size mismatch");
    if (k == 0) return 0.0;
    auto cond_mean = [&](double t) {
        Eigen::VectorXd c(k);
        GaussVar target = w_at(t);
        for (Eigen::Index i = 0; i < k; ++i)
            c(i) = cov(A.vars[static_cast<std::size_t>(i)], target, A.kp);
        Eigen::VectorXd w = solve_spd(observed_cov(A), c).col(0);
        return w.dot(observed_values);
    };
    return (cond_mean(s + 2.0 * h) - cond_mean(s)) / (2.0 * h);
}

GaussianSystem brownian_system(const std::vector<double>& times) {
    GaussianSystem sys;
    const Eigen::Index n = static_cast<Eigen::Index>(times.size());
    sys.mean = Eigen::VectorXd::Zero(n);
    sys.cov.resize(n, n);
    sys.labels.resize(times.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        sys.labels[static_cast<std::size_t>(i)] = "W@" + format_time(times[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j)
            sys.cov(i, j) = std::min(times[static_cast<std::size_t>(i)],
                                     times[static_cast<std::size_t>(j)]);
    }
    return sys;
}

}  // namespace driftlab
