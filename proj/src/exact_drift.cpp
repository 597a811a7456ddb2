#include "driftlab/exact_drift.hpp"

#include <stdexcept>

namespace driftlab {

namespace {

// Signal levels for every obs slot, cached so increments are differences of
// two columns.
Eigen::MatrixXd signal_levels(const ExpansionSpec& spec, const PathEnsemble& ens) {
    if (auto* is = spec.get<InitialSignal>()) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(ens.n_paths), 1);
        Eigen::ArrayXd v = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(ens.n_paths));
        for (auto& [u, c] : is->terms)
            v += c * ens.channel("W").col(static_cast<Eigen::Index>(*ens.grid->index_of(u)));
        if (is->noise_var > 0.0) v += ens.channel("signal_noise").col(0);
        out.col(0) = v;
        return out;
    }
    auto* dp = spec.get<DiscretizedProcess>();
    if (!dp) throw std::invalid_argument("signal_levels: Gaussian spec required");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ens.n_paths),
                        static_cast<Eigen::Index>(dp->obs.size()));
    for (std::size_t i = 0; i < dp->obs.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = signal_level(*dp, ens, i).matrix();
    return out;
}

}  // namespace

Eigen::MatrixXd observed_values(const DriftWeights& w, const ExpansionSpec& spec,
                                const PathEnsemble& ens) {
    const Eigen::MatrixXd levels = signal_levels(spec, ens);
    Eigen::MatrixXd V(static_cast<Eigen::Index>(ens.n_paths),
                      static_cast<Eigen::Index>(w.observed.size()));
    const Eigen::ArrayXXd& W = ens.channel("W");
    for (std::size_t i = 0; i < w.observed.size(); ++i) {
        const ObsVar& o = w.observed[i];
        const Eigen::Index col = static_cast<Eigen::Index>(i);
        switch (o.kind) {
            case ObsVar::Kind::anchor_w:
            case ObsVar::Kind::resolved_w: {
                auto idx = ens.grid->index_of(o.time, 1e-9);
                if (!idx)
                    throw std::invalid_argument("observed_values: time " +
                                                std::to_string(o.time) +
                                                " not on the ensemble grid");
                V.col(col) = W.col(static_cast<Eigen::Index>(*idx)).matrix();
                break;
            }
            case ObsVar::Kind::signal_incr: {
                const Eigen::Index k = static_cast<Eigen::Index>(o.obs_index);
                if (k == 0)
                    V.col(col) = levels.col(0);
                else
                    V.col(col) = levels.col(k) - levels.col(k - 1);
                break;
            }
        }
    }
    return V;
}

DriftEstimate gaussian_exact_drift(const ExpansionSpec& spec, const PathEnsemble& ens,
                                   const std::string& method) {
    const TimeGrid& g = *ens.grid;
    const Eigen::Index n = static_cast<Eigen::Index>(ens.n_paths);
    const Eigen::Index m = static_cast<Eigen::Index>(g.size());
    const Eigen::MatrixXd levels = signal_levels(spec, ens);
    const Eigen::ArrayXXd& W = ens.channel("W");

    Eigen::ArrayXXd alphas(n, m - 1);
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
        const double s = g[static_cast<std::size_t>(j)];
        DriftWeights w = (method == "jacod") ? jacod_drift_weights(spec, s)
                                             : projection_drift_weights(spec, s);
        if (w.observed.empty()) {
            alphas.col(j).setZero();
            continue;
        }
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < w.observed.size(); ++i) {
            const double wi = w.weights(static_cast<Eigen::Index>(i));
            if (wi == 0.0) continue;
            const ObsVar& o = w.observed[i];
            switch (o.kind) {
                case ObsVar::Kind::anchor_w:
                case ObsVar::Kind::resolved_w: {
                    auto idx = ens.grid->index_of(o.time, 1e-9);
                    if (!idx)
                        throw std::invalid_argument(
                            "gaussian_exact_drift: observed time not on grid");
                    acc += wi * W.col(static_cast<Eigen::Index>(*idx)).matrix();
                    break;
                }
                case ObsVar::Kind::signal_incr: {
                    const Eigen::Index k = static_cast<Eigen::Index>(o.obs_index);
                    if (k == 0)
                        acc += wi * levels.col(0);
                    else
                        acc += wi * (levels.col(k) - levels.col(k - 1));
                    break;
                }
            }
        }
        alphas.col(j) = acc.array();
    }
    return make_estimate(ens.grid, std::move(alphas), method, ens.channel("qv"));
}

}  // namespace driftlab
