#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Cholesky>

#include "driftlab/drift.hpp"
#include "driftlab/exact_drift.hpp"
#include "driftlab/experiment.hpp"
#include "driftlab/rng.hpp"

using namespace driftlab;

namespace {

// Compensated Ito ensemble fixture shared by a few cases.
struct ItoFixture {
    PathEnsemble ens;
    DriftEstimate alpha;
    Eigen::ArrayXXd qv_dt;

    explicit ItoFixture(std::size_t n_paths = 8000, uint64_t seed = 3) {
        auto grid = TimeGrid::uniform(0.9, 128).with_times({0.25, 0.5, 0.75});
        std::vector<double> ts = grid.times();
        ts.push_back(1.0);
        ens = simulate(Model::brownian(), TimeGrid(ts), n_paths, seed);
        const auto& W = ens.channel("W");
        const Eigen::Index m = W.cols();
        Eigen::ArrayXXd alphas(W.rows(), m - 1);
        for (Eigen::Index j = 0; j + 1 < m; ++j) {
            const double s = (*ens.grid)[std::size_t(j)];
            alphas.col(j) = (W.col(m - 1) - W.col(j)) / (1.0 - s);
        }
        alpha = make_estimate(ens.grid, std::move(alphas), "closed_form", ens.channel("qv"));
        qv_dt = dt_bracket(*ens.grid, n_paths);
    }
};

}  // namespace

TEST_CASE("closed_form_drift: worked values") {
    CHECK(closed_form_drift("ito", {{"s", 0.5}, {"W_s", 0.2}, {"W_1", 0.7}}) ==
          doctest::Approx(1.0));
    // fbm_noise with eps = 0 reduces to ito on identical state.
    const double ito = closed_form_drift("ito", {{"s", 0.3}, {"W_s", 0.1}, {"W_1", 0.6}});
    const double degenerate = closed_form_drift(
        "fbm_noise",
        {{"s", 0.3}, {"dW", 0.5}, {"G", 0.4}, {"eps", 0.0}, {"H", 0.25}});
    CHECK(degenerate == doctest::Approx(ito));
    CHECK(closed_form_drift("fbm_noise", {{"s", 0.5},
                                          {"dW", 0.3},
                                          {"G", 0.1},
                                          {"eps", 1.0},
                                          {"H", 0.25}}) ==
          doctest::Approx(0.4 / (0.5 + std::pow(0.5, 0.5))).epsilon(1e-6));
    CHECK(closed_form_drift("fbm_noise", {{"s", 0.5},
                                          {"dW", 0.3},
                                          {"G", 0.1},
                                          {"eps", 1.0},
                                          {"H", 0.25}}) == doctest::Approx(0.331371).epsilon(1e-5));
}

TEST_CASE("closed_form_drift: domain and field errors") {
    CHECK_THROWS_AS(closed_form_drift("ito", {{"s", 1.0}, {"W_s", 0.0}, {"W_1", 0.0}}),
                    std::domain_error);
    CHECK_THROWS_AS(closed_form_drift("ito", {{"s", 0.5}}), std::invalid_argument);
    CHECK_THROWS_AS(closed_form_drift("nope", {}), std::invalid_argument);
}

TEST_CASE("regression_drift: exact drift values as the feature give slope 1") {
    ItoFixture fx(12000, 41);
    // Feed the closed-form drift at s = 0.5 in as the (constant) feature;
    // at that time the fitted coefficient is 1 and the intercept 0.
    const std::size_t j = *fx.ens.grid->index_of(0.5);
    PathEnsemble with_feature = fx.ens;
    with_feature.channels["signal_noise"] =
        fx.alpha.alphas.col(Eigen::Index(j)).replicate(1, 1);
    FeatureStream features(ExpansionSpec{InitialSignal{{}, 1.0}}, with_feature);
    DriftEstimate est = regression_drift(with_feature, features);
    CHECK(est.method == "regression");

    const Eigen::ArrayXd F = features.features_at(j).col(0);
    Eigen::ArrayXd y = (fx.ens.channel("W").col(Eigen::Index(j + 1)) -
                        fx.ens.channel("W").col(Eigen::Index(j))) /
                       fx.ens.grid->dt(j);
    Eigen::ArrayXd fitted = est.alphas.col(Eigen::Index(j));
    const double n = double(F.size());
    const double vF = (F - F.mean()).square().sum();
    const double slope = ((F - F.mean()) * (fitted - fitted.mean())).sum() / vF;
    const double intercept = fitted.mean() - slope * F.mean();
    Eigen::ArrayXd resid = y - (intercept + slope * F);
    const double s2 = resid.square().sum() / (n - 2.0);
    const double se_slope = std::sqrt(s2 / vF);
    const double se_int = std::sqrt(s2 * (1.0 / n + F.mean() * F.mean() / vF));
    CHECK(std::abs(slope - 1.0) < 3 * se_slope);
    CHECK(std::abs(intercept) < 3 * se_int);
}

TEST_CASE("regression_drift: independent features produce zero drift") {
    auto grid = TimeGrid::uniform(1.0, 32);
    auto ens = simulate(Model::brownian(), grid, 6000, 13);
    // Independent signal: an unrelated Gaussian draw per path.
    auto indep = simulate(Model::white(1.0), grid, 6000, 14);
    PathEnsemble with_noise = ens;
    with_noise.channels.emplace("signal_noise", indep.channel("noise"));
    FeatureStream features(ExpansionSpec{InitialSignal{{}, 1.0}}, with_noise);
    DriftEstimate est = regression_drift(with_noise, features);
    const Eigen::ArrayXd F = features.features_at(0).col(0);
    for (std::size_t j : {std::size_t(4), std::size_t(16), std::size_t(28)}) {
        // Recover the fitted slope on the feature; independence kills it.
        Eigen::ArrayXd fitted = est.alphas.col(Eigen::Index(j));
        Eigen::ArrayXd y = (ens.channel("W").col(Eigen::Index(j + 1)) -
                            ens.channel("W").col(Eigen::Index(j))) /
                           grid.dt(j);
        const double vF = (F - F.mean()).square().sum();
        const double slope = ((F - F.mean()) * (fitted - fitted.mean())).sum() / vF;
        const double se = std::sqrt((y - y.mean()).square().sum() /
                                    (double(y.size()) - 1.0) / vF);
        CHECK(std::abs(slope) <= 3 * se);
    }
}

TEST_CASE("regression_drift: path/feature ratio precondition") {
    auto grid = TimeGrid::uniform(1.0, 4);
    auto ens = simulate(Model::brownian(), grid, 15, 1);
    FeatureStream features(ExpansionSpec{InitialSignal::terminal(1.0)}, ens);
    CHECK_THROWS_AS(regression_drift(ens, features), std::invalid_argument);
}

TEST_CASE("regression on a compensated ensemble is zero") {
    ItoFixture fx(12000, 43);
    const auto& W = fx.ens.channel("W");
    Eigen::ArrayXXd m_tilde = compensate(W, fx.alpha.alphas, fx.qv_dt);
    PathEnsemble comp = fx.ens;
    comp.channels.at("W") = m_tilde;
    // Same features as the uncompensated run: the original signal W_1.
    FeatureStream features(ExpansionSpec{InitialSignal::terminal(1.0)}, fx.ens);
    DriftEstimate est = regression_drift(comp, features);
    const Eigen::ArrayXd F = features.features_at(0).col(0);
    const std::size_t j = *fx.ens.grid->index_of(0.5);
    Eigen::ArrayXd fitted = est.alphas.col(Eigen::Index(j));
    Eigen::ArrayXd y = (m_tilde.col(Eigen::Index(j + 1)) - m_tilde.col(Eigen::Index(j))) /
                       fx.ens.grid->dt(j);
    const double vF = (F - F.mean()).square().sum();
    const double slope = ((F - F.mean()) * (fitted - fitted.mean())).sum() / vF;
    const double se =
        std::sqrt((y - y.mean()).square().sum() / (double(y.size()) - 1.0) / vF);
    CHECK(std::abs(slope) <= 3 * se);
    const double m = fitted.mean();
    const double sem = std::sqrt((y - y.mean()).square().sum() /
                                 (double(y.size()) - 1.0) / double(y.size()));
    CHECK(std::abs(m) <= 3 * sem);
}

TEST_CASE("compensate: zero drift is the identity; round trip telescopes exactly") {
    ItoFixture fx(50, 7);
    const auto& W = fx.ens.channel("W");
    Eigen::ArrayXXd zero = Eigen::ArrayXXd::Zero(W.rows(), W.cols() - 1);
    CHECK(((compensate(W, zero, fx.qv_dt) - W).abs() == 0.0).all());

    // The compensator accumulations telescope exactly (negation is exact in
    // IEEE); the value-level round trip can differ by the final rounding of
    // (x - a) + a, so it is checked at ulp scale.
    Eigen::ArrayXXd once = compensate(W, fx.alpha.alphas, fx.qv_dt);
    Eigen::ArrayXXd back = compensate(once, (-fx.alpha.alphas).eval(), fx.qv_dt);
    CHECK(((back - W).abs() <= 4e-16 * (W.abs() + (W - once).abs())).all());

    SamplePath p = fx.ens.path("W", 3, PathKind::brownian);
    SamplePath q(fx.ens.grid, std::vector<double>(fx.ens.grid->times()), PathKind::qv);
    std::vector<double> a(p.values.size() - 1, 0.7);
    SamplePath comp = compensate(p, a, q);
    std::vector<double> aneg(a.size(), -0.7);
    SamplePath round = compensate(comp, aneg, q);
    for (std::size_t i = 0; i < p.values.size(); ++i)
        CHECK(round.values[i] ==
              doctest::Approx(p.values[i]).epsilon(1e-15));
}

TEST_CASE("compensate: orthogonality of compensated increments with the signal") {
    ItoFixture fx(20000, 47);
    const auto& W = fx.ens.channel("W");
    Eigen::ArrayXXd m_tilde = compensate(W, fx.alpha.alphas, fx.qv_dt);
    const std::size_t i_s = *fx.ens.grid->index_of(0.5);
    const std::size_t i_t = *fx.ens.grid->index_of(0.75);
    Eigen::ArrayXd incr = m_tilde.col(Eigen::Index(i_t)) - m_tilde.col(Eigen::Index(i_s));
    Eigen::ArrayXd xi = W.col(W.cols() - 1) - W.col(Eigen::Index(i_s));
    Eigen::ArrayXd prod = incr * xi;
    const double m = prod.mean();
    const double se = std::sqrt((prod - m).square().sum() /
                                (double(prod.size()) - 1.0) / double(prod.size()));
    CHECK(std::abs(m) < 3 * se);
}

TEST_CASE("norms recompute from stored alphas and the qv channel") {
    ItoFixture fx(500, 11);
    const auto& qv = fx.ens.channel("qv");
    DriftEstimate copy = fx.alpha;
    copy.compute_norms(qv);
    CHECK(copy.h2_norm_sq == doctest::Approx(fx.alpha.h2_norm_sq).epsilon(1e-12));
    CHECK(copy.h1_norm == doctest::Approx(fx.alpha.h1_norm).epsilon(1e-12));
}

TEST_CASE("convergence_report: single estimate is inconclusive") {
    ItoFixture fx(200, 2);
    ConvergenceReport rep = convergence_report({&fx.alpha});
    CHECK(rep.verdict == "inconclusive");
    CHECK(rep.pairs.empty());
    CHECK(rep.levels.size() == 1);
}

TEST_CASE("nested Gaussian-exact drifts: Pythagoras and norm monotonicity") {
    // Initial terminal signal observed through nested white-noise obs grids
    // (2 and 4 points), drifts computed exactly on common random numbers.
    auto grid = TimeGrid::uniform(1.0, 64);
    auto ens = simulate(Model::brownian(), grid, 8000, 29);
    auto noise = simulate(Model::white(0.6), grid, 8000, 29);
    PathEnsemble both = ens;
    both.channels.emplace("noise", noise.channel("noise"));

    std::vector<DriftEstimate> ests;
    for (std::size_t nobs : {2, 4, 8}) {
        DiscretizedProcess dp;
        dp.signal = DiscretizedProcess::Signal::delta_anticipation;
        dp.delta = 0.25;
        dp.noise = NoiseModel::white(0.6);
        dp.obs = TimeGrid::uniform(0.5, nobs);
        DriftEstimate est = gaussian_exact_drift(ExpansionSpec{dp}, both, "projection");
        est.level = nobs;
        ests.push_back(std::move(est));
    }
    std::vector<const DriftEstimate*> ptrs{&ests[0], &ests[1], &ests[2]};
    ConvergenceReport rep = convergence_report(ptrs);
    for (const auto& pr : rep.pairs) {
        CHECK(std::abs(pr.pythagoras_residual) <= 3 * std::max(pr.pythagoras_se, 1e-14));
        CHECK(std::abs(pr.projection_residual) <= 3 * std::max(pr.projection_se, 1e-14));
    }
    // Norm monotonicity up to 3 SE slack.
    for (std::size_t k = 0; k + 1 < rep.levels.size(); ++k)
        CHECK(rep.levels[k + 1].h2_norm_sq >=
              rep.levels[k].h2_norm_sq - 3 * rep.levels[k].h2_se);
}

TEST_CASE("projection consistency: coarse features reproduce the coarse drift") {
    // Regressing the fine-filtration drift onto the coarse feature set gives
    // the coarse drift (within 3 SE), per the optional projection theorem.
    auto grid = TimeGrid::uniform(1.0, 32);
    auto ens = simulate(Model::brownian(), grid, 20000, 57);
    auto noise = simulate(Model::white(0.5), grid, 20000, 57);
    PathEnsemble both = ens;
    both.channels.emplace("noise", noise.channel("noise"));

    auto make_dp = [&](std::size_t nobs) {
        DiscretizedProcess dp;
        dp.signal = DiscretizedProcess::Signal::delta_anticipation;
        dp.delta = 0.25;
        dp.noise = NoiseModel::white(0.5);
        dp.obs = TimeGrid::uniform(0.5, nobs);
        return dp;
    };
    DriftEstimate coarse = gaussian_exact_drift(ExpansionSpec{make_dp(2)}, both, "projection");
    DriftEstimate fine = gaussian_exact_drift(ExpansionSpec{make_dp(4)}, both, "projection");

    // OLS of fine alpha on the coarse G_s variables (features plus the F_s
    // part: W_s and the resolved anticipation value) at s = 0.5. The fitted
    // coefficients must reproduce the coarse drift weights.
    FeatureStream coarse_fs(ExpansionSpec{make_dp(2)}, both);
    const std::size_t j = *grid.index_of(0.5);
    Eigen::ArrayXXd F = coarse_fs.features_at(j);
    Eigen::MatrixXd X(F.rows(), F.cols() + 3);
    X.col(0).setOnes();
    X.middleCols(1, F.cols()) = F.matrix();
    X.col(F.cols() + 1) = both.channel("W").col(Eigen::Index(j)).matrix();
    X.col(F.cols() + 2) =
        both.channel("W").col(Eigen::Index(*grid.index_of(0.25))).matrix();
    Eigen::VectorXd y = fine.alphas.col(Eigen::Index(j)).matrix();
    Eigen::MatrixXd XtX = X.transpose() * X;
    Eigen::MatrixXd XtXinv = XtX.ldlt().solve(
        Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    Eigen::VectorXd beta = XtXinv * (X.transpose() * y);
    const double s2 =
        (y - X * beta).squaredNorm() / double(X.rows() - X.cols());

    DriftWeights wc = projection_drift_weights(ExpansionSpec{make_dp(2)}, 0.5);
    // Engine order: anchor W_s, resolved W_{0.25}, then signal increments;
    // design order: const, increments, W_s, W_{0.25}.
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(X.cols());
    for (std::size_t k = 0; k < wc.observed.size(); ++k) {
        const ObsVar& o = wc.observed[k];
        Eigen::Index col;
        if (o.kind == ObsVar::Kind::anchor_w)
            col = F.cols() + 1;
        else if (o.kind == ObsVar::Kind::resolved_w)
            col = F.cols() + 2;
        else
            col = 1 + Eigen::Index(o.obs_index);
        expected(col) = wc.weights(Eigen::Index(k));
    }
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        const double se_c = std::sqrt(s2 * XtXinv(c, c));
        CHECK(std::abs(beta(c) - expected(c)) <= 3 * std::max(se_c, 1e-12));
    }
}

TEST_CASE("fbm-bridge discretizations: reference gaps decrease") {
    ExperimentConfig cfg = ExperimentConfig::defaults_for("converge");
    cfg.n_paths = 1500;
    cfg.grid.n0 = 128;
    cfg.grid.levels = 3;
    cfg.seed = 5;
    ConvergeResult R = run_converge(cfg);
    REQUIRE(R.report.reference_gaps.size() == 3);
    CHECK(R.report.reference_gaps[1].first < R.report.reference_gaps[0].first);
    CHECK(R.report.reference_gaps[2].first < R.report.reference_gaps[1].first);
}
