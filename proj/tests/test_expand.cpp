#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "driftlab/errors.hpp"
#include "driftlab/expand.hpp"
#include "driftlab/rng.hpp"

#include "oracles.hpp"

using namespace driftlab;

TEST_CASE("bessel_ladder_drift: worked values") {
    CHECK(bessel_ladder_drift(1.5, 1.2, 1.0) == doctest::Approx(-4.0 / 3.0).epsilon(1e-12));
    CHECK(bessel_ladder_drift(0.8, 0.5, 1.0) == doctest::Approx(0.0));
    CHECK(bessel_ladder_drift(2.5, 0.4, 1.0) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("bessel_ladder_drift: argument validation and singularity") {
    CHECK_THROWS_AS(bessel_ladder_drift(1.0, 1.5, 0.5), std::invalid_argument);  // x > z
    CHECK_THROWS_AS(bessel_ladder_drift(0.0, 0.0, 0.5), std::invalid_argument);  // z = 0
    CHECK_THROWS_AS(bessel_ladder_drift(1.0, 0.5, 0.0), std::invalid_argument);  // eps = 0
    // Active term with z - p eps below 1e-12.
    CHECK_THROWS_AS(bessel_ladder_drift(1.0 + 1e-13, 1.0 + 5e-14, 1.0), ladder_singularity);
}

TEST_CASE("bessel_ladder_drift: scale consistency alpha(cz, cx, ceps) = alpha/c") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const double z = 0.2 + 3.0 * rng.uniform01();
        const double x = z * rng.uniform01();
        const double eps = 0.1 + rng.uniform01();
        const double c = 0.3 + 2.0 * rng.uniform01();
        const double a1 = bessel_ladder_drift(z, x, eps);
        const double a2 = bessel_ladder_drift(c * z, c * x, c * eps);
        CHECK(a2 == doctest::Approx(a1 / c).epsilon(1e-9));
    }
}

TEST_CASE("anticipation_tau: worked values") {
    TimeGrid g = TimeGrid::uniform(2.0, 200);
    auto mkphi = [&](auto fn) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) v[i] = fn(g[i]);
        return GridFunction(g, v);
    };
    GridFunction ident = mkphi([](double u) { return u; });
    CHECK(anticipation_tau(ident, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-9));

    GridFunction twice = mkphi([](double u) { return 2.0 * u; });
    CHECK(anticipation_tau(twice, 1.0, 1.5) == doctest::Approx(0.75).epsilon(1e-9));

    GridFunction shift = mkphi([](double u) { return u + 0.1; });
    CHECK(anticipation_tau(shift, 0.5, 0.55) == doctest::Approx(0.45).epsilon(1e-9));

    CHECK_THROWS_AS(anticipation_tau(ident, 0.6, 0.5), std::invalid_argument);
}

TEST_CASE("anticipation_tau: matches direct root-finding where non-empty") {
    TimeGrid g = TimeGrid::uniform(2.0, 400);
    Rng rng(9);
    int checked = 0;
    for (int rep = 0; rep < 60; ++rep) {
        // Random non-decreasing phi with phi >= id (anticipation).
        std::vector<double> v(g.size());
        double acc = 0.05 * rng.uniform01();
        for (std::size_t i = 0; i < g.size(); ++i) {
            acc += (2.0 / 400.0) * (1.0 + rng.uniform01());
            v[i] = std::max(acc, g[i]);
        }
        GridFunction phi(g, v);
        const double s = 0.2 + rng.uniform01();
        const double t = s + (phi(s) - s) * rng.uniform01();  // t <= phi_s branch
        // Bisection for inf{u <= s : u v phi_u = t}; g is monotone and the
        // bracket keeps g(lo) < 0, so the limit is the left edge of {g >= 0}.
        auto gfun = [&](double u) { return std::max(u, phi(u)) - t; };
        if (gfun(0.0) >= 0.0) continue;  // equality set empty or inf at 0
        double lo = 0.0, hi = s;
        if (gfun(hi) < 0.0) continue;
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            (gfun(mid) < 0.0 ? lo : hi) = mid;
        }
        const double root = hi;
        const double tau = anticipation_tau(phi, s, t);
        CHECK(std::abs(tau - root) < 1e-9);
        ++checked;
    }
    CHECK(checked > 30);
}

TEST_CASE("time_change_drift: zero t-derivative gives zero") {
    const int n = 400;
    std::vector<double> u(n + 1), w(n + 1);
    for (int i = 0; i <= n; ++i) {
        u[size_t(i)] = double(i) / n;
        w[size_t(i)] = std::sin(double(i));
    }
    auto f = [](double, double s, double) { return 1.0 / s; };  // uniform on [0,s]
    auto r = time_change_drift(u, w, 1.0, f);
    CHECK(r.alpha == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(r.accuracy_warning);
}

TEST_CASE("time_change_drift: closed-form integral oracle 1/6") {
    // w(u) = u, d_t f(u; s, t)|_{t=s} = 2u - s, s = 1:
    // integral_0^1 u (2u - 1) du = 1/6 (independent quadrature oracle).
    const int n = 2000;
    std::vector<double> u(n + 1), w(n + 1);
    for (int i = 0; i <= n; ++i) u[size_t(i)] = w[size_t(i)] = double(i) / n;
    auto f = [](double, double s, double) { return 1.0 / s; };
    auto dfdt = [](double uu, double s) { return 2.0 * uu - s; };
    auto r = time_change_drift(u, w, 1.0, f, dfdt);
    const double oracle = oracles::trapezoid([](double v) { return v * (2 * v - 1); }, 0, 1);
    CHECK(oracle == doctest::Approx(1.0 / 6.0).epsilon(1e-8));
    CHECK(r.alpha == doctest::Approx(oracle).epsilon(1e-6));
    CHECK_FALSE(r.accuracy_warning);
}

TEST_CASE("time_change_drift: linear in the path values") {
    const int n = 500;
    std::vector<double> u(n + 1), w(n + 1), w2(n + 1);
    for (int i = 0; i <= n; ++i) {
        u[size_t(i)] = double(i) / n;
        w[size_t(i)] = std::cos(3.0 * u[size_t(i)]);
        w2[size_t(i)] = 2.0 * w[size_t(i)];
    }
    auto f = [](double, double s, double) { return 1.0 / s; };
    auto dfdt = [](double uu, double s) { return std::sin(uu) - s / 3.0; };
    auto a1 = time_change_drift(u, w, 1.0, f, dfdt);
    auto a2 = time_change_drift(u, w2, 1.0, f, dfdt);
    CHECK(a2.alpha == doctest::Approx(2.0 * a1.alpha).epsilon(1e-12));
}

TEST_CASE("time_change_drift: invalid densities rejected") {
    const int n = 100;
    std::vector<double> u(n + 1), w(n + 1, 1.0);
    for (int i = 0; i <= n; ++i) u[size_t(i)] = double(i) / n;
    auto bad_mass = [](double, double, double) { return 0.7; };
    CHECK_THROWS_AS(time_change_drift(u, w, 1.0, bad_mass), invalid_density);
    auto negative = [](double uu, double, double) { return uu < 0.5 ? -0.5 : 2.5; };
    CHECK_THROWS_AS(time_change_drift(u, w, 1.0, negative), invalid_density);
}

TEST_CASE("feature_stream: initial signal reveals the signal everywhere") {
    auto grid = TimeGrid::uniform(1.0, 16);
    auto ens = simulate(Model::brownian(), grid, 50, 21);
    FeatureStream fs(ExpansionSpec{InitialSignal::terminal(1.0)}, ens);
    const auto& W = ens.channel("W");
    for (std::size_t i : {std::size_t(0), std::size_t(7), std::size_t(15)}) {
        auto F = fs.features_at(i);
        REQUIRE(F.cols() == 1);
        CHECK(((F.col(0) - W.col(W.cols() - 1)).abs() < 1e-15).all());
    }
}

TEST_CASE("feature_stream: discretized process reveals increments by t_i") {
    auto grid = TimeGrid::uniform(1.0, 16);
    auto ens = simulate(Model::brownian(), grid, 40, 2);
    auto noise = simulate(Model::white(0.3), grid, 40, 2);
    ens.channels.emplace("noise", noise.channel("noise"));

    DiscretizedProcess dp;
    dp.signal = DiscretizedProcess::Signal::delta_anticipation;
    dp.delta = 0.125;
    dp.noise = NoiseModel::white(0.3);
    dp.obs = TimeGrid({0.0, 0.5, 0.75});
    FeatureStream fs(ExpansionSpec{dp}, ens);

    auto at_quarter = fs.features_at(*grid.index_of(0.25));
    CHECK(at_quarter.cols() == 1);  // only X_0
    auto labels = fs.labels_at(*grid.index_of(0.75));
    REQUIRE(labels.size() == 3);
    CHECK(labels[0] == "X0");
    CHECK(labels[1] == "dX1");
    auto F = fs.features_at(*grid.index_of(0.75));
    const auto x0 = signal_level(dp, ens, 0);
    const auto x1 = signal_level(dp, ens, 1);
    CHECK(((F.col(0) - x0).abs() < 1e-15).all());
    CHECK(((F.col(1) - (x1 - x0)).abs() < 1e-15).all());
}

TEST_CASE("feature_stream: ladder quantization") {
    auto grid = TimeGrid::uniform(1.0, 8);
    auto ens = simulate(Model::bessel3(), grid, 30, 4);
    FeatureStream fs(ExpansionSpec{Bessel3Ladder{1.0}}, ens);
    auto F = fs.features_at(4);
    const auto& X = ens.channel("X");
    for (Eigen::Index p = 0; p < 30; ++p)
        CHECK(F(p, 0) == doctest::Approx(std::floor(X(p, 4) / 1.0) * 1.0));
    // Worked value: X_s = 1.2, eps = 1 quantizes to 1.0.
    CHECK(std::floor(1.2 / 1.0) * 1.0 == doctest::Approx(1.0));
}

TEST_CASE("feature_stream: missing channels rejected") {
    auto grid = TimeGrid::uniform(1.0, 8);
    auto ens = simulate(Model::brownian(), grid, 30, 4);
    CHECK_THROWS_AS(FeatureStream(ExpansionSpec{Bessel3Ladder{0.5}}, ens),
                    std::invalid_argument);
}

TEST_CASE("adaptedness: permuting strictly-future path data leaves features unchanged") {
    auto grid = TimeGrid::uniform(1.0, 32);
    auto ens = simulate(Model::brownian(), grid, 100, 77);
    auto noise = simulate(Model::white(0.5), grid, 100, 77);
    ens.channels.emplace("noise", noise.channel("noise"));

    DiscretizedProcess dp;
    dp.signal = DiscretizedProcess::Signal::delta_anticipation;
    dp.delta = 0.125;
    dp.noise = NoiseModel::white(0.5);
    dp.obs = TimeGrid({0.0, 0.25, 0.5, 1.0 - 0.125});
    FeatureStream fs(ExpansionSpec{dp}, ens);

    const std::size_t i_s = *grid.index_of(0.375);
    const Eigen::ArrayXXd before = fs.features_at(i_s);

    // Declared revelations by s = 0.375: X at obs times <= s, i.e. W up to
    // 0.25 + delta = 0.375 and noise at obs times <= 0.375. Everything
    // revealed strictly later may be permuted across paths.
    PathEnsemble permuted = ens;
    Rng rng(123);
    std::vector<int> perm(100);
    for (int i = 0; i < 100; ++i) perm[size_t(i)] = i;
    for (int i = 99; i > 0; --i)
        std::swap(perm[size_t(i)], perm[size_t(rng.next_u64() % uint64_t(i + 1))]);
    auto& Wm = permuted.channels.at("W");
    auto& Nm = permuted.channels.at("noise");
    const auto& W0 = ens.channel("W");
    const auto& N0 = ens.channel("noise");
    for (Eigen::Index j = 0; j < Wm.cols(); ++j) {
        const double t = grid[size_t(j)];
        if (t > 0.375 + 1e-12) {
            for (int p = 0; p < 100; ++p) {
                Wm(p, j) = W0(perm[size_t(p)], j);
                Nm(p, j) = N0(perm[size_t(p)], j);
            }
        }
    }
    FeatureStream fs2(ExpansionSpec{dp}, permuted);
    const Eigen::ArrayXXd after = fs2.features_at(i_s);
    CHECK(((before - after).abs() < 1e-15).all());
}
