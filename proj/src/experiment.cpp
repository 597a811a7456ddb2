#include "driftlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "driftlab/errors.hpp"
#include "driftlab/exact_drift.hpp"
#include "driftlab/gauss.hpp"
#include "driftlab/quadrature.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

namespace fs = std::filesystem;
using nlohmann::json;

static const char* kVersion = "driftlab 0.1.0";

// ---------------------------------------------------------------- config --

ExperimentConfig ExperimentConfig::defaults_for(const std::string& experiment) {
    ExperimentConfig c;
    c.experiment = experiment;
    if (experiment == "ito" || experiment == "value") {
        c.grid = {0.99, 512, 1};
        c.n_paths = 20000;
    } else if (experiment == "fbm_noise") {
        c.grid = {1.0, 512, 1};
        c.n_paths = 10000;
    } else if (experiment == "converge") {
        c.grid = {1.0, 512, 5};
        c.n_paths = 4000;
    } else if (experiment == "white_noise") {
        c.grid = {1.0, 320, 5};
        c.n_paths = 4000;
    } else if (experiment == "bessel3") {
        c.grid = {1.0, 512, 1};
        c.n_paths = 20000;
    } else if (experiment == "anticipation") {
        c.grid = {2.0, 320, 1};
        c.n_paths = 4000;
    } else if (experiment == "custom") {
        c.grid = {1.0, 512, 1};
        c.n_paths = 1000;
    } else {
        throw config_error("unknown experiment '" + experiment + "'");
    }
    return c;
}

void ExperimentConfig::validate() const {
    defaults_for(experiment);  // throws on unknown label
    if (format != "csv" && format != "json")
        throw config_error("format must be 'csv' or 'json', got '" + format + "'");
    if (n_paths == 0) throw config_error("n_paths must be >= 1");
    if (!(grid.t > 0.0)) throw config_error("grid.t must be > 0");
    if (grid.n0 < 1 || grid.levels < 1) throw config_error("grid.n0 and grid.levels must be >= 1");
    if (!(lambda > 0.0)) throw config_error("lambda must be > 0");
    if (eps_levels.empty()) throw config_error("eps_levels must be non-empty");
    for (double e : eps_levels)
        if (!(e > 0.0)) throw config_error("eps_levels entries must be > 0");
    if (!(hurst > 0.0) || !(hurst < 1.0)) throw config_error("hurst must be in (0,1)");
    if (delta < 0.0) throw config_error("delta must be >= 0");
    if (sigma < 0.0) throw config_error("sigma must be >= 0");
    if (!(theta > 0.0)) throw config_error("theta must be > 0");
    if (!(obs_n0 >= 1)) throw config_error("obs_n0 must be >= 1");
    if (!(obs_span > 0.0) || obs_span > grid.t) throw config_error("obs_span must be in (0, grid.t]");
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw config_error("config root must be a JSON object");

    const std::set<std::string> known = {"experiment", "n_paths", "seed", "delta", "epsilon",
                                         "hurst", "sigma", "theta", "lambda", "x",
                                         "eps_levels", "obs_n0", "obs_span", "grid",
                                         "out_dir", "format", "strict", "overrides"};
    for (auto& [key, _] : j.items())
        if (!known.count(key)) throw config_error("unknown config key '" + key + "'");

    std::string exp = j.value("experiment", std::string("ito"));
    ExperimentConfig c = defaults_for(exp);
    auto num = [&](const char* k, double& slot) {
        if (j.contains(k)) {
            if (!j[k].is_number()) throw config_error(std::string("key '") + k + "' must be a number");
            slot = j[k].get<double>();
        }
    };
    num("delta", c.delta);
    num("epsilon", c.epsilon);
    num("hurst", c.hurst);
    num("sigma", c.sigma);
    num("theta", c.theta);
    num("lambda", c.lambda);
    num("x", c.x);
    num("obs_span", c.obs_span);
    if (j.contains("n_paths")) c.n_paths = j["n_paths"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("obs_n0")) c.obs_n0 = j["obs_n0"].get<int>();
    if (j.contains("eps_levels")) {
        if (!j["eps_levels"].is_array()) throw config_error("key 'eps_levels' must be an array");
        c.eps_levels = j["eps_levels"].get<std::vector<double>>();
    }
    if (j.contains("grid")) {
        const json& g = j["grid"];
        if (!g.is_object()) throw config_error("key 'grid' must be an object");
        const std::set<std::string> gkeys = {"t", "n0", "levels"};
        for (auto& [key, _] : g.items())
            if (!gkeys.count(key)) throw config_error("unknown config key 'grid." + key + "'");
        if (g.contains("t")) c.grid.t = g["t"].get<double>();
        if (g.contains("n0")) c.grid.n0 = g["n0"].get<int>();
        if (g.contains("levels")) c.grid.levels = g["levels"].get<int>();
    }
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("format")) c.format = j["format"].get<std::string>();
    if (j.contains("strict")) c.strict = j["strict"].get<bool>();
    if (j.contains("overrides")) c.overrides = j["overrides"].get<std::vector<std::string>>();
    c.validate();
    return c;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["experiment"] = experiment;
    j["n_paths"] = n_paths;
    j["seed"] = seed;
    j["delta"] = delta;
    j["epsilon"] = epsilon;
    j["hurst"] = hurst;
    j["sigma"] = sigma;
    j["theta"] = theta;
    j["lambda"] = lambda;
    j["x"] = x;
    j["eps_levels"] = eps_levels;
    j["obs_n0"] = obs_n0;
    j["obs_span"] = obs_span;
    j["grid"] = {{"t", grid.t}, {"n0", grid.n0}, {"levels", grid.levels}};
    j["out_dir"] = out_dir;
    j["format"] = format;
    j["strict"] = strict;
    j["overrides"] = overrides;
    return j.dump(2);
}

uint64_t ExperimentConfig::hash() const {
    const std::string s = to_json();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

Stage stage_from_name(const std::string& name) {
    if (name == "simulate") return Stage::simulate;
    if (name == "drift") return Stage::drift;
    if (name == "audit") return Stage::audit;
    if (name == "converge") return Stage::converge;
    if (name == "value") return Stage::value;
    if (name == "run") return Stage::full;
    throw config_error("unknown subcommand '" + name + "'");
}

std::string RunRecord::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["artifacts"] = artifacts;
    j["wall_seconds"] = wall_seconds;
    j["exit_status"] = exit_status;
    j["version"] = version;
    return j.dump(2);
}

// ------------------------------------------------------------- helpers ---

Eigen::ArrayXXd dt_bracket(const TimeGrid& grid, std::size_t n_paths) {
    Eigen::ArrayXXd qv(static_cast<Eigen::Index>(n_paths),
                       static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i)
        qv.col(static_cast<Eigen::Index>(i)).setConstant(grid[i]);
    return qv;
}

namespace {

TimeGrid ito_grid(const ExperimentConfig& cfg) {
    if (!(cfg.grid.t < 1.0)) throw config_error("ito experiment requires grid.t < 1");
    TimeGrid base = TimeGrid::uniform(cfg.grid.t, static_cast<std::size_t>(cfg.grid.n0));
    std::vector<double> times = base.times();
    for (double p : {0.25, 0.5, 0.75, 0.9, 1.0})
        if (!base.contains(p) && p < 1.0) times.push_back(p);
    times.push_back(1.0);
    std::sort(times.begin(), times.end());
    return TimeGrid(times);
}

// Sub-ensemble restricted to grid columns [0, hi_index].
std::shared_ptr<const TimeGrid> subgrid_upto(const TimeGrid& g, std::size_t hi_index) {
    std::vector<double> ts(g.times().begin(), g.times().begin() + hi_index + 1);
    return std::make_shared<const TimeGrid>(std::move(ts));
}

// Secondary ensembles re-simulated on the same seed carry their own qv
// channel; drop it before merging so channel names stay unique.
PathEnsemble companion(const Model& model, const TimeGrid& grid, std::size_t n_paths,
                       uint64_t seed) {
    PathEnsemble e = simulate(model, grid, n_paths, seed);
    e.channels.erase("qv");
    return e;
}

}  // namespace

// ------------------------------------------------------------------ ito --

ItoResult run_ito(const ExperimentConfig& cfg) {
    const TimeGrid grid = ito_grid(cfg);
    ItoResult R;
    R.ens = simulate(Model::brownian(), grid, cfg.n_paths, cfg.seed);
    const Eigen::ArrayXXd& W = R.ens.channel("W");
    const Eigen::Index n = W.rows();
    const Eigen::Index m = W.cols();
    const Eigen::Index i_last = m - 1;

    // Closed-form drift at every left endpoint.
    Eigen::ArrayXXd alphas(n, m - 1);
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
        const double s = grid[static_cast<std::size_t>(j)];
        alphas.col(j) = (W.col(i_last) - W.col(j)) / (1.0 - s);
    }
    R.alpha = make_estimate(R.ens.grid, std::move(alphas), "closed_form", R.ens.channel("qv"));

    const Eigen::ArrayXXd qv_dt = dt_bracket(grid, cfg.n_paths);
    R.ds_norms_09 = R.alpha.norms_on(qv_dt, 0.0, 0.9);
    R.alpha_sq_half = R.alpha.alpha_sq_at(*grid.index_of(0.5));

    // Compensate against the exact Brownian bracket dt; audits only look at
    // pairs inside [0, 0.9] so the exploding tail of alpha past 0.9 is inert.
    const Eigen::ArrayXXd m_tilde_full = compensate(W, R.alpha.alphas, qv_dt);
    const std::size_t i09 = *grid.index_of(0.9);
    R.subgrid = subgrid_upto(grid, i09);
    const Eigen::Index cols09 = static_cast<Eigen::Index>(i09) + 1;
    R.m_tilde = m_tilde_full.leftCols(cols09);
    R.qv_dt_sub = qv_dt.leftCols(cols09);

    FeatureStream features(ExpansionSpec{InitialSignal::terminal(1.0)}, R.ens);

    const std::vector<std::pair<double, double>> pairs = {{0.25, 0.5}, {0.5, 0.75}, {0.5, 0.9}};
    R.audit_uncompensated = increment_test(W, features, pairs);
    R.audit_compensated = increment_test(m_tilde_full, features, pairs);
    R.audit_qv = qv_check(grid, m_tilde_full, {0.25, 0.5, 0.9});
    R.audit_uncompensated.seed = cfg.seed;
    R.audit_compensated.seed = cfg.seed;

    // Deflator on [0, 0.9] with the Girsanov loading -alpha.
    const Eigen::ArrayXXd loading = -R.alpha.alphas.leftCols(cols09 - 1);
    R.Z = deflator(loading, R.m_tilde, R.qv_dt_sub, R.subgrid);
    R.audit_deflator = deflator_audit(R.Z, W, loading, R.qv_dt_sub, features,
                                      {{0.25, 0.5}, {0.5, 0.75}});
    {
        AuditReport ez;
        ez.n_paths = cfg.n_paths;
        const Eigen::ArrayXd zt = R.Z.z.col(R.Z.z.cols() - 1);
        const double mean = zt.mean();
        const double var = (zt - mean).square().sum() / static_cast<double>(zt.size() - 1);
        ez.add("deflator_mean_minus_1", mean - 1.0,
               std::sqrt(var / static_cast<double>(zt.size())));
        R.audit_deflator_ez = std::move(ez);
    }

    // Valuation on [0, 0.9] against the ds bracket.
    PathEnsemble vens;
    vens.grid = R.ens.grid;
    vens.n_paths = cfg.n_paths;
    vens.seed = cfg.seed;
    vens.model_desc = "ito_valuation";
    vens.channels.emplace("W", W);
    vens.channels.emplace("qv", qv_dt);
    R.valuation = backtest(vens, R.alpha, cfg.lambda, cfg.x, "W", 0.9);
    R.value_check = value_identity_check(R.valuation);
    R.valuation_x5 = backtest(vens, R.alpha, cfg.lambda, 5.0, "W", 0.9);
    return R;
}

// ------------------------------------------------------------ fbm_noise --

FbmNoiseResult run_fbm_noise(const ExperimentConfig& cfg) {
    const TimeGrid grid = TimeGrid::uniform(1.0, static_cast<std::size_t>(cfg.grid.n0));
    FbmNoiseResult R;
    R.ens = simulate(Model::brownian(), grid, cfg.n_paths, cfg.seed);
    R.ens.absorb(companion(Model::fbm(cfg.hurst), grid, cfg.n_paths, cfg.seed));

    const Eigen::ArrayXXd& W = R.ens.channel("W");
    const Eigen::ArrayXXd& G = R.ens.channel("fbm");
    const Eigen::Index n = W.rows(), m = W.cols();
    Eigen::ArrayXXd alphas(n, m - 1);
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
        const double s = grid[static_cast<std::size_t>(j)];
        auto gi = grid.index_of(1.0 - s);
        if (!gi) throw std::invalid_argument("fbm_noise: grid must be symmetric around 1/2");
        const double den =
            (1.0 - s) + cfg.epsilon * cfg.epsilon * std::pow(1.0 - s, 2.0 * cfg.hurst);
        alphas.col(j) = (W.col(m - 1) - W.col(j) +
                         cfg.epsilon * G.col(static_cast<Eigen::Index>(*gi))) /
                        den;
    }
    R.alpha = make_estimate(R.ens.grid, std::move(alphas), "closed_form", R.ens.channel("qv"));

    const double H_low = cfg.hurst;
    const double H_high = 1.0 - cfg.hurst;
    for (int k = 2; k <= 6; ++k) {
        const double hi = 1.0 - std::pow(10.0, -k);
        auto integral = [&](double H) {
            return adaptive_simpson(
                [&](double s) { return fbm_noise_expected_alpha_sq(s, cfg.epsilon, H); }, 0.0,
                hi, 1e-10);
        };
        R.integrability_scan.push_back({k, integral(H_low), integral(H_high)});
    }
    return R;
}

// ------------------------------------------------- converge / white_noise --

namespace {

ConvergeResult run_convergence_family(const ExperimentConfig& cfg, bool fbm_bridge) {
    const TimeGrid grid = TimeGrid::uniform(cfg.grid.t, static_cast<std::size_t>(cfg.grid.n0));
    ConvergeResult R;
    R.ens = simulate(Model::brownian(), grid, cfg.n_paths, cfg.seed);
    if (fbm_bridge)
        R.ens.absorb(companion(Model::fbm(cfg.hurst), grid, cfg.n_paths, cfg.seed));
    else
        R.ens.absorb(companion(Model::white(cfg.sigma), grid, cfg.n_paths, cfg.seed));

    std::vector<const DriftEstimate*> ptrs;
    int nobs = cfg.obs_n0;
    for (int level = 0; level < cfg.grid.levels; ++level, nobs *= 2) {
        TimeGrid obs = TimeGrid::uniform(fbm_bridge ? cfg.grid.t : cfg.obs_span,
                                         static_cast<std::size_t>(nobs));
        if (!grid.refines(obs))
            throw config_error("observation grid not contained in the simulation grid");
        DiscretizedProcess dp;
        if (fbm_bridge) {
            dp.signal = DiscretizedProcess::Signal::fbm_bridge;
            dp.hurst = cfg.hurst;
            dp.eps_scale = cfg.epsilon;
            dp.t1 = cfg.grid.t;
        } else {
            dp.signal = DiscretizedProcess::Signal::delta_anticipation;
            dp.delta = cfg.delta;
            dp.noise = NoiseModel::white(cfg.sigma);
        }
        dp.obs = obs;
        DriftEstimate est = gaussian_exact_drift(ExpansionSpec{dp}, R.ens, "projection");
        est.level = obs.size() - 1;
        R.levels.push_back(std::move(est));
    }
    for (const auto& e : R.levels) ptrs.push_back(&e);

    if (fbm_bridge) {
        // Closed-form reference drift on the same paths.
        const Eigen::ArrayXXd& W = R.ens.channel("W");
        const Eigen::ArrayXXd& G = R.ens.channel("fbm");
        const Eigen::Index n = W.rows(), m = W.cols();
        Eigen::ArrayXXd alphas(n, m - 1);
        for (Eigen::Index j = 0; j + 1 < m; ++j) {
            const double s = grid[static_cast<std::size_t>(j)];
            const double den =
                (1.0 - s) + cfg.epsilon * cfg.epsilon * std::pow(1.0 - s, 2.0 * cfg.hurst);
            alphas.col(j) =
                (W.col(m - 1) - W.col(j) +
                 cfg.epsilon * G.col(static_cast<Eigen::Index>(*grid.index_of(1.0 - s)))) /
                den;
        }
        R.reference =
            make_estimate(R.ens.grid, std::move(alphas), "closed_form", R.ens.channel("qv"));
    }

    R.report = convergence_report(ptrs, R.reference ? &*R.reference : nullptr,
                                  ConvergenceThresholds::mc());
    return R;
}

}  // namespace

ConvergeResult run_converge(const ExperimentConfig& cfg) {
    return run_convergence_family(cfg, true);
}

ConvergeResult run_white_noise(const ExperimentConfig& cfg) {
    return run_convergence_family(cfg, false);
}

// -------------------------------------------------------------- bessel3 --

BesselResult run_bessel3(const ExperimentConfig& cfg) {
    const TimeGrid grid = TimeGrid::uniform(cfg.grid.t, static_cast<std::size_t>(cfg.grid.n0));
    BesselResult R;
    R.ens = simulate(Model::bessel3(), grid, cfg.n_paths, cfg.seed);
    const Eigen::ArrayXXd& Z = R.ens.channel("Z");
    const Eigen::ArrayXXd& X = R.ens.channel("X");
    const Eigen::Index n = Z.rows(), m = Z.cols();

    std::vector<const DriftEstimate*> ptrs;
    for (std::size_t k = 0; k < cfg.eps_levels.size(); ++k) {
        const double eps = cfg.eps_levels[k];
        Eigen::ArrayXXd alphas = Eigen::ArrayXXd::Zero(n, m - 1);
        std::vector<uint8_t> excluded(static_cast<std::size_t>(n), 0);
        // Column 0 stays 0: Z_0 = 0, and the two ladder terms cancel in the
        // small-Z limit anyway.
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index j = 1; j + 1 < m; ++j) {
                try {
                    alphas(p, j) = bessel_ladder_drift(Z(p, j), X(p, j), eps);
                } catch (const ladder_singularity&) {
                    excluded[static_cast<std::size_t>(p)] = 1;
                    alphas(p, j) = 0.0;
                }
            }
        }
        DriftEstimate est = make_estimate(R.ens.grid, std::move(alphas), "ladder",
                                          R.ens.channel("qv"), std::move(excluded));
        est.level = k + 1;
        R.levels.push_back(std::move(est));
    }
    for (const auto& e : R.levels) ptrs.push_back(&e);
    R.report = convergence_report(ptrs, nullptr, ConvergenceThresholds::mc());

    // Ladder-time identity at s = T: P(X > p eps | Z) = (1 - p eps / Z)+,
    // audited inside quantile bins of Z.
    {
        AuditReport rep;
        rep.n_paths = cfg.n_paths;
        rep.seed = cfg.seed;
        const double eps = cfg.eps_levels.front();
        const Eigen::ArrayXd zT = Z.col(m - 1);
        const Eigen::ArrayXd xT = X.col(m - 1);
        std::vector<double> sorted(zT.data(), zT.data() + zT.size());
        std::sort(sorted.begin(), sorted.end());
        const int nbins = 8;
        for (int p = 0; p <= 2; ++p) {
            for (int b = 0; b < nbins; ++b) {
                const double lo = sorted[static_cast<std::size_t>(
                    (b * (sorted.size() - 1)) / nbins)];
                const double hi = sorted[static_cast<std::size_t>(
                    ((b + 1) * (sorted.size() - 1)) / nbins)];
                std::vector<double> diffs;
                for (Eigen::Index i = 0; i < zT.size(); ++i) {
                    const bool in_bin = b + 1 < nbins ? (zT(i) >= lo && zT(i) < hi)
                                                      : (zT(i) >= lo && zT(i) <= hi);
                    if (!in_bin) continue;
                    const double emp = xT(i) > p * eps ? 1.0 : 0.0;
                    const double theo = std::max(0.0, 1.0 - p * eps / zT(i));
                    diffs.push_back(emp - theo);
                }
                if (diffs.size() < 2) continue;
                double mean = 0.0;
                for (double d : diffs) mean += d;
                mean /= static_cast<double>(diffs.size());
                double var = 0.0;
                for (double d : diffs) var += (d - mean) * (d - mean);
                var /= static_cast<double>(diffs.size() - 1);
                rep.add("ladder/p" + std::to_string(p) + "/bin" + std::to_string(b), mean,
                        std::sqrt(var / static_cast<double>(diffs.size())));
            }
        }
        rep.sort_entries();
        R.ladder_identity = std::move(rep);
    }
    return R;
}

// --------------------------------------------------------- anticipation --

AnticipationResult run_anticipation(const ExperimentConfig& cfg) {
    const TimeGrid grid = TimeGrid::uniform(cfg.grid.t, static_cast<std::size_t>(cfg.grid.n0));
    PathEnsemble ens = simulate(Model::brownian(), grid, cfg.n_paths, cfg.seed);
    const Eigen::ArrayXXd& W = ens.channel("W");

    AuditReport rep;
    rep.n_paths = cfg.n_paths;
    rep.seed = cfg.seed;

    struct PhiCase {
        std::string name;
        std::function<double(double)> fn;
        std::vector<std::pair<double, double>> pairs;
    };
    const std::vector<PhiCase> cases = {
        {"shift", [&](double u) { return u + cfg.delta; },
         {{0.3, 0.35}, {0.5, 0.55}, {0.5, 0.7}, {0.8, 0.9}, {1.0, 1.2}}},
        {"scale", [](double u) { return 2.0 * u; },
         {{0.25, 0.4}, {0.5, 0.8}, {0.5, 1.5}, {0.75, 1.5}, {1.0, 1.9}}},
    };

    for (const auto& pc : cases) {
        std::vector<double> phi_vals(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) phi_vals[i] = pc.fn(grid[i]);
        GridFunction phi(grid, phi_vals);

        for (std::size_t pi = 0; pi < pc.pairs.size(); ++pi) {
            const auto [s, t] = pc.pairs[pi];
            // Revealed times: grid u <= s and phi(u) for grid u <= s, snapped.
            std::vector<double> revealed;
            for (std::size_t i = 0; i < grid.size() && grid[i] <= s + 1e-12; ++i) {
                revealed.push_back(grid[i]);
                const double pv = phi(grid[i]);
                auto idx = grid.index_of(pv, 1e-9);
                if (idx) revealed.push_back(grid[*idx]);
            }
            std::sort(revealed.begin(), revealed.end());
            revealed.erase(std::unique(revealed.begin(), revealed.end()), revealed.end());
            if (!revealed.empty() && revealed.front() == 0.0)
                revealed.erase(revealed.begin());  // W_0 is deterministic

            std::vector<double> times = revealed;
            times.push_back(t);
            GaussianSystem sys = brownian_system(times);
            std::vector<std::string> obs_labels(sys.labels.begin(), sys.labels.end() - 1);
            ConditionalRepr repr = condition(sys, sys.labels.back(), obs_labels);

            // lhs: Gaussian conditional mean per path; rhs: W at phi(tau(s,t)).
            const double tau = anticipation_tau(phi, s, t);
            const double phi_tau = phi(tau);
            auto rhs_idx = grid.index_of(phi_tau, 1e-9);
            if (!rhs_idx)
                throw std::invalid_argument("anticipation: phi(tau) not on the grid");

            Eigen::ArrayXd lhs = Eigen::ArrayXd::Constant(W.rows(), repr.intercept);
            for (std::size_t k = 0; k < revealed.size(); ++k)
                lhs += repr.weights(static_cast<Eigen::Index>(k)) *
                       W.col(static_cast<Eigen::Index>(*grid.index_of(revealed[k])));
            const Eigen::ArrayXd rhs = W.col(static_cast<Eigen::Index>(*rhs_idx));

            Eigen::ArrayXd diff = lhs - rhs;
            const double mean = diff.mean();
            const double var =
                (diff - mean).square().sum() / static_cast<double>(diff.size() - 1);
            // Pairs where the representation is pathwise exact leave only
            // rounding noise; floor the SE so machine-zero means read as
            // agreement instead of a roundoff t-statistic.
            rep.add("tau/" + pc.name + "/pair" + std::to_string(pi), mean,
                    std::max(std::sqrt(var / static_cast<double>(diff.size())), 1e-10));
        }
    }
    rep.sort_entries();
    return {std::move(rep)};
}

// ------------------------------------------------------------- artifacts --

namespace {

void write_text(const fs::path& path, const std::string& text, RunRecord& rec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write artifact " + path.string());
    out << text;
    rec.artifacts.push_back(path.filename().string());
}

template <typename WriterFn>
void write_stream(const fs::path& path, RunRecord& rec, WriterFn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write artifact " + path.string());
    fn(out);
    rec.artifacts.push_back(path.filename().string());
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg, Stage stage) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    RunRecord rec;
    rec.version = kVersion;
    {
        std::ostringstream hex;
        hex << std::hex << cfg.hash();
        rec.config_hash = hex.str();
    }
    const fs::path dir(cfg.out_dir);
    write_text(dir / "effective_config.json", cfg.to_json(), rec);

    bool audits_pass = true;
    auto note_audit = [&](const AuditReport& r) { audits_pass = audits_pass && r.all_pass(); };

    const std::string& exp = cfg.experiment;
    if (exp == "custom" || stage == Stage::simulate) {
        // Ensemble dump only; guarded against unreasonably large CSVs.
        const TimeGrid grid =
            (exp == "ito" || exp == "value")
                ? ito_grid(cfg)
                : TimeGrid::uniform(cfg.grid.t, static_cast<std::size_t>(cfg.grid.n0));
        PathEnsemble ens = (exp == "bessel3")
                               ? simulate(Model::bessel3(), grid, cfg.n_paths, cfg.seed)
                               : simulate(Model::brownian(), grid, cfg.n_paths, cfg.seed);
        if (exp == "white_noise")
            ens.absorb(companion(Model::white(cfg.sigma), grid, cfg.n_paths, cfg.seed));
        if (exp == "fbm_noise" || exp == "converge")
            ens.absorb(companion(Model::fbm(cfg.hurst), grid, cfg.n_paths, cfg.seed));
        if (cfg.n_paths * grid.size() <= 2'000'000) {
            write_stream(dir / "ensemble.csv", rec,
                         [&](std::ostream& o) { write_ensemble_csv(ens, o); });
        } else {
            json meta;
            meta["note"] = "ensemble too large for a CSV dump; reduce n_paths";
            meta["n_paths"] = cfg.n_paths;
            meta["grid_points"] = grid.size();
            meta["model"] = ens.model_desc;
            write_text(dir / "ensemble_summary.json", meta.dump(2), rec);
        }
    } else if (exp == "ito" || exp == "value") {
        ItoResult R = run_ito(cfg);
        if (stage >= Stage::drift) {
            write_text(dir / "drift_closed_form.json", drift_estimate_json(R.alpha), rec);
            if (cfg.format == "csv")
                write_stream(dir / "drift.csv", rec, [&](std::ostream& o) {
                    write_drift_csv(R.alpha, R.ens.channel("qv"), o);
                });
        }
        if (stage >= Stage::audit) {
            write_text(dir / "audit_uncompensated.json", R.audit_uncompensated.to_json(), rec);
            write_text(dir / "audit_compensated.json", R.audit_compensated.to_json(), rec);
            write_text(dir / "audit_qv.json", R.audit_qv.to_json(), rec);
            write_text(dir / "audit_deflator.json", R.audit_deflator.to_json(), rec);
            write_text(dir / "audit_deflator_ez.json", R.audit_deflator_ez.to_json(), rec);
            note_audit(R.audit_compensated);
            note_audit(R.audit_qv);
            note_audit(R.audit_deflator);
            note_audit(R.audit_deflator_ez);
        }
        if (stage >= Stage::value) {
            write_text(dir / "valuation.json", R.valuation.to_json(), rec);
            write_text(dir / "value_check.json", R.value_check.to_json(), rec);
            write_text(dir / "valuation_x5.json", R.valuation_x5.to_json(), rec);
            if (cfg.format == "csv")
                write_stream(dir / "pnl.csv", rec,
                             [&](std::ostream& o) { write_pnl_csv(R.valuation, o); });
            note_audit(R.value_check);
        }
    } else if (exp == "fbm_noise") {
        FbmNoiseResult R = run_fbm_noise(cfg);
        if (stage >= Stage::drift) {
            write_text(dir / "drift_closed_form.json", drift_estimate_json(R.alpha), rec);
            json scan = json::array();
            for (const auto& row : R.integrability_scan)
                scan.push_back({{"k", row.k},
                                {"H", cfg.hurst},
                                {"value", row.value_h},
                                {"H_mirror", 1.0 - cfg.hurst},
                                {"value_mirror", row.value_h_high}});
            write_text(dir / "integrability_scan.json", scan.dump(2), rec);
            if (cfg.format == "csv")
                write_stream(dir / "drift.csv", rec, [&](std::ostream& o) {
                    write_drift_csv(R.alpha, R.ens.channel("qv"), o);
                });
        }
    } else if (exp == "converge" || exp == "white_noise") {
        ConvergeResult R = exp == "converge" ? run_converge(cfg) : run_white_noise(cfg);
        if (stage >= Stage::drift) {
            for (const auto& est : R.levels)
                write_text(dir / ("drift_level_" + std::to_string(est.level) + ".json"),
                           drift_estimate_json(est), rec);
        }
        if (stage >= Stage::converge)
            write_text(dir / "convergence.json", R.report.to_json(), rec);
    } else if (exp == "bessel3") {
        BesselResult R = run_bessel3(cfg);
        if (stage >= Stage::drift) {
            for (std::size_t k = 0; k < R.levels.size(); ++k)
                write_text(dir / ("drift_ladder_" + std::to_string(k) + ".json"),
                           drift_estimate_json(R.levels[k]), rec);
        }
        if (stage >= Stage::audit) {
            write_text(dir / "audit_ladder_identity.json", R.ladder_identity.to_json(), rec);
            note_audit(R.ladder_identity);
        }
        if (stage >= Stage::converge)
            write_text(dir / "convergence.json", R.report.to_json(), rec);
    } else if (exp == "anticipation") {
        AnticipationResult R = run_anticipation(cfg);
        if (stage >= Stage::audit) {
            write_text(dir / "audit_tau_representation.json", R.tau_repr.to_json(), rec);
            note_audit(R.tau_repr);
        }
    }

    rec.exit_status = (cfg.strict && !audits_pass) ? 1 : 0;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::ofstream out(dir / "run_record.json", std::ios::binary);
        out << rec.to_json();
    }
    return rec;
}

}  // namespace driftlab
