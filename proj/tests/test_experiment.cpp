#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <cmath>
#include <sstream>

#include "driftlab/errors.hpp"
#include "driftlab/experiment.hpp"

using namespace driftlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config: effective round trip") {
    ExperimentConfig c = ExperimentConfig::defaults_for("bessel3");
    c.seed = 77;
    c.eps_levels = {0.5, 0.25};
    ExperimentConfig back = ExperimentConfig::from_json_text(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("config: unknown keys rejected, naming the key") {
    CHECK_THROWS_WITH_AS(
        (void)ExperimentConfig::from_json_text(R"({"experiment":"ito","lamda":2})"),
        "unknown config key 'lamda'", config_error);
    CHECK_THROWS_WITH_AS(
        (void)ExperimentConfig::from_json_text(R"({"grid":{"dt":0.1}})"),
        "unknown config key 'grid.dt'", config_error);
    CHECK_THROWS_AS((void)ExperimentConfig::from_json_text(R"({"experiment":"wat"})"),
                    config_error);
    CHECK_THROWS_AS((void)ExperimentConfig::from_json_text("not json"), config_error);
}

TEST_CASE("config: defaults materialize into the persisted form") {
    ExperimentConfig c = ExperimentConfig::from_json_text(R"({"experiment":"white_noise"})");
    const std::string js = c.to_json();
    for (const char* key :
         {"\"delta\"", "\"sigma\"", "\"obs_n0\"", "\"obs_span\"", "\"grid\"", "\"seed\""})
        CHECK(js.find(key) != std::string::npos);
    CHECK(c.grid.n0 == 320);
}

TEST_CASE("determinism: rerunning a pipeline reproduces bit-identical artifacts") {
    TempDir d1("driftlab_det_a"), d2("driftlab_det_b");
    ExperimentConfig cfg = ExperimentConfig::defaults_for("ito");
    cfg.n_paths = 400;
    cfg.grid.n0 = 64;
    cfg.seed = 42;

    cfg.out_dir = d1.path.string();
    RunRecord r1 = run_experiment(cfg, Stage::full);
    cfg.out_dir = d2.path.string();
    RunRecord r2 = run_experiment(cfg, Stage::full);
    REQUIRE(r1.artifacts == r2.artifacts);
    for (const auto& name : r1.artifacts) {
        if (name == "effective_config.json") continue;  // differs in out_dir
        CHECK_MESSAGE(slurp(d1.path / name) == slurp(d2.path / name), name);
    }
}

TEST_CASE("white_noise pipeline: increasing norms, not converged") {
    ExperimentConfig cfg = ExperimentConfig::defaults_for("white_noise");
    cfg.n_paths = 800;
    cfg.grid.levels = 3;
    ConvergeResult R = run_white_noise(cfg);
    REQUIRE(R.levels.size() == 3);
    CHECK(R.report.verdict != "converged");
    for (std::size_t k = 0; k + 1 < R.report.levels.size(); ++k)
        CHECK(R.report.levels[k + 1].h2_norm_sq > R.report.levels[k].h2_norm_sq);
}

TEST_CASE("bessel3 pipeline emits a diverging convergence report") {
    ExperimentConfig cfg = ExperimentConfig::defaults_for("bessel3");
    cfg.n_paths = 4000;
    cfg.grid.n0 = 128;
    cfg.seed = 11;
    BesselResult R = run_bessel3(cfg);
    CHECK(R.report.verdict == "diverging");
    CHECK(R.ladder_identity.all_pass());
}

TEST_CASE("anticipation pipeline: representation entries pass") {
    ExperimentConfig cfg = ExperimentConfig::defaults_for("anticipation");
    cfg.n_paths = 1000;
    AnticipationResult R = run_anticipation(cfg);
    REQUIRE(R.tau_repr.entries.size() == 10);
    CHECK(R.tau_repr.all_pass());
}

TEST_CASE("strict mode maps audit failures to exit status 1") {
    TempDir d("driftlab_strict");
    ExperimentConfig cfg = ExperimentConfig::defaults_for("bessel3");
    cfg.n_paths = 500;
    cfg.grid.n0 = 32;
    cfg.seed = 1;
    cfg.out_dir = d.path.string();
    cfg.strict = true;
    // With 500 paths the per-bin ladder test can wobble; whatever the audit
    // says must be what the status reports.
    RunRecord rec = run_experiment(cfg, Stage::full);
    const std::string audit = slurp(d.path / "audit_ladder_identity.json");
    const bool any_fail = audit.find("\"pass\": false") != std::string::npos;
    CHECK(rec.exit_status == (any_fail ? 1 : 0));
}

TEST_CASE("unknown experiment is a configuration error") {
    CHECK_THROWS_AS(ExperimentConfig::defaults_for("frobnicate"), config_error);
}

TEST_CASE("run record carries config hash and artifact list") {
    TempDir d("driftlab_rec");
    ExperimentConfig cfg = ExperimentConfig::defaults_for("custom");
    cfg.n_paths = 5;
    cfg.grid.n0 = 8;
    cfg.out_dir = d.path.string();
    RunRecord rec = run_experiment(cfg, Stage::simulate);
    CHECK(!rec.config_hash.empty());
    CHECK(rec.exit_status == 0);
    bool has_ensemble = false;
    for (const auto& a : rec.artifacts) has_ensemble |= (a == "ensemble.csv");
    CHECK(has_ensemble);
    CHECK(fs::exists(d.path / "run_record.json"));
}

TEST_CASE("fbm_noise pipeline: drift norms finite, scan rows populated") {
    ExperimentConfig cfg = ExperimentConfig::defaults_for("fbm_noise");
    cfg.n_paths = 500;
    cfg.grid.n0 = 64;
    FbmNoiseResult R = run_fbm_noise(cfg);
    CHECK(R.alpha.h2_norm_sq > 0.0);
    CHECK(std::isfinite(R.alpha.h2_norm_sq));
    REQUIRE(R.integrability_scan.size() == 5);
    // H = 0.25 column converges, mirrored H = 0.75 column keeps growing.
    const auto& scan = R.integrability_scan;
    CHECK(scan[4].value_h - scan[3].value_h < scan[1].value_h - scan[0].value_h);
    CHECK(scan[4].value_h_high - scan[3].value_h_high >
          scan[1].value_h_high - scan[0].value_h_high);
    CHECK(R.alpha.h2_path_quantiles.size() == 6);
}

TEST_CASE("cli stage gating writes stage-appropriate artifacts") {
    TempDir d("driftlab_stage");
    ExperimentConfig cfg = ExperimentConfig::defaults_for("ito");
    cfg.n_paths = 300;
    cfg.grid.n0 = 64;
    cfg.out_dir = d.path.string();
    RunRecord rec = run_experiment(cfg, Stage::drift);
    bool has_drift = false, has_valuation = false;
    for (const auto& a : rec.artifacts) {
        has_drift |= a == "drift_closed_form.json";
        has_valuation |= a == "valuation.json";
    }
    CHECK(has_drift);
    CHECK_FALSE(has_valuation);
}
