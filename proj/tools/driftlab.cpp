#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "driftlab/errors.hpp"
#include "driftlab/experiment.hpp"

using namespace driftlab;

namespace {

struct CliFlags {
    std::string config_path;
    std::string experiment;
    std::optional<uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::string> out;
    std::optional<std::string> format;
    bool strict = false;
};

ExperimentConfig load_config(const CliFlags& f) {
    ExperimentConfig cfg;
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw config_error("cannot read config file '" + f.config_path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        cfg = ExperimentConfig::from_json_text(buf.str());
    } else if (!f.experiment.empty()) {
        cfg = ExperimentConfig::defaults_for(f.experiment);
    } else {
        throw config_error("either --config or --experiment is required");
    }
    if (!f.experiment.empty() && f.experiment != cfg.experiment) {
        cfg = ExperimentConfig::defaults_for(f.experiment);
        cfg.overrides.push_back("experiment");
    }
    if (f.seed) {
        cfg.seed = *f.seed;
        cfg.overrides.push_back("seed");
    }
    if (f.paths) {
        cfg.n_paths = *f.paths;
        cfg.overrides.push_back("n_paths");
    }
    if (f.out) {
        cfg.out_dir = *f.out;
        cfg.overrides.push_back("out_dir");
    }
    if (f.format) {
        cfg.format = *f.format;
        cfg.overrides.push_back("format");
    }
    if (f.strict) {
        cfg.strict = true;
        cfg.overrides.push_back("strict");
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CliFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON experiment config");
    cmd->add_option("--experiment", f.experiment,
                    "experiment label (ito|fbm_noise|anticipation|white_noise|bessel3|converge|value|custom)");
    cmd->add_option("--seed", f.seed, "RNG seed (overrides config)");
    cmd->add_option("--paths", f.paths, "number of paths (overrides config)");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--format", f.format, "artifact format: csv|json");
    cmd->add_flag("--strict", f.strict, "nonzero exit when any audit entry fails");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"driftlab: information-drift experiments for expanded filtrations"};
    app.require_subcommand(1);

    const std::vector<std::string> stages = {"simulate", "drift", "audit",
                                             "converge", "value", "run"};
    std::map<std::string, CliFlags> flags;
    for (const auto& name : stages) {
        CLI::App* cmd = app.add_subcommand(name, "run pipeline through the " + name + " stage");
        add_common(cmd, flags[name]);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        ExperimentConfig cfg = load_config(flags[sub]);
        const Stage stage = stage_from_name(sub);
        const RunRecord rec = run_experiment(cfg, stage);
        std::cout << "experiment=" << cfg.experiment << " hash=" << rec.config_hash
                  << " artifacts=" << rec.artifacts.size() << " out=" << cfg.out_dir
                  << " status=" << rec.exit_status << "\n";
        return rec.exit_status;
    } catch (const config_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const numerical_degeneracy& e) {
        std::cerr << "numerical degeneracy: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
