// clfno: continual operator-learning benchmark harness.
//
// Subcommands:
//   taskgen  generate the synthetic task sequence (or a custom spec file)
//   run      execute a configured method over a task sequence
//   eval     score one checkpoint against one dataset
//   report   render tables (and optionally field images) from a report
//
// Exit code 0 on success. Failures print a machine-readable JSON error
// record to stderr: {"error": {"code": ..., "message": ...}}.
// CLFNO_SEED overrides the seed of taskgen and run configs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clfno/checkpoint.hpp"
#include "clfno/cl_methods.hpp"
#include "clfno/runner.hpp"
#include "clfno/taskgen.hpp"

namespace fs = std::filesystem;
using clfno::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    clfno::require(in.good(), "io", "cannot open: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw clfno::Error("bad_config", "invalid JSON in " + path + ": " + e.what());
    }
}

std::optional<uint64_t> seed_override_from_env() {
    const char* env = std::getenv("CLFNO_SEED");
    if (env == nullptr || *env == '\0') {
        return std::nullopt;
    }
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw clfno::Error("bad_config", "CLFNO_SEED is not an unsigned integer");
    }
}

int cmd_taskgen(const std::string& spec_path, const std::string& out_dir, uint64_t seed,
                int grid) {
    if (auto env = seed_override_from_env()) {
        seed = *env;
    }
    std::vector<clfno::TaskSpec> specs;
    if (!spec_path.empty()) {
        json j = read_json_file(spec_path);
        if (j.contains("seed") && !seed_override_from_env()) {
            seed = j.at("seed").get<uint64_t>();
        }
        for (const json& jt : j.at("tasks")) {
            clfno::TaskSpec s = jt.get<clfno::TaskSpec>();
            if (!jt.contains("seed")) {
                s.seed = clfno::derive_seed(seed, "task." + s.id);
            }
            specs.push_back(std::move(s));
        }
        clfno::validate_sequence(specs);
    } else {
        specs = clfno::default_sequence(seed, grid);
    }
    fs::create_directories(out_dir);
    for (const clfno::TaskSpec& s : specs) {
        clfno::TaskDataset ds = clfno::generate(s);
        std::string path = out_dir + "/task_" + s.id + ".ds";
        clfno::save_dataset(ds, path);
        std::cout << path << ": train=" << ds.train.size() << " test=" << ds.test.size()
                  << " grid=" << s.grid << "\n";
    }
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& output_dir_override) {
    json j = read_json_file(config_path);
    if (auto env = seed_override_from_env()) {
        j["seed"] = *env;
    }
    if (!output_dir_override.empty()) {
        j["output_dir"] = output_dir_override;
    }
    clfno::RunConfig config = clfno::RunConfig::from_json(j);
    clfno::RunReport report = clfno::run_sequence(config);
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path,
             const std::string& state_path, bool route) {
    clfno::LoadedCheckpoint ck = clfno::load_checkpoint(ckpt_path);
    clfno::FnoConfig cfg = ck.meta.at("model_config").get<clfno::FnoConfig>();
    clfno::Method method =
        clfno::method_from_string(ck.meta.value("method", std::string("naive")));
    clfno::FnoModel model(cfg, std::move(ck.store));

    clfno::MethodState state;
    if (!state_path.empty()) {
        state = clfno::MethodState::load(state_path, method);
    } else if (ck.meta.contains("task_ids")) {
        state.task_ids = ck.meta.at("task_ids").get<std::vector<std::string>>();
    }
    clfno::require(!route || state.has_router, "bad_config",
                   "--route requires a method state with a fitted router");

    clfno::TaskDataset ds = clfno::load_dataset(dataset_path);
    clfno::MetricConfig metrics;
    clfno::ContinualTrainer trainer(method, clfno::default_method_config(method), metrics, 0);
    double racc = 1.0;
    double rel = trainer.evaluate(model, state, ds, /*test_split=*/true, route, &racc);

    json out;
    out["task_id"] = ds.task_id;
    out["rel_l2"] = rel;
    out["accuracy"] = clfno::accuracy_R(rel, metrics);
    if (route) {
        out["routing_accuracy"] = racc;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string& report_path, const std::string& out_dir, bool images,
               const std::string& ckpt_path, const std::string& state_path,
               const std::vector<std::string>& dataset_paths) {
    clfno::RunReport report = clfno::RunReport::from_json(read_json_file(report_path));
    clfno::render_tables(report, out_dir);
    if (images) {
        clfno::require(!ckpt_path.empty() && !state_path.empty() && !dataset_paths.empty(),
                       "bad_config",
                       "--images needs --checkpoint, --state and --dataset arguments");
        clfno::render_field_images(ckpt_path, state_path, dataset_paths, out_dir + "/images");
    }
    std::cout << "tables written to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual operator-learning benchmark harness"};
    app.require_subcommand(1);

    auto* tg = app.add_subcommand("taskgen", "generate synthetic task datasets");
    std::string tg_spec, tg_out = "data";
    uint64_t tg_seed = 0;
    int tg_grid = 64;
    tg->add_option("--spec", tg_spec, "sequence spec JSON (defaults to the built-in sequence)");
    tg->add_option("--out", tg_out, "output directory");
    tg->add_option("--seed", tg_seed, "generator seed");
    tg->add_option("--grid", tg_grid, "grid resolution for the built-in sequence");

    auto* run = app.add_subcommand("run", "execute a configured experiment");
    std::string run_config, run_outdir;
    run->add_option("--config", run_config, "run config JSON")->required();
    run->add_option("--output-dir", run_outdir, "override the config output_dir");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_dataset, ev_state;
    bool ev_route = false;
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--dataset", ev_dataset, "dataset file")->required();
    ev->add_option("--state", ev_state, "method state file (task-specific parameters/router)");
    ev->add_flag("--route", ev_route, "select the branch with the task-agnostic router");

    auto* rp = app.add_subcommand("report", "render tables and optional field images");
    std::string rp_report, rp_out = "report_out", rp_ckpt, rp_state;
    std::vector<std::string> rp_datasets;
    bool rp_images = false;
    rp->add_option("--report", rp_report, "report.json from a finished run")->required();
    rp->add_option("--out", rp_out, "output directory");
    rp->add_flag("--images", rp_images, "render prediction/target/error rasters");
    rp->add_option("--checkpoint", rp_ckpt, "final-stage checkpoint (for --images)");
    rp->add_option("--state", rp_state, "final-stage method state (for --images)");
    rp->add_option("--dataset", rp_datasets, "dataset files (for --images)");

    try {
        app.parse(argc, argv);
        if (tg->parsed()) {
            return cmd_taskgen(tg_spec, tg_out, tg_seed, tg_grid);
        }
        if (run->parsed()) {
            return cmd_run(run_config, run_outdir);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_dataset, ev_state, ev_route);
        }
        if (rp->parsed()) {
            return cmd_report(rp_report, rp_out, rp_images, rp_ckpt, rp_state, rp_datasets);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help
        }
        int rc = app.exit(e);
        json err;
        err["error"] = {{"code", "usage"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return rc;
    } catch (const clfno::Error& e) {
        json err;
        err["error"] = {{"code", e.code()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        json err;
        err["error"] = {{"code", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
