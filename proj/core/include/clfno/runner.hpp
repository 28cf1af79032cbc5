#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clfno/cl_methods.hpp"
#include "clfno/fno.hpp"
#include "clfno/metrics.hpp"

namespace clfno {

/// One experiment: a method, a task sequence, and the training protocol
/// (stage 1 from scratch — or from a pretrained checkpoint — then the
/// configured method on every later stage).
struct RunConfig {
    Method method = Method::Naive;
    uint64_t seed = 0;
    std::string output_dir;
    std::vector<std::string> dataset_paths;
    int epochs_first = 3000;
    int epochs_later = 1500;
    FnoConfig fno;
    MetricConfig metrics;
    MethodConfig hyper; // defaulted per method, then overridden by config keys

    std::string pretrained_checkpoint; // optional stage-1 warm start
    int stop_after_stage = 0;          // 0 = run all stages (testing/ops hook)
    bool save_images = false;

    static RunConfig from_json(const nlohmann::json& j);
    /// Canonical form (all defaults materialized); resume compares this.
    nlohmann::json to_json() const;
    void validate() const;
};

struct StagePlasticity {
    double train_rel_pre = 0.0;
    double train_rel_post = 0.0;
};

struct RunReport {
    std::string method;
    uint64_t seed = 0;
    std::vector<std::string> task_ids;
    EvalMatrix matrix;
    std::vector<double> aa;                 // per stage
    std::vector<Forgetting> forget;         // stages 2..T
    int64_t backbone_params = 0;
    std::vector<int64_t> added_params;      // per stage
    std::vector<double> routing_accuracy;   // per stage (routing methods only)
    std::vector<StagePlasticity> plasticity; // per stage
    std::vector<double> stage_wall_ms;       // volatile; kept out of report.json

    /// Deterministic content only (timings go to timings.json).
    nlohmann::json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
};

/// Execute (or resume) the sequential protocol. Writes per-stage
/// checkpoints, method state, run_state.json, and on completion
/// report.json, eval_matrix.csv, rendered tables and timings.json
/// under config.output_dir.
RunReport run_sequence(const RunConfig& config);

/// Rendered tables (accuracy and forgetting CSVs plus tables.json) from a
/// finished report. Errors on an empty report.
void render_tables(const RunReport& report, const std::string& out_dir);

/// Prediction / target / absolute-error rasters (binary PPM) for the
/// first test sample of each task, using the model in `ckpt_path`.
void render_field_images(const std::string& ckpt_path, const std::string& state_path,
                         const std::vector<std::string>& dataset_paths,
                         const std::string& out_dir);

/// Map one field channel to a raster image file (binary PPM, P6).
void write_field_ppm(const GridField& field, int channel, const std::string& path);

} // namespace clfno
