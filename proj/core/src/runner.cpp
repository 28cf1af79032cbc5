#include "clfno/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "clfno/checkpoint.hpp"
#include "clfno/rng.hpp"
#include "clfno/taskgen.hpp"

namespace fs = std::filesystem;

namespace clfno {

namespace {

std::string stage_ckpt_path(const std::string& dir, int stage) {
    return dir + "/stage" + std::to_string(stage) + "_model.ckpt";
}
std::string stage_state_path(const std::string& dir, int stage) {
    return dir + "/stage" + std::to_string(stage) + "_state.bin";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "io", "cannot open for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    require(out.good(), "io", "write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "io", "cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

void RunConfig::validate() const {
    require(!output_dir.empty(), "bad_config", "run config needs an output_dir");
    require(!dataset_paths.empty(), "bad_config", "run config needs dataset paths");
    require(epochs_first > 0 && epochs_later > 0, "bad_config", "epoch budgets must be > 0");
    require(stop_after_stage >= 0, "bad_config", "stop_after_stage must be >= 0");
    fno.validate();
    metrics.validate();
    hyper.validate();
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.method = method_from_string(j.at("method").get<std::string>());
    c.seed = j.value("seed", 0ull);
    c.output_dir = j.at("output_dir").get<std::string>();
    c.dataset_paths = j.at("datasets").get<std::vector<std::string>>();
    c.epochs_first = j.value("epochs_first", 3000);
    c.epochs_later = j.value("epochs_later", 1500);
    if (j.contains("fno")) {
        c.fno = j.at("fno").get<FnoConfig>();
    }
    if (j.contains("metrics")) {
        c.metrics = j.at("metrics").get<MetricConfig>();
    }
    c.hyper = default_method_config(c.method);
    if (j.contains("hyperparams")) {
        from_json(j.at("hyperparams"), c.hyper);
    }
    c.pretrained_checkpoint = j.value("pretrained_checkpoint", std::string());
    c.stop_after_stage = j.value("stop_after_stage", 0);
    c.save_images = j.value("save_images", false);
    c.validate();
    return c;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["method"] = to_string(method);
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["datasets"] = dataset_paths;
    j["epochs_first"] = epochs_first;
    j["epochs_later"] = epochs_later;
    j["fno"] = fno;
    j["metrics"] = metrics;
    j["hyperparams"] = hyper;
    j["pretrained_checkpoint"] = pretrained_checkpoint;
    j["save_images"] = save_images;
    return j;
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["seed"] = seed;
    j["task_ids"] = task_ids;
    j["eval_matrix"] = matrix.to_json();
    j["avg_accuracy"] = aa;
    nlohmann::json jf = nlohmann::json::array();
    for (const Forgetting& f : forget) {
        jf.push_back({{"per_task", f.per_task}, {"mean", f.mean}});
    }
    j["forgetting"] = std::move(jf);
    j["backbone_params"] = backbone_params;
    j["added_params"] = added_params;
    j["routing_accuracy"] = routing_accuracy;
    nlohmann::json jp = nlohmann::json::array();
    for (const StagePlasticity& p : plasticity) {
        jp.push_back({{"train_rel_pre", p.train_rel_pre}, {"train_rel_post", p.train_rel_post}});
    }
    j["plasticity"] = std::move(jp);
    return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.task_ids = j.at("task_ids").get<std::vector<std::string>>();
    r.matrix = EvalMatrix::from_json(j.at("eval_matrix"));
    r.aa = j.at("avg_accuracy").get<std::vector<double>>();
    for (const auto& jf : j.at("forgetting")) {
        Forgetting f;
        f.per_task = jf.at("per_task").get<std::vector<double>>();
        f.mean = jf.at("mean").get<double>();
        r.forget.push_back(std::move(f));
    }
    r.backbone_params = j.at("backbone_params").get<int64_t>();
    r.added_params = j.at("added_params").get<std::vector<int64_t>>();
    r.routing_accuracy = j.at("routing_accuracy").get<std::vector<double>>();
    for (const auto& jp : j.at("plasticity")) {
        StagePlasticity p;
        p.train_rel_pre = jp.at("train_rel_pre").get<double>();
        p.train_rel_post = jp.at("train_rel_post").get<double>();
        r.plasticity.push_back(p);
    }
    if (j.contains("stage_wall_ms")) {
        r.stage_wall_ms = j.at("stage_wall_ms").get<std::vector<double>>();
    }
    return r;
}

RunReport run_sequence(const RunConfig& config) {
    config.validate();

    std::vector<TaskDataset> datasets;
    datasets.reserve(config.dataset_paths.size());
    for (const std::string& path : config.dataset_paths) {
        require(fs::exists(path), "missing_dataset", "dataset not found: " + path);
        datasets.push_back(load_dataset(path));
    }
    const int total_stages = static_cast<int>(datasets.size());
    int last_stage = (config.stop_after_stage > 0)
                         ? std::min(config.stop_after_stage, total_stages)
                         : total_stages;

    fs::create_directories(config.output_dir);
    const std::string state_file = config.output_dir + "/run_state.json";
    const std::string canonical = config.to_json().dump();

    RunReport report;
    report.method = to_string(config.method);
    report.seed = config.seed;

    int completed = 0;
    FnoModel model(config.fno, derive_seed(config.seed, "init"));
    MethodState mstate;

    if (fs::exists(state_file)) {
        nlohmann::json st = nlohmann::json::parse(read_text(state_file));
        require(st.at("config").dump() == canonical, "resume_mismatch",
                "output directory holds a run with a different configuration");
        completed = st.at("completed_stages").get<int>();
        if (completed > 0) {
            LoadedCheckpoint ck = load_checkpoint(stage_ckpt_path(config.output_dir, completed));
            model = FnoModel(config.fno, std::move(ck.store));
            mstate = MethodState::load(stage_state_path(config.output_dir, completed),
                                       config.method);
            report = RunReport::from_json(st.at("partial_report"));
        }
    }

    if (completed == 0 && !config.pretrained_checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(config.pretrained_checkpoint);
        require(ck.meta.contains("model_config") &&
                    ck.meta.at("model_config").get<FnoConfig>().hidden_channels ==
                        config.fno.hidden_channels,
                "resume_mismatch", "pretrained checkpoint does not match the model config");
        model = FnoModel(config.fno, std::move(ck.store));
    }

    ContinualTrainer trainer(config.method, config.hyper, config.metrics, config.seed);
    report.backbone_params = model.backbone_param_count();

    for (int stage = completed + 1; stage <= last_stage; ++stage) {
        const TaskDataset& task = datasets[stage - 1];
        bool skip_training = (stage == 1) && !config.pretrained_checkpoint.empty();
        int epochs = (stage == 1) ? config.epochs_first : config.epochs_later;

        StageStats stats = trainer.train_stage(model, mstate, task, stage, epochs, skip_training);

        // evaluate every task seen so far on its test split
        auto eval_start = std::chrono::steady_clock::now();
        std::vector<double> row;
        double routed_correct = 0.0;
        double routed_total = 0.0;
        for (int j = 1; j <= stage; ++j) {
            double racc = 1.0;
            double rel = trainer.evaluate(model, mstate, datasets[j - 1], /*test_split=*/true,
                                          /*use_routing=*/config.method == Method::Sle, &racc);
            row.push_back(accuracy_R(rel, config.metrics));
            routed_correct += racc * static_cast<double>(datasets[j - 1].test.size());
            routed_total += static_cast<double>(datasets[j - 1].test.size());
        }
        report.matrix.push_stage(row);
        report.aa.push_back(avg_accuracy(report.matrix, stage));
        if (stage >= 2) {
            report.forget.push_back(forgetting(report.matrix, stage));
        }
        if (config.method == Method::Sle) {
            report.routing_accuracy.push_back(routed_correct / routed_total);
        }
        report.added_params.push_back(stats.added_params);
        report.plasticity.push_back({stats.train_rel_pre, stats.train_rel_post});
        report.task_ids.push_back(task.task_id);
        double eval_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - eval_start)
                             .count();
        report.stage_wall_ms.push_back(stats.wall_ms + eval_ms);

        // persist stage artifacts and the resumable run state
        nlohmann::json ck_meta;
        ck_meta["format_version"] = 1;
        ck_meta["model_config"] = config.fno;
        ck_meta["method"] = to_string(config.method);
        ck_meta["task_ids"] = report.task_ids;
        ck_meta["stage"] = stage;
        save_checkpoint(model.store(), ck_meta, stage_ckpt_path(config.output_dir, stage));
        mstate.save(stage_state_path(config.output_dir, stage), config.method);
        if (config.method == Method::Sle && mstate.has_router) {
            for (const KpcaModel& det : mstate.router.models()) {
                save_detector(det, mstate.router.rff(),
                              config.output_dir + "/detector_" + det.task_id + ".bin");
            }
        }

        nlohmann::json st;
        st["config"] = nlohmann::json::parse(canonical);
        st["completed_stages"] = stage;
        st["partial_report"] = report.to_json();
        st["partial_report"]["stage_wall_ms"] = report.stage_wall_ms;
        write_text(state_file, st.dump(2));
    }

    if (last_stage == total_stages) {
        write_text(config.output_dir + "/report.json", report.to_json().dump(2));
        write_text(config.output_dir + "/eval_matrix.csv", report.matrix.to_csv(report.task_ids));
        nlohmann::json timings;
        timings["stage_wall_ms"] = report.stage_wall_ms;
        write_text(config.output_dir + "/timings.json", timings.dump(2));
        render_tables(report, config.output_dir);
        if (config.save_images) {
            render_field_images(stage_ckpt_path(config.output_dir, total_stages),
                                stage_state_path(config.output_dir, total_stages),
                                config.dataset_paths, config.output_dir + "/images");
        }
    }
    return report;
}

// ---- rendering -----------------------------------------------------------------

void render_tables(const RunReport& report, const std::string& out_dir) {
    require(report.matrix.stages() > 0, "empty_report", "cannot render an empty report");
    fs::create_directories(out_dir);

    char buf[64];
    std::string acc = "method,stage";
    for (const std::string& tid : report.task_ids) {
        acc += "," + tid;
    }
    acc += ",avg_acc\n";
    for (int i = 1; i <= report.matrix.stages(); ++i) {
        acc += report.method + "," + report.task_ids[i - 1];
        for (int j = 1; j <= static_cast<int>(report.task_ids.size()); ++j) {
            acc += ",";
            if (j <= i) {
                std::snprintf(buf, sizeof(buf), "%.4f", report.matrix.at(i, j));
                acc += buf;
            }
        }
        std::snprintf(buf, sizeof(buf), "%.4f", report.aa[i - 1]);
        acc += std::string(",") + buf + "\n";
    }
    write_text(out_dir + "/accuracy_table.csv", acc);

    std::string fg = "method,stage";
    for (size_t j = 0; j + 1 < report.task_ids.size(); ++j) {
        fg += ",F_" + report.task_ids[j];
    }
    fg += ",mean_f\n";
    for (size_t i = 0; i < report.forget.size(); ++i) {
        fg += report.method + "," + report.task_ids[i + 1];
        for (size_t j = 0; j + 1 < report.task_ids.size(); ++j) {
            fg += ",";
            if (j < report.forget[i].per_task.size()) {
                std::snprintf(buf, sizeof(buf), "%.4f", report.forget[i].per_task[j]);
                fg += buf;
            }
        }
        std::snprintf(buf, sizeof(buf), "%.4f", report.forget[i].mean);
        fg += std::string(",") + buf + "\n";
    }
    write_text(out_dir + "/forgetting_table.csv", fg);

    nlohmann::json tables;
    tables["report"] = report.to_json();
    write_text(out_dir + "/tables.json", tables.dump(2));
}

void write_field_ppm(const GridField& field, int channel, const std::string& path) {
    require(channel >= 0 && channel < field.channels, "bad_index", "channel out of range");
    double lo = field.at(channel, 0, 0), hi = lo;
    for (int i = 0; i < field.height; ++i) {
        for (int j = 0; j < field.width; ++j) {
            lo = std::min(lo, field.at(channel, i, j));
            hi = std::max(hi, field.at(channel, i, j));
        }
    }
    double span = (hi > lo) ? hi - lo : 1.0;

    // compact 5-stop heat colormap
    static const double stops[5][3] = {{0.00, 0.00, 0.15},
                                       {0.23, 0.04, 0.39},
                                       {0.73, 0.21, 0.33},
                                       {0.98, 0.56, 0.05},
                                       {0.99, 1.00, 0.64}};
    auto colormap = [&](double v, uint8_t* rgb) {
        double x = std::clamp(v, 0.0, 1.0) * 4.0;
        int s = std::min(3, static_cast<int>(x));
        double f = x - s;
        for (int k = 0; k < 3; ++k) {
            double c = stops[s][k] + f * (stops[s + 1][k] - stops[s][k]);
            rgb[k] = static_cast<uint8_t>(std::lround(255.0 * std::clamp(c, 0.0, 1.0)));
        }
    };

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "io", "cannot open for writing: " + path);
    out << "P6\n" << field.width << " " << field.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(field.width) * 3);
    for (int i = 0; i < field.height; ++i) {
        for (int j = 0; j < field.width; ++j) {
            colormap((field.at(channel, i, j) - lo) / span, row.data() + 3 * j);
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    require(out.good(), "io", "write failed: " + path);
}

void render_field_images(const std::string& ckpt_path, const std::string& state_path,
                         const std::vector<std::string>& dataset_paths,
                         const std::string& out_dir) {
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    FnoConfig cfg = ck.meta.at("model_config").get<FnoConfig>();
    Method method = method_from_string(ck.meta.at("method").get<std::string>());
    FnoModel model(cfg, std::move(ck.store));
    MethodState state = MethodState::load(state_path, method);
    ContinualTrainer trainer(method, default_method_config(method), MetricConfig{}, 0);

    fs::create_directories(out_dir);
    for (const std::string& path : dataset_paths) {
        TaskDataset ds = load_dataset(path);
        require(!ds.test.empty(), "empty_dataset", "dataset has no test samples: " + path);
        const Sample& s = ds.test.front();
        GridField pred = trainer.predict(model, state, s.input, ds.task_id);
        GridField err(1, pred.height, pred.width);
        for (size_t i = 0; i < err.data.size(); ++i) {
            err.data[i] = std::abs(pred.data[i] - s.target.data[i]);
        }
        write_field_ppm(pred, 0, out_dir + "/" + ds.task_id + "_prediction.ppm");
        write_field_ppm(s.target, 0, out_dir + "/" + ds.task_id + "_target.ppm");
        write_field_ppm(err, 0, out_dir + "/" + ds.task_id + "_abs_error.ppm");
    }
}

} // namespace clfno
