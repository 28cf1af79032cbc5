#include "clfno/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace clfno {

void to_json(nlohmann::json& j, const MetricConfig& c) {
    j = nlohmann::json{
        {"alpha", c.alpha}, {"l_max", c.l_max}, {"sobolev_lambda", c.sobolev_lambda}};
}

void from_json(const nlohmann::json& j, MetricConfig& c) {
    MetricConfig d;
    c.alpha = j.value("alpha", d.alpha);
    c.l_max = j.value("l_max", d.l_max);
    c.sobolev_lambda = j.value("sobolev_lambda", d.sobolev_lambda);
    c.validate();
}

double rel_l2(const GridField& yhat, const GridField& y) {
    require(yhat.channels == y.channels && yhat.height == y.height && yhat.width == y.width,
            "shape_mismatch", "rel_l2: field shapes differ");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) {
        double d = yhat.data[i] - y.data[i];
        num += d * d;
        den += y.data[i] * y.data[i];
    }
    require(den > 0.0, "zero_norm", "rel_l2: target has zero norm");
    return std::sqrt(num / den);
}

double accuracy_R(double rel, const MetricConfig& cfg) {
    require(rel >= 0.0, "bad_value", "accuracy_R: relative error must be >= 0");
    return std::exp(-cfg.alpha * rel / cfg.l_max);
}

double rel_from_accuracy(double r, const MetricConfig& cfg) {
    require(r > 0.0 && r <= 1.0, "bad_value", "rel_from_accuracy: accuracy must be in (0, 1]");
    return -std::log(r) * cfg.l_max / cfg.alpha;
}

Var sobolev_loss(Tape& t, Var yhat, const GridField& target, double lambda) {
    const Tensor& pred = t.val(yhat);
    require(pred.shape ==
                std::vector<int>({target.channels, target.height, target.width}),
            "shape_mismatch", "sobolev_loss: prediction " + shape_str(pred.shape) +
                                  " vs target (" + std::to_string(target.channels) + "," +
                                  std::to_string(target.height) + "," +
                                  std::to_string(target.width) + ")");
    Var y = t.constant(target.to_tensor());
    Var diff = t.sub(yhat, y);
    Var loss = t.sum(t.mul(diff, diff));
    if (lambda > 0.0) {
        Var dh = t.grad_h(diff);
        Var dw = t.grad_w(diff);
        Var gterm = t.add(t.sum(t.mul(dh, dh)), t.sum(t.mul(dw, dw)));
        loss = t.add(loss, t.scale(gterm, lambda));
    }
    return loss;
}

// ---- evaluation matrix -----------------------------------------------------

void EvalMatrix::push_stage(std::vector<double> accuracies) {
    require(accuracies.size() == rows.size() + 1, "bad_shape",
            "eval matrix stage " + std::to_string(rows.size() + 1) + " needs " +
                std::to_string(rows.size() + 1) + " entries");
    rows.push_back(std::move(accuracies));
}

double EvalMatrix::at(int stage, int task) const {
    require(stage >= 1 && stage <= stages() && task >= 1 && task <= stage, "bad_index",
            "eval matrix entry (" + std::to_string(stage) + "," + std::to_string(task) +
                ") is undefined");
    return rows[stage - 1][task - 1];
}

void EvalMatrix::validate() const {
    for (size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == i + 1, "bad_shape", "eval matrix row has wrong length");
        for (double v : rows[i]) {
            require(v >= 0.0 && v <= 1.0, "bad_value",
                    "eval matrix entries must lie in [0, 1]");
        }
    }
}

static std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string EvalMatrix::to_csv(const std::vector<std::string>& task_ids) const {
    require(task_ids.size() >= rows.size(), "bad_shape",
            "eval matrix csv: not enough task ids");
    std::ostringstream out;
    out << "stage";
    for (size_t j = 0; j < rows.size(); ++j) {
        out << "," << task_ids[j];
    }
    out << "\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        out << (i + 1);
        for (size_t j = 0; j < rows.size(); ++j) {
            out << ",";
            if (j < rows[i].size()) {
                out << fmt_full(rows[i][j]);
            }
        }
        out << "\n";
    }
    return out.str();
}

EvalMatrix EvalMatrix::from_csv(const std::string& csv) {
    EvalMatrix m;
    std::istringstream in(csv);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (header) {
            header = false;
            continue;
        }
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        bool first = true;
        while (std::getline(ls, cell, ',')) {
            if (first) { // stage index column
                first = false;
                continue;
            }
            if (!cell.empty()) {
                row.push_back(std::stod(cell));
            }
        }
        m.push_stage(std::move(row));
    }
    m.validate();
    return m;
}

nlohmann::json EvalMatrix::to_json() const { return nlohmann::json(rows); }

EvalMatrix EvalMatrix::from_json(const nlohmann::json& j) {
    EvalMatrix m;
    m.rows = j.get<std::vector<std::vector<double>>>();
    m.validate();
    return m;
}

double avg_accuracy(const EvalMatrix& m, int stage) {
    require(stage >= 1 && stage <= m.stages(), "bad_index",
            "avg_accuracy: stage out of range");
    const auto& row = m.rows[stage - 1];
    require(static_cast<int>(row.size()) == stage, "missing_entries",
            "avg_accuracy: stage row not fully populated");
    double acc = 0.0;
    for (double v : row) {
        acc += v;
    }
    return acc / static_cast<double>(stage);
}

Forgetting forgetting(const EvalMatrix& m, int stage) {
    require(stage >= 2, "bad_index", "forgetting is undefined at the first stage");
    require(stage <= m.stages(), "bad_index", "forgetting: stage out of range");
    Forgetting f;
    double acc = 0.0;
    for (int j = 1; j < stage; ++j) {
        double best = 0.0;
        for (int k = j; k <= stage; ++k) {
            best = std::max(best, m.at(k, j));
        }
        double fj = best - m.at(stage, j);
        f.per_task.push_back(fj);
        acc += fj;
    }
    f.mean = acc / static_cast<double>(stage - 1);
    return f;
}

} // namespace clfno
