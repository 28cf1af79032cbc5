#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clfno/tape.hpp"
#include "clfno/tensor.hpp"

namespace clfno {

struct MetricConfig {
    double alpha = 3.0;          // accuracy transform sharpness
    double l_max = 5.0;          // relative-error normalization
    double sobolev_lambda = 0.05; // gradient-term weight of the training loss

    void validate() const {
        require(alpha > 0.0 && l_max > 0.0 && sobolev_lambda >= 0.0, "bad_config",
                "metric config requires alpha > 0, l_max > 0, lambda >= 0");
    }
};

void to_json(nlohmann::json& j, const MetricConfig& c);
void from_json(const nlohmann::json& j, MetricConfig& c);

/// ||yhat - y||_2 / ||y||_2 over the vectorized field.
/// A zero-norm target is an explicit error.
double rel_l2(const GridField& yhat, const GridField& y);

/// exp(-alpha * rel / l_max).
double accuracy_R(double rel, const MetricConfig& cfg);
/// Relative error that produces the given accuracy (inverse transform).
double rel_from_accuracy(double r, const MetricConfig& cfg);

/// Per-sample Sobolev loss on the tape:
///   ||yhat - y||^2 + lambda * ||grad yhat - grad y||^2
/// with central-difference gradients (one-sided at boundaries, spacing
/// 1/(N-1) per axis). Batch averaging is done by the caller.
Var sobolev_loss(Tape& t, Var yhat, const GridField& target, double lambda);

/// Lower-triangular accuracy matrix: entry (i, j) is the accuracy on task
/// j after training stage i (0-based internally, stages 1..T in reports).
struct EvalMatrix {
    std::vector<std::vector<double>> rows; // rows[i].size() == i + 1

    int stages() const { return static_cast<int>(rows.size()); }
    void push_stage(std::vector<double> accuracies);
    double at(int stage, int task) const; // 1-based, j <= i
    void validate() const;

    /// CSV with task-id columns; empty cells above the diagonal.
    std::string to_csv(const std::vector<std::string>& task_ids) const;
    static EvalMatrix from_csv(const std::string& csv);

    nlohmann::json to_json() const;
    static EvalMatrix from_json(const nlohmann::json& j);
};

/// Mean accuracy over tasks 1..i after stage i (1-based).
double avg_accuracy(const EvalMatrix& m, int stage);

struct Forgetting {
    std::vector<double> per_task; // tasks 1..i-1
    double mean = 0.0;
};

/// Task-wise forgetting max_{k in j..i} R(k,j) - R(i,j) and its mean over
/// previous tasks. Requires stage >= 2.
Forgetting forgetting(const EvalMatrix& m, int stage);

} // namespace clfno
