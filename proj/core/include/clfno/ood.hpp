#pragma once

#include <span>
#include <string>
#include <vector>

#include "clfno/container.hpp"
#include "clfno/tensor.hpp"

namespace clfno {

/// Random Fourier feature map approximating a Gaussian kernel. The
/// projection is derived from (dim, seed) on first use and shared by
/// every task's detector; sigma scales it without regeneration.
/// Inputs are l2-normalized before lifting, so scores are scale
/// invariant.
class RffMap {
public:
    RffMap() = default;
    RffMap(int dim, uint64_t seed) : dim_(dim), seed_(seed) {}

    int dim() const { return dim_; }
    uint64_t seed() const { return seed_; }
    double sigma() const { return sigma_; }
    void set_sigma(double s);

    /// z = sqrt(2/D) * cos(Omega x' + b) with x' = x / ||x||_2.
    /// Zero-norm input is an explicit error.
    std::vector<double> map(std::span<const double> x) const;

private:
    void materialize(int input_dim) const;

    int dim_ = 4096;
    uint64_t seed_ = 0;
    double sigma_ = 1.0;
    mutable int input_dim_ = 0;
    mutable std::vector<float> freqs_;  // (dim, input_dim) standard normal
    mutable std::vector<double> phases_; // (dim) uniform in [0, 2*pi)
};

/// Median pairwise distance over l2-normalized inputs (bandwidth
/// heuristic). Requires at least two samples.
double median_pairwise_distance(const std::vector<std::vector<double>>& inputs);

/// Principal subspace of one task's feature distribution plus the
/// calibrated novelty threshold of its training scores.
struct KpcaModel {
    std::string task_id;
    std::vector<double> mean;               // feature mean, length D
    std::vector<std::vector<double>> dirs;  // top-K orthonormal directions
    std::vector<double> eigvals;            // matching eigenvalues, descending
    double tau = 0.0;                       // calibrated novelty threshold
    double max_train_score = 0.0;

    int k() const { return static_cast<int>(dirs.size()); }
};

/// Full eigensystem of the centered feature second moment. Solved on the
/// N x N Gram matrix when N <= D, on the D x D second moment otherwise.
struct KpcaEig {
    std::vector<double> mean;
    std::vector<std::vector<double>> dirs; // descending eigenvalue order
    std::vector<double> eigvals;           // of (1/N) * sum zz^T, centered
};

KpcaEig kpca_eig(const std::vector<std::vector<double>>& features);

/// Top-K truncation; requires N >= 2 and K <= N-1.
KpcaModel kpca_fit(const std::string& task_id,
                   const std::vector<std::vector<double>>& features, int K);

/// Smallest K whose eigenvalue prefix reaches `energy` of the total.
int choose_k(const std::vector<double>& eigvals, double energy);

/// Distance between z and its projection onto the model subspace.
double ood_score(std::span<const double> z, const KpcaModel& model);

/// tau = max training score * margin.
double calibrate_threshold(const std::vector<double>& train_scores, double margin);

/// Task-agnostic router: one detector per known task, argmin routing,
/// novelty when even the best reconstruction error exceeds the threshold.
class Router {
public:
    Router() = default;
    Router(int rff_dim, uint64_t seed, double margin = 1.5, double energy = 0.99)
        : rff_(rff_dim, seed), margin_(margin), energy_(energy) {}

    /// Fit a detector on the task's raw training inputs. The first call
    /// fixes the shared bandwidth via the median heuristic.
    const KpcaModel& fit_task(const std::string& task_id,
                              const std::vector<std::vector<double>>& raw_inputs);

    struct RouteResult {
        int task_index = -1;
        bool novel = false;
        double best_score = 0.0;
        std::vector<double> scores;
    };

    RouteResult route(std::span<const double> raw_input) const;

    /// Global novelty threshold: max of the per-task calibrated ones.
    double tau() const;

    bool empty() const { return models_.empty(); }
    const std::vector<KpcaModel>& models() const { return models_; }
    const RffMap& rff() const { return rff_; }
    double margin() const { return margin_; }
    double energy() const { return energy_; }

    void pack(Container& c, const std::string& prefix) const;
    static Router unpack(const Container& c, const std::string& prefix);

private:
    RffMap rff_;
    double margin_ = 1.5;
    double energy_ = 0.99;
    bool sigma_set_ = false;
    std::vector<KpcaModel> models_;
};

/// Standalone detector file: JSON header (task id, D, K, sigma, seed, tau)
/// plus f32 payloads for the mean and the principal directions.
void save_detector(const KpcaModel& model, const RffMap& rff, const std::string& path);
struct LoadedDetector {
    KpcaModel model;
    RffMap rff;
};
LoadedDetector load_detector(const std::string& path);

} // namespace clfno
