#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clfno/fno.hpp"
#include "clfno/metrics.hpp"
#include "clfno/ood.hpp"
#include "clfno/param_store.hpp"
#include "clfno/rng.hpp"
#include "clfno/taskgen.hpp"

namespace clfno {

enum class Method {
    Naive,
    Ewc,
    Lwf,
    ReplayReservoir,
    ReplayKmeans,
    Ogd,
    Gem,
    Piggyback,
    Lora,
    Sle,
};

std::string to_string(Method m);
Method method_from_string(const std::string& name);
const std::vector<Method>& all_methods();

/// Per-method hyperparameters. Defaults follow the reference table
/// (start LR, weight decay, batch size, auxiliary-loss weight), except
/// where noted in default_method_config for desk-scale training.
struct MethodConfig {
    double start_lr = 1e-3;
    double end_lr = 1e-5;
    double weight_decay = 0.0;
    int batch_size = 1;
    double lambda = 0.0; // auxiliary-loss weight (EWC penalty, LwF distillation)

    // OGD
    double ogd_alpha = 1.0;
    int ogd_basis_cap = 32;
    double ogd_energy = 0.95;

    // GEM (A-GEM projection with an optional soft margin)
    double gem_epsilon = 0.0;

    // replay / episodic memory budgets: first task, then one per task
    int replay_budget_first = 16;
    int replay_budget_later = 1;

    // PiggyBack
    bool piggyback_binarize = false;
    double piggyback_threshold = 0.0;

    // LoRA
    int lora_rank = 4;
    double lora_alpha = 4.0;
    double lora_init_std = 0.02;

    // SLE routing
    int rff_dim = 4096;
    double router_margin = 1.5;
    double router_energy = 0.99;

    void validate() const;
};

void to_json(nlohmann::json& j, const MethodConfig& c);
void from_json(const nlohmann::json& j, MethodConfig& c);

MethodConfig default_method_config(Method m);

// ---- EWC -------------------------------------------------------------------

/// Diagonal empirical Fisher of one completed task, paired with the
/// parameter snapshot taken when the task finished.
struct TaskFisher {
    std::string task_id;
    std::map<std::string, Tensor> fisher;
    std::map<std::string, Tensor> snapshot;
};

struct FisherStore {
    std::vector<TaskFisher> tasks;
};

/// Accumulate squared gradients of one sample into `acc` (entries under
/// `prefix` only). Divide by the sample count with fisher_finalize.
void fisher_accumulate(TaskFisher& acc, const ParamStore& store_with_grads,
                       const std::string& prefix);
void fisher_finalize(TaskFisher& acc, int64_t num_samples);

/// (lambda/2) * sum_t sum_i F_i^(t) (theta_i - theta*_i^(t))^2, on the tape.
Var ewc_penalty(Tape& t, ParamStore& params, const FisherStore& fs, double lambda);

// ---- replay ------------------------------------------------------------------

struct StoredSample {
    GridField input;
    GridField target;
    std::string task_id;
};

/// Streaming reservoir over item indices: item t is kept with probability
/// min(1, capacity/t); a full reservoir evicts a uniformly random victim.
struct ReservoirSampler {
    explicit ReservoirSampler(int capacity) : capacity(capacity) {}

    int capacity;
    int64_t seen = 0;
    std::vector<int64_t> kept;

    void offer(int64_t index, Rng& rng);
};

/// Replay buffer with a hard capacity; capacity grows by the per-task
/// budget as tasks complete.
struct ReplayBuffer {
    int capacity = 0;
    std::vector<StoredSample> samples;

    void add(StoredSample s);
};

/// k-means (seeded k-means++ init, capped Lloyd iterations) over
/// vectorized inputs; returns the index of the sample nearest to each
/// centroid, deduplicated, in ascending order.
std::vector<int> kmeans_select(const std::vector<std::vector<double>>& points, int k,
                               uint64_t seed);

// ---- gradient projections -------------------------------------------------------

/// Orthonormal basis of past gradient directions for one layer, with the
/// singular-value weights retained by the last compression.
struct LayerBasis {
    std::vector<std::vector<double>> vectors;
    std::vector<double> weights;

    int count() const { return static_cast<int>(vectors.size()); }
};

/// g <- g - alpha * sum_i <g, b_i> b_i
void ogd_project(std::span<double> g, const LayerBasis& basis, double alpha);

/// Gram-Schmidt the new task gradients against the basis (residuals below
/// 1e-8 are dropped; if nothing new survives the basis is left untouched),
/// then recompress with an SVD over the weighted existing directions plus
/// the raw new gradients, keeping the smallest prefix reaching the energy
/// threshold, capped.
void basis_update_and_compress(LayerBasis& basis,
                               const std::vector<std::vector<double>>& new_grads, int cap,
                               double energy);

struct AgemDecision {
    bool projected = false;
    double dot_before = 0.0;
};

/// A-GEM closed-form projection against a single reference gradient.
/// Zero-norm reference leaves g unchanged (with projected = false).
AgemDecision agem_project(std::span<double> g, std::span<const double> g_ref,
                          double epsilon = 0.0);

// ---- task-specific forwards -----------------------------------------------------

void alloc_piggyback_masks(FnoModel& model, const std::string& task_id);
void alloc_lora_adapters(FnoModel& model, const std::string& task_id, int rank,
                         double init_std, uint64_t seed);
void alloc_sle_branch(FnoModel& model, const std::string& task_id, uint64_t seed);

/// Forward with effective weights m (.) theta for every masked matrix.
Var piggyback_forward(Tape& t, const FnoModel& model, const std::string& task_id, Var x,
                      bool binarize = false, double threshold = 0.0);

/// Forward with W + (alpha/r) A B on the pointwise matrices.
Var lora_forward(Tape& t, const FnoModel& model, const std::string& task_id, Var x, int rank,
                 double alpha);

/// Frozen backbone plus the task's residual spectral-layer branch on the
/// lifted representation, gated by a learned scalar (zero-initialized).
Var sle_forward(Tape& t, const FnoModel& model, const std::string& task_id, Var x);

/// Parameters one SLE branch adds (spectral layer + gate).
int64_t sle_branch_param_count(const FnoConfig& cfg);

// ---- trainer ----------------------------------------------------------------------

/// State a method carries across stages. Serialized with the same
/// container format as checkpoints (f64 payloads), keyed by method and
/// task id. Task-specific *parameters* (masks, adapters, branches) live
/// in the model's ParamStore and travel with checkpoints instead.
struct MethodState {
    std::vector<std::string> task_ids; // completed tasks, stage order
    FisherStore fisher;
    ReplayBuffer buffer;
    std::map<std::string, LayerBasis> bases; // keyed by layer group
    std::vector<StoredSample> gem_memory;
    bool has_router = false;
    Router router;

    void save(const std::string& path, Method method) const;
    static MethodState load(const std::string& path, Method expected_method);
};

struct StageStats {
    double train_rel_pre = 0.0;
    double train_rel_post = 0.0;
    int64_t added_params = 0;
    double wall_ms = 0.0;
};

/// One continual-learning strategy behind a shared stage interface:
/// training a stage updates the model plus the method state and never
/// touches prior task data unless the method owns a buffer.
class ContinualTrainer {
public:
    ContinualTrainer(Method method, MethodConfig cfg, MetricConfig metrics, uint64_t run_seed);

    /// Train one stage (1-based index). `skip_training` runs only the
    /// bookkeeping hooks, for warm-started first stages. Parameters are
    /// quantized to checkpoint precision before the end-of-stage hooks.
    StageStats train_stage(FnoModel& model, MethodState& state, const TaskDataset& task,
                           int stage_index, int epochs, bool skip_training = false);

    /// Mean per-sample relative L2 over a split, using the forward that
    /// matches the sample's task. With routing, branch selection is
    /// task-agnostic and `routing_accuracy` reports the fraction routed
    /// to the true task.
    double evaluate(const FnoModel& model, const MethodState& state, const TaskDataset& ds,
                    bool test_split, bool use_routing,
                    double* routing_accuracy = nullptr) const;

    GridField predict(const FnoModel& model, const MethodState& state, const GridField& input,
                      const std::string& task_id) const;

    Method method() const { return method_; }
    const MethodConfig& config() const { return cfg_; }

private:
    Var forward_for_task(Tape& t, const FnoModel& model, const MethodState& state,
                         const std::string& task_id, Var x) const;
    double train_split_rel(const FnoModel& model, const MethodState& state,
                           const TaskDataset& task, const std::string& task_id) const;
    std::vector<double> routing_vector(const GridField& input) const;

    Method method_;
    MethodConfig cfg_;
    MetricConfig metrics_;
    uint64_t seed_;
};

/// Flatten the gradients of the named entries (in order) into one vector.
std::vector<double> flatten_grads(const ParamStore& store,
                                  const std::vector<std::string>& names);
void unflatten_grads(ParamStore& store, const std::vector<std::string>& names,
                     std::span<const double> flat);

/// Backbone layer groups ("backbone.lift", "backbone.layer0", ...,
/// "backbone.proj") with their member entry names, for layerwise OGD.
std::map<std::string, std::vector<std::string>> backbone_layer_groups(const ParamStore& store);

} // namespace clfno
