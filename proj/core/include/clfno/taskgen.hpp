#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clfno/tensor.hpp"

namespace clfno {

/// Parameter regime of one synthetic task. Distinct tasks in a sequence
/// must be disjoint along at least one axis (wavenumber band, decay,
/// amplitude, or nonlinearity), which is what makes them mutually
/// out-of-distribution.
struct TaskSpec {
    std::string id;
    int grid = 64;
    int snapshots = 5;
    int n_train = 8;
    int n_test = 2;
    double k_lo = 1.0, k_hi = 4.0;          // dominant wavenumber band
    double decay_lo = 1.5, decay_hi = 2.5;  // spectral envelope tightness
    double amp_lo = 0.8, amp_hi = 1.2;      // field amplitude
    double nonlin_lo = 0.9, nonlin_hi = 1.1; // saturation coefficient of the target map
    uint64_t seed = 0;

    int input_channels() const { return snapshots + 2; } // + coordinate meshes
    void validate() const;
};

void to_json(nlohmann::json& j, const TaskSpec& s);
void from_json(const nlohmann::json& j, TaskSpec& s);

struct Sample {
    GridField input;  // snapshot channels then x, y coordinate meshes
    GridField target; // single channel
};

struct TaskDataset {
    std::string task_id;
    TaskSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// The standard 4-task sequence (A broad; B, C, D narrow with increasing
/// wavenumber bands and the paper-scale split sizes 160/40 and 8/2).
std::vector<TaskSpec> default_sequence(uint64_t seed, int grid = 64);

/// Throws if some pair of tasks overlaps on every parameter axis.
void validate_sequence(const std::vector<TaskSpec>& specs);

/// Deterministic per (spec, seed).
TaskDataset generate(const TaskSpec& spec);

/// The target map applied to already-generated snapshot channels: a
/// smoothed gradient-energy statistic passed through a saturating
/// nonlinearity. Exposed because the generator doubles as its own oracle.
GridField target_from_snapshots(const GridField& input, int snapshots, double beta);

/// Energy-weighted mean radial wavenumber of one input channel; the
/// feature along which default task regimes separate.
double spectral_centroid(const GridField& input, int channel);

void save_dataset(const TaskDataset& ds, const std::string& path);
TaskDataset load_dataset(const std::string& path);

} // namespace clfno
