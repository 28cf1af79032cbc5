#pragma once

#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "clfno/param_store.hpp"
#include "clfno/tape.hpp"
#include "clfno/tensor.hpp"

namespace clfno {

struct FnoConfig {
    int input_channels = 7;
    int output_channels = 1;
    int hidden_channels = 64;
    int num_layers = 4;
    int modes = 16; // retained low-frequency count per axis and corner
    int lifting_ratio = 2;
    int projection_ratio = 2;
    std::string activation = "gelu";

    void validate() const;
    int lift_width() const { return hidden_channels * lifting_ratio; }
    int proj_width() const { return hidden_channels * projection_ratio; }
};

void to_json(nlohmann::json& j, const FnoConfig& c);
void from_json(const nlohmann::json& j, FnoConfig& c);

/// Learned linear map on retained low-frequency modes (the upper branch
/// of a Fourier layer). `modes_h`/`modes_w` count retained frequencies
/// per axis per corner; values live in a (cout, cin, 2mh, 2mw, 2) tensor.
struct SpectralWeight {
    int channels_in = 0;
    int channels_out = 0;
    int modes_h = 0;
    int modes_w = 0;
    static std::vector<int> shape(int cout, int cin, int mh, int mw) {
        return {cout, cin, 2 * mh, 2 * mw, 2};
    }
};

/// One Fourier layer: activation(ifft2(R * truncate(fft2(z))) + W z + b).
/// Exposed standalone so task-specific extension branches reuse it.
Var spectral_layer(Tape& t, Var z, Var r, Var w, Var b, int modes_h, int modes_w,
                   const std::string& activation);

/// Optional substitution applied to every weight matrix during a forward
/// pass (masking, low-rank adaptation). Receives the parameter name
/// relative to the backbone ("lift.w1", "layer0.R", ...) and the raw node.
using WeightHook = std::function<Var(Tape&, const std::string&, Var)>;

/// Fourier Neural Operator backbone: pointwise lifting, a stack of
/// Fourier layers with local linear residuals, pointwise projection.
/// Parameters are registered in a ParamStore under "backbone.", which
/// may also carry task-specific entries added by continual learners.
class FnoModel {
public:
    FnoModel(FnoConfig cfg, uint64_t seed);

    /// Rebuild from a deserialized store (shapes are validated).
    FnoModel(FnoConfig cfg, ParamStore store);

    const FnoConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    Var lift(Tape& t, Var x, const WeightHook& hook = nullptr) const;
    /// The stacked Fourier layers between lifting and projection.
    Var body(Tape& t, Var z0, const WeightHook& hook = nullptr) const;
    Var project(Tape& t, Var z, const WeightHook& hook = nullptr) const;
    Var forward(Tape& t, Var x, const WeightHook& hook = nullptr) const;

    /// Forward-only convenience for evaluation.
    GridField predict(const GridField& input) const;

    int64_t backbone_param_count() const { return store_.param_count_prefix("backbone."); }

    /// Names of the backbone weight matrices (no biases), relative to
    /// "backbone." — the surface masks and adapters attach to.
    std::vector<std::string> weight_matrix_names() const;

    static int64_t closed_form_param_count(const FnoConfig& cfg);

    /// Initialize one spectral-layer parameter triple (R, w, b) under
    /// `prefix` in `store`; shared by backbone init and task branches.
    static void init_layer_params(ParamStore& store, const std::string& prefix,
                                  const FnoConfig& cfg, uint64_t seed);

private:
    Var weight(Tape& t, const std::string& rel, const WeightHook& hook) const;

    FnoConfig cfg_;
    ParamStore store_;
};

} // namespace clfno
