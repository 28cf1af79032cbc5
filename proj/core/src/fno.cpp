#include "clfno/fno.hpp"

#include <cmath>

#include "clfno/rng.hpp"

namespace clfno {

void FnoConfig::validate() const {
    require(input_channels >= 1 && output_channels >= 1 && hidden_channels >= 1 &&
                num_layers >= 1 && modes >= 1 && lifting_ratio >= 1 && projection_ratio >= 1,
            "bad_config", "FNO configuration counts must all be >= 1");
    require(activation == "gelu" || activation == "identity", "bad_config",
            "unknown activation: " + activation);
}

void to_json(nlohmann::json& j, const FnoConfig& c) {
    j = nlohmann::json{{"input_channels", c.input_channels},
                       {"output_channels", c.output_channels},
                       {"hidden_channels", c.hidden_channels},
                       {"num_layers", c.num_layers},
                       {"modes", c.modes},
                       {"lifting_ratio", c.lifting_ratio},
                       {"projection_ratio", c.projection_ratio},
                       {"activation", c.activation}};
}

void from_json(const nlohmann::json& j, FnoConfig& c) {
    FnoConfig d;
    c.input_channels = j.value("input_channels", d.input_channels);
    c.output_channels = j.value("output_channels", d.output_channels);
    c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
    c.num_layers = j.value("num_layers", d.num_layers);
    c.modes = j.value("modes", d.modes);
    c.lifting_ratio = j.value("lifting_ratio", d.lifting_ratio);
    c.projection_ratio = j.value("projection_ratio", d.projection_ratio);
    c.activation = j.value("activation", d.activation);
    c.validate();
}

Var spectral_layer(Tape& t, Var z, Var r, Var w, Var b, int modes_h, int modes_w,
                   const std::string& activation) {
    Var spec = t.ifft2_real(t.spectral_mul(t.fft2(z), r, modes_h, modes_w));
    Var local = t.channel_linear(z, w, b);
    Var out = t.add(spec, local);
    if (activation == "gelu") {
        out = t.gelu(out);
    }
    return out;
}

namespace {

void init_linear(ParamStore& store, const std::string& wname, const std::string& bname,
                 int out, int in, uint64_t seed) {
    ParamEntry& w = store.add(wname, {out, in});
    ParamEntry& b = store.add(bname, {out});
    double k = 1.0 / std::sqrt(static_cast<double>(in));
    Rng rw(derive_seed(seed, wname));
    for (double& v : w.value.data) {
        v = rw.uniform(-k, k);
    }
    Rng rb(derive_seed(seed, bname));
    for (double& v : b.value.data) {
        v = rb.uniform(-k, k);
    }
}

} // namespace

void FnoModel::init_layer_params(ParamStore& store, const std::string& prefix,
                                 const FnoConfig& cfg, uint64_t seed) {
    int c = cfg.hidden_channels;
    int m = cfg.modes;
    ParamEntry& r = store.add(prefix + ".R", SpectralWeight::shape(c, c, m, m));
    // complex entries: magnitude uniform below 1/(cin*cout), uniform phase
    double scale = 1.0 / (static_cast<double>(c) * c);
    Rng rr(derive_seed(seed, prefix + ".R"));
    for (size_t i = 0; i + 1 < r.value.data.size(); i += 2) {
        double mag = scale * rr.uniform();
        double phase = rr.uniform() * 6.283185307179586476925286766559;
        r.value.data[i] = mag * std::cos(phase);
        r.value.data[i + 1] = mag * std::sin(phase);
    }
    ParamEntry& w = store.add(prefix + ".w", {c, c});
    double k = 1.0 / std::sqrt(static_cast<double>(c));
    Rng rw(derive_seed(seed, prefix + ".w"));
    for (double& v : w.value.data) {
        v = rw.uniform(-k, k);
    }
    store.add(prefix + ".b", {c}); // zero bias
}

FnoModel::FnoModel(FnoConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_linear(store_, "backbone.lift.w1", "backbone.lift.b1", cfg_.lift_width(),
                cfg_.input_channels, seed);
    init_linear(store_, "backbone.lift.w2", "backbone.lift.b2", cfg_.hidden_channels,
                cfg_.lift_width(), seed);
    for (int l = 0; l < cfg_.num_layers; ++l) {
        init_layer_params(store_, "backbone.layer" + std::to_string(l), cfg_, seed);
    }
    init_linear(store_, "backbone.proj.w1", "backbone.proj.b1", cfg_.proj_width(),
                cfg_.hidden_channels, seed);
    init_linear(store_, "backbone.proj.w2", "backbone.proj.b2", cfg_.output_channels,
                cfg_.proj_width(), seed);
}

FnoModel::FnoModel(FnoConfig cfg, ParamStore store)
    : cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
    int c = cfg_.hidden_channels;
    require(store_.has("backbone.lift.w1") && store_.has("backbone.proj.w2"), "bad_checkpoint",
            "store does not contain a backbone");
    require(store_.at("backbone.lift.w1").value.shape ==
                std::vector<int>({cfg_.lift_width(), cfg_.input_channels}),
            "bad_checkpoint", "lifting shape does not match the model config");
    for (int l = 0; l < cfg_.num_layers; ++l) {
        const std::string name = "backbone.layer" + std::to_string(l) + ".R";
        require(store_.has(name) && store_.at(name).value.shape ==
                                        SpectralWeight::shape(c, c, cfg_.modes, cfg_.modes),
                "bad_checkpoint", "spectral weight missing or mismatched: " + name);
    }
}

Var FnoModel::weight(Tape& t, const std::string& rel, const WeightHook& hook) const {
    Var w = t.param(const_cast<ParamStore&>(store_), "backbone." + rel);
    if (hook) {
        return hook(t, rel, w);
    }
    return w;
}

Var FnoModel::lift(Tape& t, Var x, const WeightHook& hook) const {
    const Tensor& tx = t.val(x);
    require(tx.shape.size() == 3 && tx.shape[0] == cfg_.input_channels, "channel_mismatch",
            "lift: expected " + std::to_string(cfg_.input_channels) + " input channels, got " +
                shape_str(tx.shape));
    ParamStore& s = const_cast<ParamStore&>(store_);
    Var h = t.channel_linear(x, weight(t, "lift.w1", hook), t.param(s, "backbone.lift.b1"));
    if (cfg_.activation == "gelu") {
        h = t.gelu(h);
    }
    return t.channel_linear(h, weight(t, "lift.w2", hook), t.param(s, "backbone.lift.b2"));
}

Var FnoModel::body(Tape& t, Var z0, const WeightHook& hook) const {
    ParamStore& s = const_cast<ParamStore&>(store_);
    Var z = z0;
    for (int l = 0; l < cfg_.num_layers; ++l) {
        std::string p = "layer" + std::to_string(l);
        // identity on the last layer's output path
        std::string act = (l + 1 < cfg_.num_layers) ? cfg_.activation : "identity";
        z = spectral_layer(t, z, weight(t, p + ".R", hook), weight(t, p + ".w", hook),
                           t.param(s, "backbone." + p + ".b"), cfg_.modes, cfg_.modes, act);
    }
    return z;
}

Var FnoModel::project(Tape& t, Var z, const WeightHook& hook) const {
    ParamStore& s = const_cast<ParamStore&>(store_);
    Var h = t.channel_linear(z, weight(t, "proj.w1", hook), t.param(s, "backbone.proj.b1"));
    if (cfg_.activation == "gelu") {
        h = t.gelu(h);
    }
    return t.channel_linear(h, weight(t, "proj.w2", hook), t.param(s, "backbone.proj.b2"));
}

Var FnoModel::forward(Tape& t, Var x, const WeightHook& hook) const {
    return project(t, body(t, lift(t, x, hook), hook), hook);
}

GridField FnoModel::predict(const GridField& input) const {
    Tape t;
    Var y = forward(t, t.constant(input.to_tensor()));
    return GridField::from_tensor(t.val(y));
}

std::vector<std::string> FnoModel::weight_matrix_names() const {
    std::vector<std::string> out = {"lift.w1", "lift.w2"};
    for (int l = 0; l < cfg_.num_layers; ++l) {
        out.push_back("layer" + std::to_string(l) + ".R");
        out.push_back("layer" + std::to_string(l) + ".w");
    }
    out.push_back("proj.w1");
    out.push_back("proj.w2");
    return out;
}

int64_t FnoModel::closed_form_param_count(const FnoConfig& cfg) {
    int64_t c = cfg.hidden_channels;
    int64_t lw = cfg.lift_width();
    int64_t pw = cfg.proj_width();
    int64_t mh = 2 * cfg.modes, mw = 2 * cfg.modes;
    int64_t lift = lw * cfg.input_channels + lw + c * lw + c;
    int64_t layer = 2 * c * c * mh * mw + c * c + c;
    int64_t proj = pw * c + pw + cfg.output_channels * pw + cfg.output_channels;
    return lift + cfg.num_layers * layer + proj;
}

} // namespace clfno
