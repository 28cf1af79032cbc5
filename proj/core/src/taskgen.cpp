#include "clfno/taskgen.hpp"

#include <cmath>
#include <complex>

#include "clfno/container.hpp"
#include "clfno/fft.hpp"
#include "clfno/rng.hpp"

namespace clfno {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// advection displacement per step (domain fractions) and smoothing rate of
// the fixed snapshot recurrence; shared by every task regime
constexpr double kShiftX = 0.04;
constexpr double kShiftY = 0.025;
constexpr double kSmooth = 0.002;
// spectral smoothing of the gradient-energy statistic in the target map
constexpr double kTargetSmooth = 0.01;

int signed_freq(int i, int n) { return (i <= n / 2) ? i : i - n; }

} // namespace

void TaskSpec::validate() const {
    require(!id.empty(), "bad_config", "task spec needs an id");
    require(grid >= 8, "bad_config", "grid too small");
    require(snapshots >= 1, "bad_config", "need at least one snapshot channel");
    require(n_train >= 1 && n_test >= 1, "bad_config", "sample counts must be >= 1");
    require(k_lo <= k_hi && decay_lo <= decay_hi && amp_lo <= amp_hi && nonlin_lo <= nonlin_hi,
            "bad_config", "task spec ranges must satisfy lo <= hi");
    require(k_lo > 0.0 && decay_lo > 0.0 && amp_lo > 0.0 && nonlin_lo > 0.0, "bad_config",
            "task spec ranges must be positive");
    require(k_hi < grid / 2.0, "bad_config", "wavenumber band exceeds the grid Nyquist limit");
}

void to_json(nlohmann::json& j, const TaskSpec& s) {
    j = nlohmann::json{{"id", s.id},
                       {"grid", s.grid},
                       {"snapshots", s.snapshots},
                       {"n_train", s.n_train},
                       {"n_test", s.n_test},
                       {"k_lo", s.k_lo},
                       {"k_hi", s.k_hi},
                       {"decay_lo", s.decay_lo},
                       {"decay_hi", s.decay_hi},
                       {"amp_lo", s.amp_lo},
                       {"amp_hi", s.amp_hi},
                       {"nonlin_lo", s.nonlin_lo},
                       {"nonlin_hi", s.nonlin_hi},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, TaskSpec& s) {
    TaskSpec d;
    s.id = j.at("id").get<std::string>();
    s.grid = j.value("grid", d.grid);
    s.snapshots = j.value("snapshots", d.snapshots);
    s.n_train = j.value("n_train", d.n_train);
    s.n_test = j.value("n_test", d.n_test);
    s.k_lo = j.value("k_lo", d.k_lo);
    s.k_hi = j.value("k_hi", d.k_hi);
    s.decay_lo = j.value("decay_lo", d.decay_lo);
    s.decay_hi = j.value("decay_hi", d.decay_hi);
    s.amp_lo = j.value("amp_lo", d.amp_lo);
    s.amp_hi = j.value("amp_hi", d.amp_hi);
    s.nonlin_lo = j.value("nonlin_lo", d.nonlin_lo);
    s.nonlin_hi = j.value("nonlin_hi", d.nonlin_hi);
    s.seed = j.value("seed", d.seed);
    s.validate();
}

std::vector<TaskSpec> default_sequence(uint64_t seed, int grid) {
    auto make = [&](const std::string& id, int n_train, int n_test, double klo, double khi,
                    double blo, double bhi, uint64_t salt) {
        TaskSpec s;
        s.id = id;
        s.grid = grid;
        s.n_train = n_train;
        s.n_test = n_test;
        s.k_lo = klo;
        s.k_hi = khi;
        s.nonlin_lo = blo;
        s.nonlin_hi = bhi;
        s.seed = derive_seed(seed, "task." + id, salt);
        return s;
    };
    // A is the broad pretraining regime; D sits in the highest band
    std::vector<TaskSpec> specs = {
        make("A", 160, 40, 1.0, 4.0, 0.9, 1.1, 1),
        make("B", 8, 2, 5.5, 6.5, 1.4, 1.6, 2),
        make("C", 8, 2, 7.5, 8.5, 0.6, 0.8, 3),
        make("D", 8, 2, 10.0, 12.0, 1.8, 2.2, 4),
    };
    validate_sequence(specs);
    return specs;
}

void validate_sequence(const std::vector<TaskSpec>& specs) {
    for (const TaskSpec& s : specs) {
        s.validate();
    }
    auto disjoint = [](double alo, double ahi, double blo, double bhi) {
        return ahi < blo || bhi < alo;
    };
    for (size_t a = 0; a < specs.size(); ++a) {
        for (size_t b = a + 1; b < specs.size(); ++b) {
            const TaskSpec& x = specs[a];
            const TaskSpec& y = specs[b];
            bool ok = disjoint(x.k_lo, x.k_hi, y.k_lo, y.k_hi) ||
                      disjoint(x.decay_lo, x.decay_hi, y.decay_lo, y.decay_hi) ||
                      disjoint(x.amp_lo, x.amp_hi, y.amp_lo, y.amp_hi) ||
                      disjoint(x.nonlin_lo, x.nonlin_hi, y.nonlin_lo, y.nonlin_hi);
            require(ok, "overlapping_tasks",
                    "tasks " + x.id + " and " + y.id +
                        " overlap on every parameter axis");
        }
    }
}

namespace {

using CGrid = std::vector<std::complex<double>>;

// multiply a spectrum in place by f(|k|, kx, ky)
template <typename F>
void apply_spectral(CGrid& spec, int n, F&& f) {
    for (int i = 0; i < n; ++i) {
        int fy = signed_freq(i, n);
        for (int j = 0; j < n; ++j) {
            int fx = signed_freq(j, n);
            double k = std::hypot(static_cast<double>(fx), static_cast<double>(fy));
            spec[static_cast<size_t>(i) * n + j] *= f(k, fx, fy);
        }
    }
}

std::vector<double> real_part_scaled(const CGrid& spec, int n) {
    std::vector<double> out(static_cast<size_t>(n) * n);
    double norm = 1.0 / (static_cast<double>(n) * n);
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = spec[i].real() * norm;
    }
    return out;
}

CGrid to_spectrum(const std::vector<double>& plane, int n) {
    CGrid spec(plane.size());
    for (size_t i = 0; i < plane.size(); ++i) {
        spec[i] = {plane[i], 0.0};
    }
    fft::transform_2d(spec.data(), n, n, false);
    return spec;
}

std::vector<double> from_spectrum(CGrid spec, int n) {
    fft::transform_2d(spec.data(), n, n, true);
    return real_part_scaled(spec, n);
}

} // namespace

GridField target_from_snapshots(const GridField& input, int snapshots, double beta) {
    int n = input.height;
    require(input.width == n, "bad_shape", "target map expects a square grid");
    require(input.channels >= snapshots, "bad_shape", "fewer channels than snapshots");

    // time-mean of the snapshot channels
    std::vector<double> mean_field(static_cast<size_t>(n) * n, 0.0);
    for (int c = 0; c < snapshots; ++c) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                mean_field[static_cast<size_t>(i) * n + j] += input.at(c, i, j);
            }
        }
    }
    for (double& v : mean_field) {
        v /= snapshots;
    }

    // gradient energy, central differences, spacing 1/(n-1)
    double inv_h = static_cast<double>(n - 1);
    std::vector<double> gmag(mean_field.size(), 0.0);
    auto at = [&](int i, int j) { return mean_field[static_cast<size_t>(i) * n + j]; };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double gy, gx;
            if (i == 0) {
                gy = (at(1, j) - at(0, j)) * inv_h;
            } else if (i == n - 1) {
                gy = (at(i, j) - at(i - 1, j)) * inv_h;
            } else {
                gy = (at(i + 1, j) - at(i - 1, j)) * 0.5 * inv_h;
            }
            if (j == 0) {
                gx = (at(i, 1) - at(i, 0)) * inv_h;
            } else if (j == n - 1) {
                gx = (at(i, j) - at(i, j - 1)) * inv_h;
            } else {
                gx = (at(i, j + 1) - at(i, j - 1)) * 0.5 * inv_h;
            }
            gmag[static_cast<size_t>(i) * n + j] = gx * gx + gy * gy;
        }
    }

    // smooth the statistic, normalize by its spatial mean, saturate
    CGrid spec = to_spectrum(gmag, n);
    apply_spectral(spec, n, [](double k, int, int) { return std::exp(-kTargetSmooth * k * k); });
    std::vector<double> smooth = from_spectrum(std::move(spec), n);

    double mean_energy = 0.0;
    for (double v : smooth) {
        mean_energy += v;
    }
    mean_energy /= static_cast<double>(smooth.size());
    double denom = mean_energy + 1e-12;

    GridField target(1, n, n);
    for (size_t i = 0; i < smooth.size(); ++i) {
        target.data[i] = std::tanh(beta * smooth[i] / denom);
    }
    return target;
}

namespace {

Sample generate_sample(const TaskSpec& spec, uint64_t sample_index) {
    int n = spec.grid;
    Rng rng(derive_seed(spec.seed, "sample", sample_index));
    double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
    double k0 = rng.uniform(spec.k_lo, spec.k_hi);
    double gamma = rng.uniform(spec.decay_lo, spec.decay_hi);
    double beta = rng.uniform(spec.nonlin_lo, spec.nonlin_hi);

    // band-limited random field: filtered white noise around k0
    std::vector<double> noise(static_cast<size_t>(n) * n);
    for (double& v : noise) {
        v = rng.normal();
    }
    CGrid spec0 = to_spectrum(noise, n);
    apply_spectral(spec0, n, [&](double k, int, int) {
        double d = k - k0;
        return std::exp(-gamma * d * d);
    });
    std::vector<double> u = from_spectrum(spec0, n);

    double rms = 0.0;
    for (double v : u) {
        rms += v * v;
    }
    rms = std::sqrt(rms / static_cast<double>(u.size()));
    double scale = (rms > 1e-14) ? amp / rms : 0.0;
    for (double& v : u) {
        v *= scale;
    }

    GridField input(spec.input_channels(), n, n);
    for (int s = 0; s < spec.snapshots; ++s) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                input.at(s, i, j) = u[static_cast<size_t>(i) * n + j];
            }
        }
        if (s + 1 < spec.snapshots) {
            // fixed smoothing-advection step in spectral space
            CGrid us = to_spectrum(u, n);
            apply_spectral(us, n, [&](double k, int fx, int fy) {
                std::complex<double> phase =
                    std::polar(1.0, -kTwoPi * (fx * kShiftX + fy * kShiftY));
                return phase * std::exp(-kSmooth * k * k);
            });
            u = from_spectrum(std::move(us), n);
        }
    }

    // normalized coordinate meshes as the two trailing channels
    double inv = (n > 1) ? 1.0 / static_cast<double>(n - 1) : 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            input.at(spec.snapshots, i, j) = j * inv;     // x
            input.at(spec.snapshots + 1, i, j) = i * inv; // y
        }
    }

    Sample sample;
    sample.target = target_from_snapshots(input, spec.snapshots, beta);
    sample.input = std::move(input);
    require(sample.input.all_finite() && sample.target.all_finite(), "non_finite",
            "generated sample contains non-finite values");
    return sample;
}

} // namespace

TaskDataset generate(const TaskSpec& spec) {
    spec.validate();
    TaskDataset ds;
    ds.task_id = spec.id;
    ds.spec = spec;
    ds.train.reserve(spec.n_train);
    ds.test.reserve(spec.n_test);
    for (int i = 0; i < spec.n_train; ++i) {
        ds.train.push_back(generate_sample(spec, static_cast<uint64_t>(i)));
    }
    for (int i = 0; i < spec.n_test; ++i) {
        ds.test.push_back(generate_sample(spec, static_cast<uint64_t>(spec.n_train + i)));
    }
    return ds;
}

double spectral_centroid(const GridField& input, int channel) {
    int n = input.height;
    require(channel >= 0 && channel < input.channels, "bad_index", "channel out of range");
    std::vector<double> plane(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            plane[static_cast<size_t>(i) * n + j] = input.at(channel, i, j);
        }
    }
    CGrid spec = to_spectrum(plane, n);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        int fy = signed_freq(i, n);
        for (int j = 0; j < n; ++j) {
            int fx = signed_freq(j, n);
            double k = std::hypot(static_cast<double>(fx), static_cast<double>(fy));
            double e = std::norm(spec[static_cast<size_t>(i) * n + j]);
            num += e * k;
            den += e;
        }
    }
    return (den > 0.0) ? num / den : 0.0;
}

// ---- serialization -----------------------------------------------------------

namespace {

void pack_split(Container& c, const std::string& prefix, const std::vector<Sample>& split,
                const TaskSpec& spec) {
    int n = static_cast<int>(split.size());
    Block& in = c.add_block(prefix + "_inputs", {n, spec.input_channels(), spec.grid, spec.grid});
    Block& tg = c.add_block(prefix + "_targets", {n, 1, spec.grid, spec.grid});
    size_t in_sz = static_cast<size_t>(spec.input_channels()) * spec.grid * spec.grid;
    size_t tg_sz = static_cast<size_t>(spec.grid) * spec.grid;
    for (int i = 0; i < n; ++i) {
        std::copy(split[i].input.data.begin(), split[i].input.data.end(),
                  in.values.begin() + static_cast<size_t>(i) * in_sz);
        std::copy(split[i].target.data.begin(), split[i].target.data.end(),
                  tg.values.begin() + static_cast<size_t>(i) * tg_sz);
    }
}

std::vector<Sample> unpack_split(const Container& c, const std::string& prefix,
                                 const TaskSpec& spec) {
    const Block& in = c.at(prefix + "_inputs");
    const Block& tg = c.at(prefix + "_targets");
    require(in.shape.size() == 4 && tg.shape.size() == 4 && in.shape[0] == tg.shape[0],
            "bad_shape", "dataset split blocks are malformed");
    int n = in.shape[0];
    std::vector<Sample> out(n);
    size_t in_sz = static_cast<size_t>(in.shape[1]) * in.shape[2] * in.shape[3];
    size_t tg_sz = static_cast<size_t>(tg.shape[2]) * tg.shape[3];
    for (int i = 0; i < n; ++i) {
        Sample& s = out[i];
        s.input = GridField(in.shape[1], in.shape[2], in.shape[3]);
        std::copy(in.values.begin() + static_cast<size_t>(i) * in_sz,
                  in.values.begin() + static_cast<size_t>(i + 1) * in_sz, s.input.data.begin());
        s.target = GridField(1, tg.shape[2], tg.shape[3]);
        std::copy(tg.values.begin() + static_cast<size_t>(i) * tg_sz,
                  tg.values.begin() + static_cast<size_t>(i + 1) * tg_sz, s.target.data.begin());
        require(s.input.all_finite() && s.target.all_finite(), "non_finite",
                "dataset sample contains non-finite values");
    }
    (void)spec;
    return out;
}

} // namespace

void save_dataset(const TaskDataset& ds, const std::string& path) {
    Container c;
    c.kind = "dataset";
    c.meta["task_id"] = ds.task_id;
    c.meta["spec"] = ds.spec;
    c.meta["counts"] = {{"train", ds.train.size()}, {"test", ds.test.size()}};
    pack_split(c, "train", ds.train, ds.spec);
    pack_split(c, "test", ds.test, ds.spec);
    c.save(path);
}

TaskDataset load_dataset(const std::string& path) {
    Container c = Container::load(path);
    require(c.kind == "dataset", "bad_kind",
            "expected a dataset container, got kind '" + c.kind + "' in " + path);
    TaskDataset ds;
    ds.task_id = c.meta.at("task_id").get<std::string>();
    ds.spec = c.meta.at("spec").get<TaskSpec>();
    ds.train = unpack_split(c, "train", ds.spec);
    ds.test = unpack_split(c, "test", ds.spec);
    require(ds.train.size() == c.meta.at("counts").at("train").get<size_t>() &&
                ds.test.size() == c.meta.at("counts").at("test").get<size_t>(),
            "bad_shape", "dataset counts do not match payload in " + path);
    return ds;
}

} // namespace clfno
