#include "clfno/ood.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "clfno/rng.hpp"

namespace clfno {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<double> l2_normalized(std::span<const double> x) {
    double norm = 0.0;
    for (double v : x) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    require(norm > 0.0, "zero_norm", "cannot normalize a zero-norm input");
    std::vector<double> out(x.begin(), x.end());
    for (double& v : out) {
        v /= norm;
    }
    return out;
}

} // namespace

void RffMap::set_sigma(double s) {
    require(s > 0.0, "bad_value", "RFF bandwidth must be positive");
    sigma_ = s;
}

void RffMap::materialize(int input_dim) const {
    if (input_dim_ == input_dim && !freqs_.empty()) {
        return;
    }
    require(freqs_.empty(), "dim_mismatch",
            "RFF map already materialized for input dimension " + std::to_string(input_dim_));
    input_dim_ = input_dim;
    freqs_.resize(static_cast<size_t>(dim_) * input_dim);
    phases_.resize(dim_);
    for (int j = 0; j < dim_; ++j) {
        Rng rng(derive_seed(seed_, "rff.row", static_cast<uint64_t>(j)));
        phases_[j] = rng.uniform() * kTwoPi;
        float* row = freqs_.data() + static_cast<size_t>(j) * input_dim;
        for (int i = 0; i < input_dim; ++i) {
            row[i] = static_cast<float>(rng.normal());
        }
    }
}

std::vector<double> RffMap::map(std::span<const double> x) const {
    std::vector<double> xn = l2_normalized(x);
    materialize(static_cast<int>(xn.size()));
    std::vector<double> z(dim_);
    double amp = std::sqrt(2.0 / static_cast<double>(dim_));
    double inv_sigma = 1.0 / sigma_;
    for (int j = 0; j < dim_; ++j) {
        const float* row = freqs_.data() + static_cast<size_t>(j) * input_dim_;
        double acc = 0.0;
        for (size_t i = 0; i < xn.size(); ++i) {
            acc += static_cast<double>(row[i]) * xn[i];
        }
        z[j] = amp * std::cos(acc * inv_sigma + phases_[j]);
    }
    return z;
}

double median_pairwise_distance(const std::vector<std::vector<double>>& inputs) {
    require(inputs.size() >= 2, "too_few_samples",
            "median heuristic needs at least two samples");
    std::vector<std::vector<double>> normed;
    normed.reserve(inputs.size());
    for (const auto& x : inputs) {
        normed.push_back(l2_normalized(x));
    }
    std::vector<double> dists;
    dists.reserve(inputs.size() * (inputs.size() - 1) / 2);
    for (size_t a = 0; a < normed.size(); ++a) {
        for (size_t b = a + 1; b < normed.size(); ++b) {
            double d = 0.0;
            for (size_t i = 0; i < normed[a].size(); ++i) {
                double diff = normed[a][i] - normed[b][i];
                d += diff * diff;
            }
            dists.push_back(std::sqrt(d));
        }
    }
    std::sort(dists.begin(), dists.end());
    return dists[dists.size() / 2];
}

KpcaEig kpca_eig(const std::vector<std::vector<double>>& features) {
    require(features.size() >= 2, "too_few_samples", "KPCA needs at least two samples");
    const int n = static_cast<int>(features.size());
    const int d = static_cast<int>(features[0].size());

    KpcaEig out;
    out.mean.assign(d, 0.0);
    for (const auto& z : features) {
        require(static_cast<int>(z.size()) == d, "shape_mismatch",
                "feature vectors have inconsistent dimensions");
        for (int i = 0; i < d; ++i) {
            out.mean[i] += z[i];
        }
    }
    for (double& v : out.mean) {
        v /= n;
    }

    Eigen::MatrixXd centered(n, d);
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < d; ++i) {
            centered(r, i) = features[r][i] - out.mean[i];
        }
    }

    if (n <= d) {
        // Gram form: eigenvectors of Z Z^T lift to directions Z^T v / sqrt(mu)
        Eigen::MatrixXd gram = centered * centered.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
        require(solver.info() == Eigen::Success, "eig_failed", "Gram eigensolve failed");
        double mu_max = solver.eigenvalues().maxCoeff();
        double floor = std::max(mu_max, 1.0) * 1e-12;
        for (int idx = n - 1; idx >= 0; --idx) { // descending
            double mu = solver.eigenvalues()(idx);
            if (mu <= floor) {
                continue;
            }
            Eigen::VectorXd dir = centered.transpose() * solver.eigenvectors().col(idx);
            dir /= std::sqrt(mu);
            out.dirs.emplace_back(dir.data(), dir.data() + d);
            out.eigvals.push_back(mu / n);
        }
    } else {
        Eigen::MatrixXd second = (centered.transpose() * centered) / static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(second);
        require(solver.info() == Eigen::Success, "eig_failed", "second-moment eigensolve failed");
        double lmax = solver.eigenvalues().maxCoeff();
        double floor = std::max(lmax, 1.0) * 1e-12;
        for (int idx = d - 1; idx >= 0; --idx) {
            double lam = solver.eigenvalues()(idx);
            if (lam <= floor) {
                continue;
            }
            Eigen::VectorXd dir = solver.eigenvectors().col(idx);
            out.dirs.emplace_back(dir.data(), dir.data() + d);
            out.eigvals.push_back(lam);
        }
    }
    return out;
}

KpcaModel kpca_fit(const std::string& task_id,
                   const std::vector<std::vector<double>>& features, int K) {
    require(features.size() >= 2, "too_few_samples", "KPCA needs at least two samples");
    require(K >= 1 && K <= static_cast<int>(features.size()) - 1, "k_too_large",
            "retained mode count must satisfy 1 <= K <= N-1");
    KpcaEig eig = kpca_eig(features);
    KpcaModel m;
    m.task_id = task_id;
    m.mean = std::move(eig.mean);
    int keep = std::min<int>(K, static_cast<int>(eig.dirs.size()));
    m.dirs.assign(eig.dirs.begin(), eig.dirs.begin() + keep);
    m.eigvals.assign(eig.eigvals.begin(), eig.eigvals.begin() + keep);
    return m;
}

int choose_k(const std::vector<double>& eigvals, double energy) {
    require(!eigvals.empty(), "bad_value", "no eigenvalues to choose from");
    double total = 0.0;
    for (double v : eigvals) {
        total += v;
    }
    double acc = 0.0;
    for (size_t i = 0; i < eigvals.size(); ++i) {
        acc += eigvals[i];
        if (acc >= energy * total) {
            return static_cast<int>(i + 1);
        }
    }
    return static_cast<int>(eigvals.size());
}

double ood_score(std::span<const double> z, const KpcaModel& model) {
    require(z.size() == model.mean.size(), "shape_mismatch",
            "feature dimension does not match the detector");
    std::vector<double> r(z.size());
    double norm2 = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        r[i] = z[i] - model.mean[i];
        norm2 += r[i] * r[i];
    }
    double proj2 = 0.0;
    for (const auto& u : model.dirs) {
        double dot = 0.0;
        for (size_t i = 0; i < r.size(); ++i) {
            dot += r[i] * u[i];
        }
        proj2 += dot * dot;
    }
    return std::sqrt(std::max(0.0, norm2 - proj2));
}

double calibrate_threshold(const std::vector<double>& train_scores, double margin) {
    require(train_scores.size() >= 2, "too_few_samples",
            "threshold calibration needs at least two training scores");
    double mx = 0.0;
    for (double s : train_scores) {
        mx = std::max(mx, s);
    }
    return mx * margin;
}

const KpcaModel& Router::fit_task(const std::string& task_id,
                                  const std::vector<std::vector<double>>& raw_inputs) {
    for (const KpcaModel& m : models_) {
        require(m.task_id != task_id, "duplicate_task",
                "a detector for task " + task_id + " already exists");
    }
    if (!sigma_set_) {
        rff_.set_sigma(median_pairwise_distance(raw_inputs));
        sigma_set_ = true;
    }
    std::vector<std::vector<double>> feats;
    feats.reserve(raw_inputs.size());
    for (const auto& x : raw_inputs) {
        feats.push_back(rff_.map(x));
    }
    KpcaEig eig = kpca_eig(feats);
    int cap = static_cast<int>(raw_inputs.size()) - 1;
    int k = std::min(choose_k(eig.eigvals, energy_), cap);
    k = std::max(k, 1);

    KpcaModel m;
    m.task_id = task_id;
    m.mean = std::move(eig.mean);
    m.dirs.assign(eig.dirs.begin(), eig.dirs.begin() + std::min<size_t>(k, eig.dirs.size()));
    m.eigvals.assign(eig.eigvals.begin(),
                     eig.eigvals.begin() + std::min<size_t>(k, eig.eigvals.size()));

    std::vector<double> scores;
    scores.reserve(feats.size());
    for (const auto& z : feats) {
        scores.push_back(ood_score(z, m));
    }
    m.max_train_score = *std::max_element(scores.begin(), scores.end());
    m.tau = calibrate_threshold(scores, margin_);
    models_.push_back(std::move(m));
    return models_.back();
}

Router::RouteResult Router::route(std::span<const double> raw_input) const {
    require(!models_.empty(), "empty_router", "route called with no fitted detectors");
    std::vector<double> z = rff_.map(raw_input);
    RouteResult res;
    res.scores.reserve(models_.size());
    for (size_t i = 0; i < models_.size(); ++i) {
        double s = ood_score(z, models_[i]);
        res.scores.push_back(s);
        if (res.task_index < 0 || s < res.best_score) {
            res.task_index = static_cast<int>(i);
            res.best_score = s;
        }
    }
    res.novel = res.best_score > tau();
    return res;
}

double Router::tau() const {
    double t = 0.0;
    for (const KpcaModel& m : models_) {
        t = std::max(t, m.tau);
    }
    return t;
}

void Router::pack(Container& c, const std::string& prefix) const {
    json meta;
    meta["dim"] = rff_.dim();
    meta["seed"] = rff_.seed();
    meta["sigma"] = rff_.sigma();
    meta["sigma_set"] = sigma_set_;
    meta["margin"] = margin_;
    meta["energy"] = energy_;
    json jmodels = json::array();
    for (size_t i = 0; i < models_.size(); ++i) {
        const KpcaModel& m = models_[i];
        jmodels.push_back({{"task_id", m.task_id},
                           {"k", m.k()},
                           {"tau", m.tau},
                           {"max_train_score", m.max_train_score}});
        std::string base = prefix + "." + std::to_string(i);
        Block& bm = c.add_block(base + ".mean", {static_cast<int>(m.mean.size())}, true);
        bm.values = m.mean;
        Block& bd = c.add_block(base + ".dirs",
                                {m.k(), static_cast<int>(m.mean.size())}, true);
        for (int r = 0; r < m.k(); ++r) {
            std::copy(m.dirs[r].begin(), m.dirs[r].end(),
                      bd.values.begin() + static_cast<size_t>(r) * m.mean.size());
        }
        Block& be = c.add_block(base + ".eigvals", {m.k()}, true);
        be.values = m.eigvals;
    }
    meta["models"] = std::move(jmodels);
    c.meta[prefix] = std::move(meta);
}

Router Router::unpack(const Container& c, const std::string& prefix) {
    const json& meta = c.meta.at(prefix);
    Router r(meta.at("dim").get<int>(), meta.at("seed").get<uint64_t>(),
             meta.at("margin").get<double>(), meta.at("energy").get<double>());
    r.sigma_set_ = meta.at("sigma_set").get<bool>();
    if (r.sigma_set_) {
        r.rff_.set_sigma(meta.at("sigma").get<double>());
    }
    const json& jmodels = meta.at("models");
    for (size_t i = 0; i < jmodels.size(); ++i) {
        std::string base = prefix + "." + std::to_string(i);
        KpcaModel m;
        m.task_id = jmodels[i].at("task_id").get<std::string>();
        m.tau = jmodels[i].at("tau").get<double>();
        m.max_train_score = jmodels[i].at("max_train_score").get<double>();
        m.mean = c.at(base + ".mean").values;
        const Block& bd = c.at(base + ".dirs");
        int k = bd.shape[0];
        size_t d = m.mean.size();
        for (int row = 0; row < k; ++row) {
            m.dirs.emplace_back(bd.values.begin() + static_cast<size_t>(row) * d,
                                bd.values.begin() + static_cast<size_t>(row + 1) * d);
        }
        m.eigvals = c.at(base + ".eigvals").values;
        r.models_.push_back(std::move(m));
    }
    return r;
}

void save_detector(const KpcaModel& model, const RffMap& rff, const std::string& path) {
    Container c;
    c.kind = "detector";
    c.meta["task_id"] = model.task_id;
    c.meta["dim"] = rff.dim();
    c.meta["k"] = model.k();
    c.meta["sigma"] = rff.sigma();
    c.meta["seed"] = rff.seed();
    c.meta["tau"] = model.tau;
    c.meta["max_train_score"] = model.max_train_score;
    Block& bm = c.add_block("mean", {static_cast<int>(model.mean.size())});
    bm.values = model.mean;
    Block& bd = c.add_block("dirs", {model.k(), static_cast<int>(model.mean.size())});
    for (int r = 0; r < model.k(); ++r) {
        std::copy(model.dirs[r].begin(), model.dirs[r].end(),
                  bd.values.begin() + static_cast<size_t>(r) * model.mean.size());
    }
    c.save(path);
}

LoadedDetector load_detector(const std::string& path) {
    Container c = Container::load(path);
    require(c.kind == "detector", "bad_kind",
            "expected a detector container, got kind '" + c.kind + "' in " + path);
    LoadedDetector out;
    out.rff = RffMap(c.meta.at("dim").get<int>(), c.meta.at("seed").get<uint64_t>());
    out.rff.set_sigma(c.meta.at("sigma").get<double>());
    out.model.task_id = c.meta.at("task_id").get<std::string>();
    out.model.tau = c.meta.at("tau").get<double>();
    out.model.max_train_score = c.meta.value("max_train_score", 0.0);
    out.model.mean = c.at("mean").values;
    const Block& bd = c.at("dirs");
    int k = bd.shape[0];
    size_t d = out.model.mean.size();
    for (int r = 0; r < k; ++r) {
        out.model.dirs.emplace_back(bd.values.begin() + static_cast<size_t>(r) * d,
                                    bd.values.begin() + static_cast<size_t>(r + 1) * d);
    }
    return out;
}

} // namespace clfno
