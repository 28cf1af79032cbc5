#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clfno/error.hpp"

namespace clfno {

/// Dense row-major real tensor. Complex data is stored as a trailing
/// dimension of size 2 (re, im interleaved), so autodiff stays purely real.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), 0.0);
    }
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), fill);
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            require(d >= 0, "bad_shape", "negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor scalar(double v) {
        Tensor t(std::vector<int>{1});
        t.data[0] = v;
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    /// Round every value through IEEE float32 (checkpoint precision).
    void quantize_f32() {
        for (double& v : data) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) {
            out += ",";
        }
    }
    return out + ")";
}

/// Multi-channel real field on a regular grid, row-major (c, i, j).
struct GridField {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    GridField() = default;
    GridField(int c, int h, int w)
        : channels(c), height(h), width(w),
          data(static_cast<size_t>(c) * h * w, 0.0) {}

    double& at(int c, int i, int j) {
        return data[(static_cast<size_t>(c) * height + i) * width + j];
    }
    double at(int c, int i, int j) const {
        return data[(static_cast<size_t>(c) * height + i) * width + j];
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    Tensor to_tensor() const {
        Tensor t({channels, height, width});
        t.data = data;
        return t;
    }

    static GridField from_tensor(const Tensor& t) {
        require(t.shape.size() == 3, "bad_shape",
                "grid field tensor must be (channels, height, width), got " + shape_str(t.shape));
        GridField f(t.shape[0], t.shape[1], t.shape[2]);
        f.data = t.data;
        return f;
    }
};

} // namespace clfno
