#include "clfno/fft.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <vector>

namespace clfno::fft {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct Radix2Plan {
    std::vector<int> bitrev;                  // permutation
    std::vector<std::complex<double>> tw;     // exp(-2*pi*i*k/n), k < n/2
};

struct DirectPlan {
    std::vector<std::complex<double>> kernel; // exp(-2*pi*i*j*k/n), n*n entries
};

const Radix2Plan& radix2_plan(int n) {
    static std::mutex mu;
    static std::map<int, Radix2Plan> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) {
        return it->second;
    }
    Radix2Plan plan;
    plan.bitrev.resize(n);
    int log2n = 0;
    while ((1 << log2n) < n) {
        ++log2n;
    }
    for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < log2n; ++b) {
            r = (r << 1) | ((i >> b) & 1);
        }
        plan.bitrev[i] = r;
    }
    plan.tw.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
        double a = -kTwoPi * k / n;
        plan.tw[k] = {std::cos(a), std::sin(a)};
    }
    return cache.emplace(n, std::move(plan)).first->second;
}

const DirectPlan& direct_plan(int n) {
    static std::mutex mu;
    static std::map<int, DirectPlan> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) {
        return it->second;
    }
    DirectPlan plan;
    plan.kernel.resize(static_cast<size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            // reduce j*k mod n first so large grids keep full accuracy
            long long m = (static_cast<long long>(j) * k) % n;
            double a = -kTwoPi * static_cast<double>(m) / n;
            plan.kernel[static_cast<size_t>(j) * n + k] = {std::cos(a), std::sin(a)};
        }
    }
    return cache.emplace(n, std::move(plan)).first->second;
}

void radix2(std::complex<double>* x, int n, bool inverse) {
    const Radix2Plan& plan = radix2_plan(n);
    for (int i = 0; i < n; ++i) {
        int r = plan.bitrev[i];
        if (i < r) {
            std::swap(x[i], x[r]);
        }
    }
    for (int len = 2; len <= n; len <<= 1) {
        int half = len >> 1;
        int step = n / len;
        for (int start = 0; start < n; start += len) {
            for (int k = 0; k < half; ++k) {
                std::complex<double> w = plan.tw[static_cast<size_t>(k) * step];
                if (inverse) {
                    w = std::conj(w);
                }
                std::complex<double> a = x[start + k];
                std::complex<double> b = x[start + k + half] * w;
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
    }
}

void direct(std::complex<double>* x, int n, bool inverse) {
    const DirectPlan& plan = direct_plan(n);
    std::vector<std::complex<double>> out(n);
    for (int k = 0; k < n; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (int j = 0; j < n; ++j) {
            std::complex<double> w = plan.kernel[static_cast<size_t>(j) * n + k];
            if (inverse) {
                w = std::conj(w);
            }
            acc += x[j] * w;
        }
        out[k] = acc;
    }
    for (int k = 0; k < n; ++k) {
        x[k] = out[k];
    }
}

} // namespace

void transform_1d(std::complex<double>* data, int n, bool inverse) {
    if (n <= 1) {
        return;
    }
    if (is_pow2(n)) {
        radix2(data, n, inverse);
    } else {
        direct(data, n, inverse);
    }
}

void transform_2d(std::complex<double>* data, int h, int w, bool inverse) {
    for (int r = 0; r < h; ++r) {
        transform_1d(data + static_cast<size_t>(r) * w, w, inverse);
    }
    if (h <= 1) {
        return;
    }
    std::vector<std::complex<double>> col(h);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) {
            col[r] = data[static_cast<size_t>(r) * w + c];
        }
        transform_1d(col.data(), h, inverse);
        for (int r = 0; r < h; ++r) {
            data[static_cast<size_t>(r) * w + c] = col[r];
        }
    }
}

} // namespace clfno::fft
