// Independent reference implementations used as test oracles. These stay
// deliberately naive (direct sums, dense Jacobi sweeps) and never share
// code with the paths under test.
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "clfno/tensor.hpp"

namespace clfno::test {

// O(N^2) direct 2-D DFT, unnormalized forward convention.
inline std::vector<std::complex<double>> direct_dft2(const std::vector<double>& plane, int h,
                                                     int w) {
    std::vector<std::complex<double>> out(static_cast<size_t>(h) * w);
    const double two_pi = 6.283185307179586476925286766559;
    for (int kh = 0; kh < h; ++kh) {
        for (int kw = 0; kw < w; ++kw) {
            std::complex<double> acc{0.0, 0.0};
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    double ang = -two_pi * (static_cast<double>(kh) * i / h +
                                            static_cast<double>(kw) * j / w);
                    acc += plane[static_cast<size_t>(i) * w + j] *
                           std::complex<double>(std::cos(ang), std::sin(ang));
                }
            }
            out[static_cast<size_t>(kh) * w + kw] = acc;
        }
    }
    return out;
}

// central finite differences of a scalar function at x, step h
inline std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-4) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double fp = f(x);
        x[i] = keep - h;
        double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// worst relative mismatch between two gradients, with an absolute floor
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// cyclic Jacobi eigensolver for small symmetric matrices; returns
// eigenvalues descending with matching eigenvectors as rows
struct JacobiEig {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;
};

inline JacobiEig jacobi_eig(std::vector<std::vector<double>> a) {
    int n = static_cast<int>(a.size());
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
        v[i][i] = 1.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                off += a[p][q] * a[p][q];
            }
        }
        if (off < 1e-24) {
            break;
        }
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) {
                    continue;
                }
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x][x] > a[y][y]; });
    JacobiEig out;
    for (int idx : order) {
        out.values.push_back(a[idx][idx]);
        std::vector<double> col(n);
        for (int k = 0; k < n; ++k) {
            col[k] = v[k][idx];
        }
        out.vectors.push_back(std::move(col));
    }
    return out;
}

} // namespace clfno::test
