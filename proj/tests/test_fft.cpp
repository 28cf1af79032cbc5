#include <doctest.h>

#include <complex>

#include "clfno/rng.hpp"
#include "clfno/tape.hpp"
#include "support/oracles.hpp"

using namespace clfno;

namespace {

Tensor random_field(int c, int h, int w, uint64_t seed) {
    Tensor t({c, h, w});
    Rng rng(seed);
    for (double& v : t.data) {
        v = rng.normal();
    }
    return t;
}

} // namespace

TEST_CASE("ifft2(fft2(x)) round trips a random 64x64 plane") {
    Tape t;
    Tensor x = random_field(1, 64, 64, 42);
    Var back = t.ifft2_real(t.fft2(t.constant(x)));
    double worst = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        worst = std::max(worst, std::abs(t.val(back).data[i] - x.data[i]));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("fft2 of zeros is zero") {
    Tape t;
    Var spec = t.fft2(t.constant(Tensor({1, 8, 8})));
    for (double v : t.val(spec).data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("Parseval holds against the direct DFT oracle on 8x8") {
    Tensor x = random_field(1, 8, 8, 7);

    Tape t;
    Var spec = t.fft2(t.constant(x));

    double space_energy = 0.0;
    for (double v : x.data) {
        space_energy += v * v;
    }
    double spec_energy = 0.0;
    const Tensor& s = t.val(spec);
    for (size_t i = 0; i + 1 < s.data.size(); i += 2) {
        spec_energy += s.data[i] * s.data[i] + s.data[i + 1] * s.data[i + 1];
    }
    spec_energy /= 64.0; // 1/(H*W)
    CHECK(std::abs(space_energy - spec_energy) / space_energy < 1e-10);

    // the fast transform must agree with the O(N^2) oracle bin by bin
    auto oracle = test::direct_dft2(x.data, 8, 8);
    for (size_t i = 0; i < oracle.size(); ++i) {
        CHECK(std::abs(s.data[2 * i] - oracle[i].real()) < 1e-9);
        CHECK(std::abs(s.data[2 * i + 1] - oracle[i].imag()) < 1e-9);
    }
}

TEST_CASE("fft2 is linear") {
    Tensor x = random_field(1, 16, 16, 1);
    Tensor y = random_field(1, 16, 16, 2);
    double a = 1.7, b = -0.4;

    Tape t;
    Tensor combo({1, 16, 16});
    for (size_t i = 0; i < combo.data.size(); ++i) {
        combo.data[i] = a * x.data[i] + b * y.data[i];
    }
    const Tensor& lhs = t.val(t.fft2(t.constant(combo)));
    const Tensor& fx = t.val(t.fft2(t.constant(x)));
    const Tensor& fy = t.val(t.fft2(t.constant(y)));
    double worst = 0.0;
    for (size_t i = 0; i < lhs.data.size(); ++i) {
        worst = std::max(worst, std::abs(lhs.data[i] - (a * fx.data[i] + b * fy.data[i])));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("non-power-of-two sizes agree with the oracle and round trip") {
    Tensor x = random_field(1, 6, 10, 3);
    Tape t;
    Var spec = t.fft2(t.constant(x));
    auto oracle = test::direct_dft2(x.data, 6, 10);
    const Tensor& s = t.val(spec);
    for (size_t i = 0; i < oracle.size(); ++i) {
        CHECK(std::abs(s.data[2 * i] - oracle[i].real()) < 1e-9);
        CHECK(std::abs(s.data[2 * i + 1] - oracle[i].imag()) < 1e-9);
    }
    Var back = t.ifft2_real(spec);
    for (size_t i = 0; i < x.data.size(); ++i) {
        CHECK(t.val(back).data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("fft2 rejects non-finite input") {
    Tape t;
    Tensor x({1, 4, 4});
    x.data[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(t.fft2(t.constant(x)), Error);
}
