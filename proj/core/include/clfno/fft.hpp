#pragma once

#include <complex>

namespace clfno::fft {

/// Unnormalized in-place 1-D transform. Radix-2 path for power-of-two
/// lengths, direct DFT otherwise; `inverse` flips the kernel sign only
/// (no 1/N factor at this level).
void transform_1d(std::complex<double>* data, int n, bool inverse);

/// Unnormalized in-place 2-D transform of an h-by-w row-major plane.
void transform_2d(std::complex<double>* data, int h, int w, bool inverse);

} // namespace clfno::fft
