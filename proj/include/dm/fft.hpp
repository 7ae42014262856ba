#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "dm/errors.hpp"

namespace dm {

inline bool is_power_of_two(unsigned n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey FFT. Input length must be a power
// of two. Runs in double regardless of the pipeline scalar type; desk-scale
// transforms (SR <= 4096) are exact enough against the direct DFT at 1e-5.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (!is_power_of_two(static_cast<unsigned>(n))) throw ConfigError("fft: length must be a power of two");
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846264338327950288 / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Magnitude bins |X_k| for k = 0..n/2 of a real signal of power-of-two length.
inline std::vector<double> rfft_magnitude_bins(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (!is_power_of_two(static_cast<unsigned>(n))) throw ConfigError("rfft: length must be a power of two");
    std::vector<std::complex<double>> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = {x[i], 0.0};
    fft_radix2(a);
    std::vector<double> mag(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) mag[k] = std::abs(a[k]);
    return mag;
}

} // namespace dm
