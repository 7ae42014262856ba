#pragma once

// Independent reference implementations the tests check the engine against.
// Everything here is deliberately naive (materialized padding, O(n^2) DFT,
// two-pass statistics) and shares no code with the implementation paths it
// verifies.

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

// Direct cross-correlation with explicitly materialized zero padding.
// x: [L][Cin], w: [k][Cin][Cout], out: [L'][Cout].
inline std::vector<std::vector<double>> conv1d(const std::vector<std::vector<double>>& x,
                                               const std::vector<std::vector<std::vector<double>>>& w,
                                               const std::vector<double>& b, int stride, int dilation,
                                               bool same) {
    const int len = static_cast<int>(x.size());
    const int cin = static_cast<int>(x[0].size());
    const int k = static_cast<int>(w.size());
    const int cout = static_cast<int>(b.size());
    const int span = dilation * (k - 1) + 1;

    int len_out, pad_left;
    if (same) {
        len_out = (len + stride - 1) / stride;
        const int pad_total = std::max((len_out - 1) * stride + span - len, 0);
        pad_left = pad_total / 2;
    } else {
        if (span > len) throw std::runtime_error("oracle conv: kernel does not fit");
        len_out = (len - span) / stride + 1;
        pad_left = 0;
    }
    std::vector<std::vector<double>> padded(len + 2 * (span + pad_left),
                                            std::vector<double>(cin, 0.0));
    for (int t = 0; t < len; ++t) padded[t + pad_left] = x[t];

    std::vector<std::vector<double>> out(len_out, std::vector<double>(cout, 0.0));
    for (int t0 = 0; t0 < len_out; ++t0)
        for (int co = 0; co < cout; ++co) {
            double acc = b[co];
            for (int kk = 0; kk < k; ++kk)
                for (int ci = 0; ci < cin; ++ci)
                    acc += padded[t0 * stride + kk * dilation][ci] * w[kk][ci][co];
            out[t0][co] = acc;
        }
    return out;
}

inline std::vector<std::vector<double>> matmul(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b) {
    const std::size_t n = a.size(), k = b.size(), m = b[0].size();
    std::vector<std::vector<double>> out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i][t] * b[t][j];
            out[i][j] = acc;
        }
    return out;
}

inline std::vector<std::vector<double>> windowed_max(const std::vector<std::vector<double>>& x,
                                                     int k, int stride, bool same) {
    const int len = static_cast<int>(x.size());
    const int c = static_cast<int>(x[0].size());
    int len_out, pad_left;
    if (same) {
        len_out = (len + stride - 1) / stride;
        const int pad_total = std::max((len_out - 1) * stride + k - len, 0);
        pad_left = pad_total / 2;
    } else {
        if (k > len) throw std::runtime_error("oracle pool: window does not fit");
        len_out = (len - k) / stride + 1;
        pad_left = 0;
    }
    std::vector<std::vector<double>> out(len_out, std::vector<double>(c, 0.0));
    for (int t0 = 0; t0 < len_out; ++t0)
        for (int i = 0; i < c; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (int kk = 0; kk < k; ++kk) {
                const int t = t0 * stride - pad_left + kk;
                if (t < 0 || t >= len) continue;
                best = std::max(best, x[t][i]);
            }
            out[t0][i] = best;
        }
    return out;
}

// Column-wise reductions over optionally masked rows.
inline std::vector<double> column_avg(const std::vector<std::vector<double>>& x,
                                      const std::vector<bool>* mask = nullptr) {
    const std::size_t c = x[0].size();
    std::vector<double> out(c, 0.0);
    std::size_t live = 0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        if (mask && !(*mask)[t]) continue;
        ++live;
        for (std::size_t i = 0; i < c; ++i) out[i] += x[t][i];
    }
    for (auto& v : out) v /= static_cast<double>(live);
    return out;
}

inline std::vector<double> column_max(const std::vector<std::vector<double>>& x,
                                      const std::vector<bool>* mask = nullptr) {
    const std::size_t c = x[0].size();
    std::vector<double> out(c, -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < x.size(); ++t) {
        if (mask && !(*mask)[t]) continue;
        for (std::size_t i = 0; i < c; ++i) out[i] = std::max(out[i], x[t][i]);
    }
    return out;
}

// O(n^2) discrete Fourier transform magnitudes for k = 0..n/2.
inline std::vector<double> dft_magnitudes(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> out(n / 2 + 1, 0.0);
    for (std::size_t k = 0; k <= n / 2; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double a = -2.0 * 3.14159265358979323846 * static_cast<double>(k) *
                             static_cast<double>(t) / static_cast<double>(n);
            re += x[t] * std::cos(a);
            im += x[t] * std::sin(a);
        }
        out[k] = std::hypot(re, im);
    }
    return out;
}

// Plain two-pass mean/std per column.
inline void two_pass_stats(const std::vector<std::vector<double>>& rows, std::vector<double>& mean,
                           std::vector<double>& stddev) {
    const std::size_t c = rows[0].size();
    mean.assign(c, 0.0);
    stddev.assign(c, 0.0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < c; ++i) mean[i] += r[i];
    for (auto& m : mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t i = 0; i < c; ++i) {
            const double d = r[i] - mean[i];
            stddev[i] += d * d;
        }
    for (auto& s : stddev) s = std::sqrt(s / static_cast<double>(rows.size()));
}

// GELU tanh form evaluated in long double.
inline double gelu_reference(double x) {
    const long double c0 = 0.797884560802865355879892119868763737L; // sqrt(2/pi)
    const long double c1 = 0.044715L;
    const long double xl = x;
    return static_cast<double>(0.5L * xl * (1.0L + std::tanh(c0 * (xl + c1 * xl * xl * xl))));
}

// Ridge regression with intercept via normal equations (Gaussian
// elimination); small feature counts only.
inline std::vector<double> ridge_fit_predict(const std::vector<std::vector<double>>& features,
                                             const std::vector<double>& y, double lambda) {
    const std::size_t n = features.size();
    const std::size_t d = features[0].size() + 1; // + intercept
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    std::vector<double> rhs(d, 0.0);
    auto feat = [&](std::size_t i, std::size_t j) -> double {
        return j == 0 ? 1.0 : features[i][j - 1];
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < d; ++p) {
            rhs[p] += feat(i, p) * y[i];
            for (std::size_t q = 0; q < d; ++q) a[p][q] += feat(i, p) * feat(i, q);
        }
    for (std::size_t p = 1; p < d; ++p) a[p][p] += lambda;

    // Gaussian elimination with partial pivoting.
    std::vector<double> w(d, 0.0);
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(rhs[col], rhs[piv]);
        for (std::size_t r = col + 1; r < d; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t q = col; q < d; ++q) a[r][q] -= f * a[col][q];
            rhs[r] -= f * rhs[col];
        }
    }
    for (std::size_t col = d; col-- > 0;) {
        double acc = rhs[col];
        for (std::size_t q = col + 1; q < d; ++q) acc -= a[col][q] * w[q];
        w[col] = acc / a[col][col];
    }
    std::vector<double> preds(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < d; ++p) acc += w[p] * feat(i, p);
        preds[i] = acc;
    }
    return preds;
}

} // namespace oracle
