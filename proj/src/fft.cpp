#include "melstyle/fft.hpp"

#include <cmath>

#include "melstyle/common.hpp"

namespace melstyle {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }
}  // namespace

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (!is_pow2(n)) throw InputError("fft size must be a power of two");

    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = kTwoPi / double(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> t = a[i + k + len / 2] * w;
                a[i + k] = u + t;
                a[i + k + len / 2] = u - t;
                w *= wlen;
            }
        }
    }

    if (inverse) {
        for (auto& x : a) x /= double(n);
    }
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    std::vector<std::complex<double>> a(x.begin(), x.end());
    fft_inplace(a, false);
    a.resize(x.size() / 2 + 1);
    return a;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& bins, int n) {
    if (bins.size() != size_t(n / 2 + 1)) throw InputError("irfft bin count mismatch");
    std::vector<std::complex<double>> a(static_cast<size_t>(n));
    for (int k = 0; k <= n / 2; ++k) a[size_t(k)] = bins[size_t(k)];
    for (int k = n / 2 + 1; k < n; ++k) a[size_t(k)] = std::conj(bins[size_t(n - k)]);
    fft_inplace(a, true);
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[size_t(i)] = a[size_t(i)].real();
    return out;
}

}  // namespace melstyle
