#pragma once

#include <complex>
#include <vector>

namespace melstyle {

// Iterative radix-2 FFT; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// Real-input FFT, returns n/2 + 1 bins.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft for a real signal of length n (power of two).
std::vector<double> irfft(const std::vector<std::complex<double>>& bins, int n);

}  // namespace melstyle
