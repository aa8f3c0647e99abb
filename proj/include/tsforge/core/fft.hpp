#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

// Mixed-radix Cooley-Tukey transforms for arbitrary lengths. Prime factors
// fall back to a direct butterfly, so prime lengths cost O(n^2).
//
// Convention used throughout the library: the forward transform is
// unnormalised, the inverse carries the 1/n factor.
namespace tsforge::fft {

using Complex = std::complex<double>;

/// In-place complex DFT. `inverse` flips the twiddle sign; no scaling is applied.
void transform(std::span<Complex> data, bool inverse);

/// floor(n/2)+1 non-negative frequency bins of a real sequence.
std::vector<Complex> rfft(std::span<const double> x);

/// Real sequence of length n from its half spectrum. Imaginary parts of the
/// DC bin (and the Nyquist bin for even n) are ignored.
std::vector<double> irfft(std::span<const Complex> half_spectrum, std::size_t n);

}  // namespace tsforge::fft
