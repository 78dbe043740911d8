#pragma once

#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "graphfed/errors.hpp"

namespace graphfed {

using complex_vector = std::vector<std::complex<double>>;

namespace detail {

// Twiddle table exp(-2*pi*i*k/n), k = 0..n-1. Indexing by (j*k) mod n keeps
// every trig argument inside one period, so no precision is lost to argument
// reduction at large j*k.
inline complex_vector twiddles(std::size_t n) {
    complex_vector w(n);
    for (std::size_t k = 0; k < n; ++k)
        w[k] = std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(n));
    return w;
}

} // namespace detail

// Direct O(n^2) transform. Signal lengths in this project stay in the low
// hundreds, well under where an FFT would pay off.
inline complex_vector dft(const complex_vector& x) {
    const std::size_t n = x.size();
    if (n == 0) throw shape_error("dft: empty input");
    const complex_vector w = detail::twiddles(n);
    complex_vector out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            acc += x[j] * w[(j * k) % n];
        out[k] = acc;
    }
    return out;
}

inline complex_vector dft(std::span<const double> x) {
    complex_vector cx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) cx[i] = x[i];
    return dft(cx);
}

inline complex_vector idft(const complex_vector& x) {
    const std::size_t n = x.size();
    if (n == 0) throw shape_error("idft: empty input");
    const complex_vector w = detail::twiddles(n);
    complex_vector out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            acc += x[j] * std::conj(w[(j * k) % n]);
        out[k] = acc / double(n);
    }
    return out;
}

// Analytic signal via the frequency-domain construction: zero the negative
// bins, double the strictly positive ones, keep DC (and Nyquist for even n)
// at unit gain. The real part reproduces the input.
inline complex_vector analytic_signal(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) throw shape_error("analytic_signal: need at least 2 samples");
    complex_vector spec = dft(x);
    const std::size_t half = n / 2;
    for (std::size_t k = 1; k < n; ++k) {
        if (n % 2 == 0 && k == half) continue;       // Nyquist stays at 1x
        if (k < half || (n % 2 == 1 && k <= half))
            spec[k] *= 2.0;
        else
            spec[k] = 0.0;
    }
    return idft(spec);
}

inline std::vector<double> instantaneous_phase(std::span<const double> x) {
    const complex_vector a = analytic_signal(x);
    std::vector<double> phi(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        phi[i] = std::atan2(a[i].imag(), a[i].real());
    return phi;
}

} // namespace graphfed
