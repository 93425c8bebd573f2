#pragma once

// Time-frequency images of the target window. The Morlet path is the main
// input representation; CMOR, STFT, and line-plot rasters exist so the rest
// of the pipeline can be compared across image kinds with identical shapes.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "semf/error.hpp"

namespace semf {

enum class ImageKind { Line, Stft, Cmor, Morlet };

inline const char* to_string(ImageKind k) {
    switch (k) {
        case ImageKind::Line: return "line";
        case ImageKind::Stft: return "stft";
        case ImageKind::Cmor: return "cmor";
        case ImageKind::Morlet: return "morlet";
    }
    return "?";
}

inline ImageKind image_kind_from(const std::string& s) {
    if (s == "line") return ImageKind::Line;
    if (s == "stft") return ImageKind::Stft;
    if (s == "cmor") return ImageKind::Cmor;
    if (s == "morlet") return ImageKind::Morlet;
    fail(ErrorKind::Usage, "unknown image kind '" + s + "' (valid: line, stft, cmor, morlet)");
}

struct MorletParams {
    double omega0 = 6.0;
    std::size_t n_scales = 128;
    double s_min = 2.0;   // scale bounds, in samples
    double s_max = 64.0;
    double epsilon = 1e-8;  // log floor

    void validate() const {
        if (omega0 < 5.0) fail(ErrorKind::Contract, "morlet: omega0 must be >= 5");
        if (n_scales < 2) fail(ErrorKind::Sizing, "morlet: need at least 2 scales");
        if (!(0.0 < s_min && s_min < s_max)) fail(ErrorKind::Contract, "morlet: need 0 < s_min < s_max");
    }
};

struct CmorParams {
    double bandwidth = 1.5;
    double center_freq = 1.0;
    std::size_t n_scales = 128;
    double s_min = 2.0;
    double s_max = 64.0;
    double epsilon = 1e-8;

    void validate() const {
        if (bandwidth <= 0.0 || center_freq <= 0.0) fail(ErrorKind::Contract, "cmor: bandwidth and center frequency must be positive");
        if (n_scales < 2) fail(ErrorKind::Sizing, "cmor: need at least 2 scales");
        if (!(0.0 < s_min && s_min < s_max)) fail(ErrorKind::Contract, "cmor: need 0 < s_min < s_max");
    }
};

// scale-to-period multiplier for the Morlet family
inline double morlet_fourier_factor(double omega0) {
    return 4.0 * std::numbers::pi / (omega0 + std::sqrt(2.0 + omega0 * omega0));
}

inline std::vector<double> geometric_scales(std::size_t n, double s_min, double s_max) {
    std::vector<double> s(n);
    const double ratio = std::log(s_max / s_min) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j) s[j] = s_min * std::exp(ratio * static_cast<double>(j));
    return s;
}

struct ComplexMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<std::complex<double>> v;

    std::complex<double>& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    const std::complex<double>& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

struct Spectrogram {
    std::size_t n_scales = 0;
    std::size_t width = 0;
    std::vector<double> values;  // row-major n_scales x width
    std::vector<double> scales;  // per-row scale (samples); row index for stft/line
    ImageKind kind = ImageKind::Morlet;

    double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

namespace detail {

inline void require_finite_signal(std::span<const double> x, const char* op) {
    for (double v : x)
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string(op) + ": input contains a non-finite value");
}

// Shared CWT core. The analyzing kernel is amp * exp(-eta^2/denom) *
// exp(i*omega*eta); conjugation happens here. Zero-padded boundaries fall out
// of summing over the observed samples only. The kernel is cut where its
// Gaussian envelope drops below 1e-8.
inline ComplexMatrix cwt_gaussian_kernel(std::span<const double> x, const std::vector<double>& scales,
                                         double amp, double denom, double omega) {
    const std::size_t len = x.size();
    ComplexMatrix w;
    w.rows = scales.size();
    w.cols = len;
    w.v.assign(w.rows * w.cols, {0.0, 0.0});

    const double eta_cut = std::sqrt(std::max(denom * std::log(amp * 1e8), 0.0));
    std::vector<double> kre(2 * len - 1), kim(2 * len - 1);
    for (std::size_t j = 0; j < scales.size(); ++j) {
        const double s = scales[j];
        const long radius = std::min<long>(static_cast<long>(std::ceil(eta_cut * s)), static_cast<long>(len) - 1);
        for (long d = -radius; d <= radius; ++d) {
            const double eta = static_cast<double>(d) / s;
            const double env = amp * std::exp(-eta * eta / denom);
            kre[static_cast<std::size_t>(d + radius)] = env * std::cos(omega * eta);
            kim[static_cast<std::size_t>(d + radius)] = -env * std::sin(omega * eta);
        }
        const double norm = 1.0 / std::sqrt(s);
        for (std::size_t n = 0; n < len; ++n) {
            const long lo = std::max<long>(0, static_cast<long>(n) - radius);
            const long hi = std::min<long>(static_cast<long>(len) - 1, static_cast<long>(n) + radius);
            double re = 0.0, im = 0.0;
            const long base = radius - static_cast<long>(n);
            for (long np = lo; np <= hi; ++np) {
                const double xv = x[static_cast<std::size_t>(np)];
                re += xv * kre[static_cast<std::size_t>(np + base)];
                im += xv * kim[static_cast<std::size_t>(np + base)];
            }
            w.at(j, n) = {re * norm, im * norm};
        }
    }
    return w;
}

// joint standardization; all-but-constant input -> zeros
inline bool standardize_matrix(std::vector<double>& v) {
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= static_cast<double>(v.size());
    if (var < 1e-12) {
        std::fill(v.begin(), v.end(), 0.0);
        return false;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (double& x : v) x = (x - mu) * inv;
    return true;
}

}  // namespace detail

// W[j][n] = s_j^{-1/2} * sum_{n'} x[n'] conj(psi((n'-n)/s_j)),
// psi(eta) = pi^{-1/4} exp(i*omega0*eta) exp(-eta^2/2)
inline ComplexMatrix morlet_cwt(std::span<const double> x, const MorletParams& p) {
    p.validate();
    if (x.size() < 2) fail(ErrorKind::Sizing, "morlet_cwt: need at least 2 samples");
    detail::require_finite_signal(x, "morlet_cwt");
    const auto scales = geometric_scales(p.n_scales, p.s_min, p.s_max);
    return detail::cwt_gaussian_kernel(x, scales, std::pow(std::numbers::pi, -0.25), 2.0, p.omega0);
}

// complex Morlet with tunable bandwidth B and center frequency C:
// psi(eta) = (pi*B)^{-1/2} exp(2*pi*i*C*eta) exp(-eta^2/B)
inline ComplexMatrix cmor_cwt(std::span<const double> x, const CmorParams& p) {
    p.validate();
    if (x.size() < 2) fail(ErrorKind::Sizing, "cmor_cwt: need at least 2 samples");
    detail::require_finite_signal(x, "cmor_cwt");
    const auto scales = geometric_scales(p.n_scales, p.s_min, p.s_max);
    return detail::cwt_gaussian_kernel(x, scales, 1.0 / std::sqrt(std::numbers::pi * p.bandwidth), p.bandwidth,
                                       2.0 * std::numbers::pi * p.center_freq);
}

inline Spectrogram log_amplitude_normalize(const ComplexMatrix& w, std::vector<double> scales, ImageKind kind,
                                           double epsilon = 1e-8) {
    Spectrogram out;
    out.n_scales = w.rows;
    out.width = w.cols;
    out.scales = std::move(scales);
    out.kind = kind;
    out.values.resize(w.v.size());
    for (std::size_t i = 0; i < w.v.size(); ++i) {
        const double a = std::log(std::abs(w.v[i]) + epsilon);
        if (!std::isfinite(a)) fail(ErrorKind::Numeric, "log_amplitude_normalize: non-finite amplitude");
        out.values[i] = a;
    }
    detail::standardize_matrix(out.values);
    return out;
}

// Hann-windowed DFT magnitudes, log-normalized, then bilinearly resampled to
// n_scales x len so every image kind feeds the encoder with one shape. Row 0
// carries the highest frequency, matching the wavelet images' small-scale row.
inline Spectrogram stft_spectrogram(std::span<const double> x, std::size_t window_len, std::size_t hop,
                                    std::size_t n_scales, double epsilon = 1e-8) {
    const std::size_t len = x.size();
    if (window_len > len) fail(ErrorKind::Sizing, "stft: window length " + std::to_string(window_len) +
                                                      " exceeds signal length " + std::to_string(len));
    if (window_len < 2 || hop == 0) fail(ErrorKind::Sizing, "stft: need window >= 2 and hop >= 1");
    detail::require_finite_signal(x, "stft");

    const std::size_t n_frames = (len - window_len) / hop + 1;
    const std::size_t n_bins = window_len / 2 + 1;
    std::vector<double> hann(window_len);
    for (std::size_t n = 0; n < window_len; ++n)
        hann[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(window_len));

    std::vector<double> mag(n_bins * n_frames);
    std::vector<double> frame(window_len);
    for (std::size_t f = 0; f < n_frames; ++f) {
        for (std::size_t n = 0; n < window_len; ++n) frame[n] = x[f * hop + n] * hann[n];
        for (std::size_t k = 0; k < n_bins; ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < window_len; ++n) {
                const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(window_len);
                re += frame[n] * std::cos(ang);
                im += frame[n] * std::sin(ang);
            }
            mag[k * n_frames + f] = std::sqrt(re * re + im * im);
        }
    }

    Spectrogram out;
    out.n_scales = n_scales;
    out.width = len;
    out.kind = ImageKind::Stft;
    out.scales.resize(n_scales);
    for (std::size_t r = 0; r < n_scales; ++r) out.scales[r] = static_cast<double>(r);
    out.values.resize(n_scales * len);
    for (std::size_t r = 0; r < n_scales; ++r) {
        // reversed so low rows are high frequencies
        const double src_r = n_scales > 1
                                 ? (1.0 - static_cast<double>(r) / static_cast<double>(n_scales - 1)) * static_cast<double>(n_bins - 1)
                                 : 0.0;
        const std::size_t r0 = static_cast<std::size_t>(src_r);
        const std::size_t r1 = std::min(r0 + 1, n_bins - 1);
        const double fr = src_r - static_cast<double>(r0);
        for (std::size_t c = 0; c < len; ++c) {
            const double src_c = len > 1 ? static_cast<double>(c) / static_cast<double>(len - 1) * static_cast<double>(n_frames - 1)
                                         : 0.0;
            const std::size_t c0 = static_cast<std::size_t>(src_c);
            const std::size_t c1 = std::min(c0 + 1, n_frames - 1);
            const double fc = src_c - static_cast<double>(c0);
            const double top = mag[r0 * n_frames + c0] * (1.0 - fc) + mag[r0 * n_frames + c1] * fc;
            const double bot = mag[r1 * n_frames + c0] * (1.0 - fc) + mag[r1 * n_frames + c1] * fc;
            out.values[r * len + c] = std::log(top * (1.0 - fr) + bot * fr + epsilon);
        }
    }
    detail::standardize_matrix(out.values);
    return out;
}

// Min-max scales the series onto a height x len canvas and draws a 1-pixel
// polyline (Bresenham between adjacent columns), then standardizes like the
// other image kinds. Larger values map to lower row indices.
inline Spectrogram line_raster(std::span<const double> x, std::size_t height) {
    const std::size_t len = x.size();
    if (len < 2) fail(ErrorKind::Sizing, "line_raster: need at least 2 samples");
    if (height < 2) fail(ErrorKind::Sizing, "line_raster: need height >= 2");
    detail::require_finite_signal(x, "line_raster");

    double lo = x[0], hi = x[0];
    for (double v : x) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<long> row(len);
    for (std::size_t c = 0; c < len; ++c) {
        // flat series ties to mid-height
        const double t = hi > lo ? (x[c] - lo) / (hi - lo) : 0.5;
        row[c] = std::lround((1.0 - t) * static_cast<double>(height - 1));
    }

    Spectrogram out;
    out.n_scales = height;
    out.width = len;
    out.kind = ImageKind::Line;
    out.scales.resize(height);
    for (std::size_t r = 0; r < height; ++r) out.scales[r] = static_cast<double>(r);
    out.values.assign(height * len, 0.0);
    auto plot = [&](long c, long r) { out.values[static_cast<std::size_t>(r) * len + static_cast<std::size_t>(c)] = 1.0; };
    for (std::size_t c = 0; c + 1 < len; ++c) {
        long x0 = static_cast<long>(c), y0 = row[c];
        const long x1 = static_cast<long>(c) + 1, y1 = row[c + 1];
        const long dx = 1, dy = -std::labs(y1 - y0);
        const long sy = y0 < y1 ? 1 : -1;
        long err = dx + dy;
        while (true) {
            plot(x0, y0);
            if (x0 == x1 && y0 == y1) break;
            const long e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += 1;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    detail::standardize_matrix(out.values);
    return out;
}

// One entry point for all four image kinds at a common n_scales x len shape.
inline Spectrogram make_image(ImageKind kind, std::span<const double> x, std::size_t n_scales) {
    switch (kind) {
        case ImageKind::Morlet: {
            MorletParams p;
            p.n_scales = n_scales;
            return log_amplitude_normalize(morlet_cwt(x, p), geometric_scales(n_scales, p.s_min, p.s_max),
                                           ImageKind::Morlet, p.epsilon);
        }
        case ImageKind::Cmor: {
            CmorParams p;
            p.n_scales = n_scales;
            return log_amplitude_normalize(cmor_cwt(x, p), geometric_scales(n_scales, p.s_min, p.s_max),
                                           ImageKind::Cmor, p.epsilon);
        }
        case ImageKind::Stft:
            return stft_spectrogram(x, std::min<std::size_t>(32, x.size()), 4, n_scales);
        case ImageKind::Line:
            return line_raster(x, n_scales);
    }
    fail(ErrorKind::Usage, "unknown image kind");
}

// binary PGM (P5), values linearly mapped [min,max] -> [0,255]
inline void write_pgm(const std::string& path, const Spectrogram& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os << "P5\n" << s.width << " " << s.n_scales << "\n255\n";
    double lo = s.values[0], hi = s.values[0];
    for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : s.values) {
        const int byte = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 128;
        os.put(static_cast<char>(byte));
    }
    if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

// sidecar with exact values, one row per scale
inline void write_matrix_csv(const std::string& path, const Spectrogram& s) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    char buf[64];
    for (std::size_t r = 0; r < s.n_scales; ++r) {
        for (std::size_t c = 0; c < s.width; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", s.at(r, c));
            os << (c ? "," : "") << buf;
        }
        os << "\n";
    }
    if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

}  // namespace semf
