#pragma once

// Ingestion, imputation, windowing, chronological splits, per-horizon target
// standardization, and the synthetic dataset generator. Gaps are carried as
// NaN until impute() runs; every function here is pure over immutable frames.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "semf/error.hpp"
#include "semf/rng.hpp"

namespace semf {

inline constexpr std::array<int, 6> kHorizons{1, 3, 7, 14, 21, 35};
inline constexpr int kMaxHorizon = 35;
inline constexpr double kVarianceFloor = 1e-8;

// ---------------------------------------------------------------------------
// calendar dates (serial day counts; Howard Hinnant's civil algorithms)
// ---------------------------------------------------------------------------

inline std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::tuple<int, unsigned, unsigned> civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return {static_cast<int>(y + (m <= 2)), m, d};
}

struct Date {
    std::int64_t serial = 0;  // days since 1970-01-01

    std::string iso() const {
        auto [y, m, d] = civil_from_days(serial);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
        return buf;
    }

    static std::optional<Date> parse(const std::string& s) {
        if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
        int y = 0;
        unsigned m = 0, d = 0;
        if (std::sscanf(s.c_str(), "%4d-%2u-%2u", &y, &m, &d) != 3) return std::nullopt;
        if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
        const std::int64_t serial = days_from_civil(y, m, d);
        if (civil_from_days(serial) != std::tuple<int, unsigned, unsigned>{y, m, d}) return std::nullopt;
        return Date{serial};
    }

    auto operator<=>(const Date&) const = default;
};

// ---------------------------------------------------------------------------
// frames
// ---------------------------------------------------------------------------

inline bool is_gap(double v) { return std::isnan(v); }
inline constexpr double kGap = std::numeric_limits<double>::quiet_NaN();

struct AlignedFrame {
    std::vector<Date> dates;
    std::vector<double> target;          // length T
    std::vector<double> exogenous;       // row-major T x (D-1)
    std::vector<std::string> column_names;  // D-1 exogenous names

    std::size_t rows() const { return dates.size(); }
    std::size_t n_exo() const { return column_names.size(); }

    double exo_at(std::size_t t, std::size_t j) const { return exogenous[t * n_exo() + j]; }
    double& exo_at(std::size_t t, std::size_t j) { return exogenous[t * n_exo() + j]; }

    bool has_gaps() const {
        for (double v : target)
            if (is_gap(v)) return true;
        for (double v : exogenous)
            if (is_gap(v)) return true;
        return false;
    }
};

// ---------------------------------------------------------------------------
// CSV: header `date,target,<exo...>`, ISO dates, empty cell = gap
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline double parse_cell(const std::string& s, std::size_t line_no) {
    if (s.empty()) return kGap;
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad numeric value '" + s + "'");
    return v;
}

}  // namespace detail

inline AlignedFrame load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::Io, "cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line.empty()) fail(ErrorKind::Parse, "empty file: " + path);
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3)
        fail(ErrorKind::Schema, "need a date column, a target column, and at least one exogenous column");

    AlignedFrame f;
    f.column_names.assign(header.begin() + 2, header.end());
    const std::size_t n_fields = header.size();

    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != n_fields)
            fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " + std::to_string(n_fields) +
                                       " fields, got " + std::to_string(fields.size()));
        const auto date = Date::parse(fields[0]);
        if (!date) fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad date '" + fields[0] + "'");
        f.dates.push_back(*date);
        f.target.push_back(detail::parse_cell(fields[1], line_no));
        for (std::size_t j = 2; j < n_fields; ++j) f.exogenous.push_back(detail::parse_cell(fields[j], line_no));
    }
    if (f.rows() == 0) fail(ErrorKind::Parse, "no data rows in " + path);

    // sort rows by date, rejecting duplicates
    std::vector<std::size_t> order(f.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return f.dates[a] < f.dates[b]; });
    AlignedFrame sorted;
    sorted.column_names = f.column_names;
    sorted.dates.reserve(f.rows());
    sorted.target.reserve(f.rows());
    sorted.exogenous.reserve(f.exogenous.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t r = order[i];
        if (i > 0 && f.dates[r] == sorted.dates.back())
            fail(ErrorKind::Schema, "duplicate date " + f.dates[r].iso());
        sorted.dates.push_back(f.dates[r]);
        sorted.target.push_back(f.target[r]);
        for (std::size_t j = 0; j < f.n_exo(); ++j) sorted.exogenous.push_back(f.exo_at(r, j));
    }
    return sorted;
}

inline void write_csv(const std::string& path, const AlignedFrame& f) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os << "date,target";
    for (const auto& n : f.column_names) os << "," << n;
    os << "\n";
    char buf[64];
    auto put = [&](double v) {
        if (is_gap(v)) return;
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (std::size_t t = 0; t < f.rows(); ++t) {
        os << f.dates[t].iso() << ",";
        put(f.target[t]);
        for (std::size_t j = 0; j < f.n_exo(); ++j) {
            os << ",";
            put(f.exo_at(t, j));
        }
        os << "\n";
    }
    if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// imputation: forward-fill, with leading gaps back-filled from the first
// observed value. Idempotent.
// ---------------------------------------------------------------------------

namespace detail {

inline void impute_column(std::span<double> col, const std::string& name) {
    std::size_t first = col.size();
    for (std::size_t t = 0; t < col.size(); ++t)
        if (!is_gap(col[t])) {
            first = t;
            break;
        }
    if (first == col.size()) fail(ErrorKind::Imputation, "column '" + name + "' has no observed values");
    for (std::size_t t = 0; t < first; ++t) col[t] = col[first];
    for (std::size_t t = first + 1; t < col.size(); ++t)
        if (is_gap(col[t])) col[t] = col[t - 1];
}

}  // namespace detail

inline AlignedFrame impute(AlignedFrame f) {
    detail::impute_column(f.target, "target");
    const std::size_t ncol = f.n_exo();
    std::vector<double> col(f.rows());
    for (std::size_t j = 0; j < ncol; ++j) {
        for (std::size_t t = 0; t < f.rows(); ++t) col[t] = f.exo_at(t, j);
        detail::impute_column(col, f.column_names[j]);
        for (std::size_t t = 0; t < f.rows(); ++t) f.exo_at(t, j) = col[t];
    }
    return f;
}

// ---------------------------------------------------------------------------
// windows
// ---------------------------------------------------------------------------

struct WindowSample {
    std::vector<double> history;     // target window, length L, raw units
    std::vector<double> exo_window;  // L x (D-1), raw units
    std::array<double, 6> targets{};      // standardized once a Standardizer is applied
    std::array<double, 6> raw_targets{};  // original units, for metrics
    std::size_t anchor_index = 0;
};

inline std::vector<WindowSample> make_windows(const AlignedFrame& f, std::size_t seq_len,
                                              std::span<const int> horizons = kHorizons) {
    if (f.has_gaps()) fail(ErrorKind::Contract, "make_windows: frame has unimputed gaps");
    if (seq_len < 1) fail(ErrorKind::Sizing, "make_windows: seq_len must be positive");
    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    const std::size_t t_min = seq_len + static_cast<std::size_t>(max_h);
    if (f.rows() < t_min)
        fail(ErrorKind::Sizing, "series too short: need at least " + std::to_string(t_min) + " rows, have " +
                                    std::to_string(f.rows()));
    const std::size_t count = f.rows() - t_min + 1;
    const std::size_t ncol = f.n_exo();

    std::vector<WindowSample> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        WindowSample s;
        s.anchor_index = w + seq_len - 1;
        s.history.assign(f.target.begin() + static_cast<std::ptrdiff_t>(w),
                         f.target.begin() + static_cast<std::ptrdiff_t>(w + seq_len));
        s.exo_window.assign(f.exogenous.begin() + static_cast<std::ptrdiff_t>(w * ncol),
                            f.exogenous.begin() + static_cast<std::ptrdiff_t>((w + seq_len) * ncol));
        for (std::size_t k = 0; k < horizons.size(); ++k) {
            const double y = f.target[s.anchor_index + static_cast<std::size_t>(horizons[k])];
            s.raw_targets[k] = y;
            s.targets[k] = y;  // standardization happens later
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// chronological splits with access counters
// ---------------------------------------------------------------------------

struct SplitSpec {
    std::array<double, 3> ratios{0.65, 0.15, 0.20};
};

// Non-owning view over one split; reads bump the split's access counter so
// tests can assert that training never touches the test partition.
class SampleView {
public:
    SampleView(const WindowSample* p, std::size_t n, std::atomic<std::uint64_t>* hits)
        : p_(p), n_(n), hits_(hits) {}

    const WindowSample& operator[](std::size_t i) const {
        hits_->fetch_add(1, std::memory_order_relaxed);
        return p_[i];
    }
    std::size_t size() const { return n_; }
    bool empty() const { return n_ == 0; }

private:
    const WindowSample* p_;
    std::size_t n_;
    std::atomic<std::uint64_t>* hits_;
};

struct Splits {
    std::vector<WindowSample> samples;  // ordered by anchor_index
    std::size_t n_train = 0, n_val = 0, n_test = 0;

    std::shared_ptr<std::atomic<std::uint64_t>> train_hits = std::make_shared<std::atomic<std::uint64_t>>(0);
    std::shared_ptr<std::atomic<std::uint64_t>> val_hits = std::make_shared<std::atomic<std::uint64_t>>(0);
    std::shared_ptr<std::atomic<std::uint64_t>> test_hits = std::make_shared<std::atomic<std::uint64_t>>(0);

    SampleView train() const { return {samples.data(), n_train, train_hits.get()}; }
    SampleView val() const { return {samples.data() + n_train, n_val, val_hits.get()}; }
    SampleView test() const { return {samples.data() + n_train + n_val, n_test, test_hits.get()}; }

    std::span<WindowSample> mutable_train() {
        train_hits->fetch_add(n_train, std::memory_order_relaxed);
        return {samples.data(), n_train};
    }
    std::span<WindowSample> mutable_val() {
        val_hits->fetch_add(n_val, std::memory_order_relaxed);
        return {samples.data() + n_train, n_val};
    }

    void reset_counters() {
        train_hits->store(0);
        val_hits->store(0);
        test_hits->store(0);
    }
};

// Floor arithmetic on train/test with the remainder to validation; every
// split is kept non-empty (N=3 -> 1/1/1).
inline Splits chronological_split(std::vector<WindowSample> samples, const SplitSpec& spec = {}) {
    const std::size_t n = samples.size();
    if (n < 3) fail(ErrorKind::Sizing, "split requires at least 3 samples, have " + std::to_string(n));
    // integer percent arithmetic avoids fp flooring artifacts at exact multiples
    const auto pct = [&](double r) { return static_cast<std::size_t>(std::llround(r * 100.0)); };
    const std::size_t train = std::max<std::size_t>(1, n * pct(spec.ratios[0]) / 100);
    const std::size_t test = std::max<std::size_t>(1, n * pct(spec.ratios[2]) / 100);
    if (train + test >= n) fail(ErrorKind::Sizing, "split ratios leave no validation samples for N=" + std::to_string(n));

    Splits s;
    s.samples = std::move(samples);
    s.n_train = train;
    s.n_test = test;
    s.n_val = n - train - test;
    return s;
}

// ---------------------------------------------------------------------------
// per-horizon target standardization (train statistics only)
// ---------------------------------------------------------------------------

struct Standardizer {
    std::array<double, 6> mean{};
    std::array<double, 6> stdev{};

    double standardize(std::size_t k, double v) const { return (v - mean[k]) / stdev[k]; }
    double destandardize(std::size_t k, double v) const { return v * stdev[k] + mean[k]; }
};

inline Standardizer fit_standardizer(const SampleView& train) {
    if (train.empty()) fail(ErrorKind::Contract, "fit_standardizer: empty training split");
    Standardizer s;
    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
        for (std::size_t k = 0; k < 6; ++k) s.mean[k] += train[i].raw_targets[k];
    for (auto& m : s.mean) m *= inv_n;
    for (std::size_t i = 0; i < train.size(); ++i)
        for (std::size_t k = 0; k < 6; ++k) {
            const double d = train[i].raw_targets[k] - s.mean[k];
            s.stdev[k] += d * d;
        }
    for (std::size_t k = 0; k < 6; ++k) {
        s.stdev[k] = std::sqrt(s.stdev[k] * inv_n);
        if (s.stdev[k] < kVarianceFloor) {
            std::fprintf(stderr, "semf: warning: horizon %d has near-zero target variance; std clamped\n",
                         kHorizons[k]);
            s.stdev[k] = kVarianceFloor;
        }
    }
    return s;
}

inline void apply_standardizer(std::span<WindowSample> samples, const Standardizer& s) {
    for (auto& w : samples)
        for (std::size_t k = 0; k < 6; ++k) w.targets[k] = s.standardize(k, w.raw_targets[k]);
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

// Generator constants are public so tests can recompute the noise-free target
// analytically from the emitted exogenous columns. Each driver term is a
// moving average of a lagged driver column over a broad lag band; the band's
// smallest lag exceeds the longest horizon, so every value a forecast needs
// is already inside the input window.
struct SynthParams {
    double base_level = 100.0;
    double trend_per_day = 1e-4;
    double sin_amp1 = 1.0, sin_period1 = 18.0;
    double sin_amp2 = 1.4, sin_period2 = 60.0;
    std::array<std::size_t, 3> driver_columns{3, 8, 9};  // dxy, vix, lme_index
    std::array<int, 3> driver_lags{46, 56, 66};          // band centers
    std::array<int, 3> driver_ma_halfwidths{8, 10, 8};
    std::array<double, 3> driver_weights{4.4, 1.8, 0.095};
};

struct SynthColumn {
    const char* name;
    double mean;
    double phi;
    double sigma;
};

inline const std::array<SynthColumn, 10>& synth_columns() {
    static const std::array<SynthColumn, 10> cols{{
        {"us10y", 2.5, 0.95, 0.10},
        {"us2y", 1.8, 0.95, 0.10},
        {"us3m", 1.2, 0.94, 0.08},
        {"dxy", 95.0, 0.80, 0.6},
        {"usdcny", 6.8, 0.95, 0.05},
        {"usdjpy", 110.0, 0.95, 1.5},
        {"usdkrw", 1150.0, 0.95, 15.0},
        {"sp500", 3000.0, 0.96, 40.0},
        {"vix", 18.0, 0.82, 1.5},
        {"lme_index", 3200.0, 0.80, 28.0},
    }};
    return cols;
}

struct SynthConfig {
    std::uint64_t seed = 7;
    std::size_t n_days = 3339;
    double noise_scale = 0.5;
    double gap_fraction = 0.02;
    SynthParams params{};
};

inline constexpr std::size_t kSynthMinDays = 160;

// drawn quantities surfaced for analytic recomputation in tests
struct SynthInfo {
    double phase1 = 0.0;
    double phase2 = 0.0;
};

// de-meaned moving average of driver column i of p, centered at t - lag_i
inline double synth_driver_term(const AlignedFrame& f, const SynthParams& p, std::size_t i, std::size_t t) {
    const std::size_t col = p.driver_columns[i];
    const double col_mean = synth_columns()[col].mean;
    const int lag = p.driver_lags[i];
    const int h = p.driver_ma_halfwidths[i];
    double acc = 0.0;
    for (int k = -h; k <= h; ++k) {
        const long src = static_cast<long>(t) - lag + k;
        const std::size_t clamped = src < 0 ? 0 : static_cast<std::size_t>(src);
        acc += f.exo_at(std::min(clamped, f.rows() - 1), col) - col_mean;
    }
    return acc / static_cast<double>(2 * h + 1);
}

// deterministic per seed; target carries a mild trend, two sinusoids, lagged
// contributions from three exogenous drivers, and iid noise
inline AlignedFrame synthesize_dataset(const SynthConfig& cfg, SynthInfo* info = nullptr) {
    if (cfg.n_days < kSynthMinDays)
        fail(ErrorKind::Sizing, "synthetic dataset needs at least " + std::to_string(kSynthMinDays) + " days, got " +
                                    std::to_string(cfg.n_days));
    Rng rng(cfg.seed);
    const auto& cols = synth_columns();
    const SynthParams& p = cfg.params;
    const std::size_t T = cfg.n_days;

    const double phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (info) *info = {phase1, phase2};

    AlignedFrame f;
    f.dates.resize(T);
    const std::int64_t start = days_from_civil(2013, 4, 1);
    for (std::size_t t = 0; t < T; ++t) f.dates[t] = Date{start + static_cast<std::int64_t>(t)};

    f.column_names.reserve(cols.size());
    for (const auto& c : cols) f.column_names.emplace_back(c.name);
    f.exogenous.assign(T * cols.size(), 0.0);
    for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto& c = cols[j];
        const double stat_sd = c.sigma / std::sqrt(1.0 - c.phi * c.phi);
        double z = c.mean + stat_sd * rng.normal();
        for (std::size_t t = 0; t < T; ++t) {
            f.exo_at(t, j) = z;
            z = c.mean + c.phi * (z - c.mean) + c.sigma * rng.normal();
        }
    }

    f.target.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double td = static_cast<double>(t);
        double y = p.base_level + p.trend_per_day * td;
        y += p.sin_amp1 * std::sin(2.0 * std::numbers::pi * td / p.sin_period1 + phase1);
        y += p.sin_amp2 * std::sin(2.0 * std::numbers::pi * td / p.sin_period2 + phase2);
        for (std::size_t i = 0; i < p.driver_columns.size(); ++i)
            y += p.driver_weights[i] * synth_driver_term(f, p, i, t);
        y += cfg.noise_scale * rng.normal();
        f.target[t] = y;
    }

    if (cfg.gap_fraction > 0.0) {
        for (std::size_t t = 0; t < T; ++t) {
            if (rng.uniform() < cfg.gap_fraction) f.target[t] = kGap;
            for (std::size_t j = 0; j < cols.size(); ++j)
                if (rng.uniform() < cfg.gap_fraction) f.exo_at(t, j) = kGap;
        }
    }
    return f;
}

inline AlignedFrame synthesize_dataset(std::uint64_t seed, std::size_t n_days) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_days = n_days;
    return synthesize_dataset(cfg);
}

}  // namespace semf
