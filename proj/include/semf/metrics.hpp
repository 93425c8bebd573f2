#pragma once

// Forecast metrics: RMSE, RMAE, MAPE (stored as fractions), R^2, computed
// per horizon and then averaged. R^2 is undefined when the target variance
// is zero; that propagates as an empty optional, never as a silent 0 or 1.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "semf/data.hpp"
#include "semf/encoders.hpp"
#include "semf/error.hpp"
#include "semf/model.hpp"

namespace semf {

inline constexpr double kDenominatorFloor = 1e-8;

inline double rmse(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty()) fail(ErrorKind::Contract, "rmse: need equal non-empty inputs");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

// mean |error| relative to the mean |level|
inline double rmae(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty()) fail(ErrorKind::Contract, "rmae: need equal non-empty inputs");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += std::abs(y[i] - yhat[i]);
        den += std::abs(y[i]);
    }
    return (num / static_cast<double>(y.size())) / std::max(den / static_cast<double>(y.size()), kDenominatorFloor);
}

// fraction, not percent; display layers may multiply by 100
inline double mape(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty()) fail(ErrorKind::Contract, "mape: need equal non-empty inputs");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]) / std::max(std::abs(y[i]), kDenominatorFloor);
    return s / static_cast<double>(y.size());
}

inline std::optional<double> r2(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.size() < 2) fail(ErrorKind::Contract, "r2: need equal inputs of length >= 2");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

struct HorizonMetrics {
    double rmse = 0.0;
    double rmae = 0.0;
    double mape = 0.0;
    std::optional<double> r2;
};

struct MetricsReport {
    std::array<HorizonMetrics, 6> per_horizon{};
    HorizonMetrics averaged{};
    std::size_t n_samples = 0;
};

inline MetricsReport build_report(const std::array<std::vector<double>, 6>& truth,
                                  const std::array<std::vector<double>, 6>& pred) {
    MetricsReport rep;
    rep.n_samples = truth[0].size();
    bool any_undefined = false;
    for (std::size_t k = 0; k < 6; ++k) {
        auto& h = rep.per_horizon[k];
        h.rmse = rmse(truth[k], pred[k]);
        h.rmae = rmae(truth[k], pred[k]);
        h.mape = mape(truth[k], pred[k]);
        h.r2 = truth[k].size() >= 2 ? r2(truth[k], pred[k]) : std::nullopt;
        rep.averaged.rmse += h.rmse / 6.0;
        rep.averaged.rmae += h.rmae / 6.0;
        rep.averaged.mape += h.mape / 6.0;
        if (!h.r2) any_undefined = true;
    }
    if (!any_undefined) {
        double s = 0.0;
        for (const auto& h : rep.per_horizon) s += *h.r2;
        rep.averaged.r2 = s / 6.0;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// model inputs prepared once per split (spectrogram + patchify are by far the
// most expensive part of a forward pass and carry no parameters)
// ---------------------------------------------------------------------------

struct PreparedSample {
    std::vector<double> tokens;      // n_patches x patch_dim
    std::vector<double> exo;         // seq_len x n_exo
    std::array<double, 6> targets{};      // standardized (as currently stored on the sample)
    std::array<double, 6> raw_targets{};
    double last_value = 0.0;
};

inline PreparedSample prepare_sample(const WindowSample& w, const ModelConfig& cfg) {
    PreparedSample p;
    Spectrogram img = make_image(cfg.image_kind, w.history, cfg.n_scales);
    if (cfg.image_cols() != img.width) img = nn::crop_to_patch_multiple(img, cfg.patch_size);
    p.tokens = nn::patchify(img, cfg.patch_size);
    p.exo = w.exo_window;
    p.targets = w.targets;
    p.raw_targets = w.raw_targets;
    p.last_value = w.history.back();
    return p;
}

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SEMF_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Parallel over samples with deterministic output order.
inline std::vector<PreparedSample> prepare_inputs(const SampleView& view, const ModelConfig& cfg,
                                                  std::size_t n_threads = 0) {
    std::vector<PreparedSample> out(view.size());
    const std::size_t threads = std::min(resolve_threads(n_threads), std::max<std::size_t>(view.size(), 1));
    if (threads <= 1 || view.size() < 2) {
        for (std::size_t i = 0; i < view.size(); ++i) out[i] = prepare_sample(view[i], cfg);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < view.size(); i += threads) out[i] = prepare_sample(view[i], cfg);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
    return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Predictions are destandardized back to price units before any metric.
inline MetricsReport evaluate(const SemfModel& model, const std::vector<PreparedSample>& split,
                              const Standardizer& st) {
    if (split.empty()) fail(ErrorKind::Contract, "evaluate: empty split");
    std::array<std::vector<double>, 6> truth, pred;
    for (auto& v : truth) v.resize(split.size());
    for (auto& v : pred) v.resize(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto p = model.predict(split[i].tokens, split[i].exo, &st);
        for (std::size_t k = 0; k < 6; ++k) {
            truth[k][i] = split[i].raw_targets[k];
            pred[k][i] = p.destandardized[k];
        }
    }
    return build_report(truth, pred);
}

inline MetricsReport evaluate(const SemfModel& model, const SampleView& view, const Standardizer& st,
                              std::size_t n_threads = 0) {
    return evaluate(model, prepare_inputs(view, model.config(), n_threads), st);
}

// naive yardstick: every horizon predicts the window's last observed value
inline MetricsReport persistence_baseline(const SampleView& view) {
    if (view.empty()) fail(ErrorKind::Contract, "persistence_baseline: empty split");
    std::array<std::vector<double>, 6> truth, pred;
    for (auto& v : truth) v.resize(view.size());
    for (auto& v : pred) v.resize(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
        const WindowSample& w = view[i];
        for (std::size_t k = 0; k < 6; ++k) {
            truth[k][i] = w.raw_targets[k];
            pred[k][i] = w.history.back();
        }
    }
    return build_report(truth, pred);
}

// ---------------------------------------------------------------------------
// report output: CSV rows `horizon,rmse,rmae,mape,r2` plus an `avg` row, and
// an aligned text table
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_g(*v) : "NA"; }

inline std::string fmt_f(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%10.4f", v);
    return buf;
}

inline std::string fmt_f_opt(const std::optional<double>& v) {
    if (!v) return "        NA";
    return fmt_f(*v);
}

}  // namespace detail

inline std::string report_csv(const MetricsReport& rep) {
    std::string out = "horizon,rmse,rmae,mape,r2\n";
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& h = rep.per_horizon[k];
        out += std::to_string(kHorizons[k]) + "," + detail::fmt_g(h.rmse) + "," + detail::fmt_g(h.rmae) + "," +
               detail::fmt_g(h.mape) + "," + detail::fmt_opt(h.r2) + "\n";
    }
    out += "avg," + detail::fmt_g(rep.averaged.rmse) + "," + detail::fmt_g(rep.averaged.rmae) + "," +
           detail::fmt_g(rep.averaged.mape) + "," + detail::fmt_opt(rep.averaged.r2) + "\n";
    return out;
}

inline std::string report_table(const MetricsReport& rep) {
    std::string out = "horizon       rmse       rmae       mape         r2\n";
    char line[160];
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& h = rep.per_horizon[k];
        std::snprintf(line, sizeof(line), "%7d %s %s %s %s\n", kHorizons[k], detail::fmt_f(h.rmse).c_str(),
                      detail::fmt_f(h.rmae).c_str(), detail::fmt_f(h.mape).c_str(), detail::fmt_f_opt(h.r2).c_str());
        out += line;
    }
    std::snprintf(line, sizeof(line), "%7s %s %s %s %s\n", "avg", detail::fmt_f(rep.averaged.rmse).c_str(),
                  detail::fmt_f(rep.averaged.rmae).c_str(), detail::fmt_f(rep.averaged.mape).c_str(),
                  detail::fmt_f_opt(rep.averaged.r2).c_str());
    out += line;
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os << content;
    if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

}  // namespace semf
