#pragma once

// Ablation harness: one axis at a time, every cell trained on the same frame
// with the same seed so differences reflect architecture. Cells may run in
// parallel processes of the grid; SEMF_THREADS caps the worker count and the
// per-sample reductions keep results independent of it.

#include <filesystem>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "semf/data.hpp"
#include "semf/error.hpp"
#include "semf/metrics.hpp"
#include "semf/model.hpp"
#include "semf/training.hpp"

namespace semf {

enum class AblationAxis { Image, ExoEncoder, Fusion, PatchScale, SeqLen };

inline const char* to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::Image: return "image";
        case AblationAxis::ExoEncoder: return "exo_encoder";
        case AblationAxis::Fusion: return "fusion";
        case AblationAxis::PatchScale: return "patch_scale";
        case AblationAxis::SeqLen: return "seq_len";
    }
    return "?";
}

inline AblationAxis ablation_axis_from(const std::string& s) {
    if (s == "image") return AblationAxis::Image;
    if (s == "exo_encoder") return AblationAxis::ExoEncoder;
    if (s == "fusion") return AblationAxis::Fusion;
    if (s == "patch_scale") return AblationAxis::PatchScale;
    if (s == "seq_len") return AblationAxis::SeqLen;
    fail(ErrorKind::Usage,
         "unknown ablation axis '" + s + "' (valid: image, exo_encoder, fusion, patch_scale, seq_len)");
}

struct AblationCell {
    std::string label;
    TrainConfig config;
};

inline std::vector<AblationCell> ablation_cells(AblationAxis axis, const TrainConfig& base) {
    std::vector<AblationCell> cells;
    switch (axis) {
        case AblationAxis::Image:
            for (ImageKind k : {ImageKind::Line, ImageKind::Stft, ImageKind::Cmor, ImageKind::Morlet}) {
                TrainConfig c = base;
                c.model.image_kind = k;
                cells.push_back({to_string(k), c});
            }
            break;
        case AblationAxis::ExoEncoder:
            for (ExoEncoderKind k : {ExoEncoderKind::Mlp, ExoEncoderKind::Transformer}) {
                TrainConfig c = base;
                c.model.exo_kind = k;
                cells.push_back({to_string(k), c});
            }
            break;
        case AblationAxis::Fusion:
            for (nn::FusionKind k : {nn::FusionKind::Single, nn::FusionKind::Bi}) {
                TrainConfig c = base;
                c.model.fusion_kind = k;
                cells.push_back({to_string(k), c});
            }
            break;
        case AblationAxis::PatchScale: {
            constexpr std::pair<std::size_t, std::size_t> grid[] = {{8, 64}, {16, 64}, {8, 128}, {16, 128}};
            for (auto [patch, scales] : grid) {
                TrainConfig c = base;
                c.model.patch_size = patch;
                c.model.n_scales = scales;
                cells.push_back({std::to_string(patch) + "x" + std::to_string(scales), c});
            }
            break;
        }
        case AblationAxis::SeqLen:
            for (std::size_t len : {30, 60, 90, 120}) {
                TrainConfig c = base;
                c.model.seq_len = len;
                cells.push_back({std::to_string(len), c});
            }
            break;
    }
    return cells;
}

// ---------------------------------------------------------------------------
// end-to-end pipeline shared by `train` and each ablation cell, so a cell's
// numbers are reproducible by an independent train+eval run
// ---------------------------------------------------------------------------

struct PipelineResult {
    TrainResult trained;
    MetricsReport test_report;
};

inline PipelineResult run_training_pipeline(TrainConfig cfg, const AlignedFrame& frame) {
    cfg.model.n_exo_vars = frame.n_exo();
    Splits splits = chronological_split(make_windows(frame, cfg.model.seq_len));
    TrainResult trained = train(cfg, splits);
    const auto prepared_test = prepare_inputs(splits.test(), cfg.model, resolve_threads(cfg.threads));
    MetricsReport report = evaluate(trained.model, prepared_test, trained.standardizer);
    return {std::move(trained), report};
}

struct AblationRow {
    std::string label;
    MetricsReport report;
};

struct AblationResult {
    AblationAxis axis;
    std::vector<AblationRow> rows;
};

inline AblationResult run_ablation(AblationAxis axis, const TrainConfig& base, const AlignedFrame& frame,
                                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    const auto cells = ablation_cells(axis, base);
    const std::string axis_dir = out_dir + "/" + to_string(axis);
    fs::create_directories(axis_dir);

    std::vector<AblationRow> rows(cells.size());
    std::vector<PipelineResult> results(cells.size());

    const std::size_t cap = resolve_threads(base.threads);
    const std::size_t outer = std::min(cap, cells.size());
    const std::size_t inner = outer > 1 ? std::max<std::size_t>(1, cap / outer) : cap;

    auto run_cell = [&](std::size_t i) {
        TrainConfig c = cells[i].config;
        c.threads = inner;
        results[i] = run_training_pipeline(c, frame);
    };
    if (outer <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(outer);
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < outer; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) run_cell(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    for (std::size_t i = 0; i < cells.size(); ++i) {
        rows[i] = {cells[i].label, results[i].test_report};
        const std::string cell_dir = axis_dir + "/" + cells[i].label;
        fs::create_directories(cell_dir);
        save_model_checkpoint(cell_dir + "/checkpoint.bin", results[i].trained.model,
                              results[i].trained.standardizer);
        write_text_file(cell_dir + "/training_log.csv", training_log_csv(results[i].trained.log));
        write_text_file(cell_dir + "/metrics_test.csv", report_csv(results[i].test_report));
        write_text_file(cell_dir + "/metrics_test.txt", report_table(results[i].test_report));
    }
    return {axis, std::move(rows)};
}

// Row layout mirrors the corresponding comparison tables: a label column
// (split into patch/scale for that axis) plus averaged RMSE/RMAE/MAPE.
inline std::string ablation_table(const AblationResult& res) {
    std::string out;
    char line[160];
    if (res.axis == AblationAxis::PatchScale) {
        out += "patch  scale       rmse       rmae       mape\n";
        for (const auto& row : res.rows) {
            const auto x = row.label.find('x');
            std::snprintf(line, sizeof(line), "%5s %6s %s %s %s\n", row.label.substr(0, x).c_str(),
                          row.label.substr(x + 1).c_str(), detail::fmt_f(row.report.averaged.rmse).c_str(),
                          detail::fmt_f(row.report.averaged.rmae).c_str(),
                          detail::fmt_f(row.report.averaged.mape).c_str());
            out += line;
        }
        return out;
    }
    std::snprintf(line, sizeof(line), "%-12s       rmse       rmae       mape\n", to_string(res.axis));
    out += line;
    for (const auto& row : res.rows) {
        std::snprintf(line, sizeof(line), "%-12s %s %s %s\n", row.label.c_str(),
                      detail::fmt_f(row.report.averaged.rmse).c_str(), detail::fmt_f(row.report.averaged.rmae).c_str(),
                      detail::fmt_f(row.report.averaged.mape).c_str());
        out += line;
    }
    return out;
}

inline std::string ablation_csv(const AblationResult& res) {
    std::string out = std::string(to_string(res.axis)) + ",rmse,rmae,mape,r2\n";
    for (const auto& row : res.rows) {
        out += row.label + "," + detail::fmt_g(row.report.averaged.rmse) + "," +
               detail::fmt_g(row.report.averaged.rmae) + "," + detail::fmt_g(row.report.averaged.mape) + "," +
               detail::fmt_opt(row.report.averaged.r2) + "\n";
    }
    return out;
}

}  // namespace semf
