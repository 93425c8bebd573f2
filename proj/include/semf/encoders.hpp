#pragma once

// The two modality encoders: a patch-attention encoder over spectrogram
// images (CLS summary + patch sequence) and a RevIN-normalized attention
// encoder over exogenous windows (mean-pooled summary + token sequence).
// An MLP exogenous variant exists for comparison runs.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "semf/data.hpp"
#include "semf/error.hpp"
#include "semf/nn.hpp"
#include "semf/rng.hpp"
#include "semf/tensor.hpp"
#include "semf/timefreq.hpp"

namespace semf::nn {

// ---------------------------------------------------------------------------
// RevIN: per-variable instance standardization over the window axis, with
// stats retained for exact inversion.
// ---------------------------------------------------------------------------

struct RevinStats {
    std::vector<double> mean;
    std::vector<double> stdev;
};

inline std::pair<std::vector<double>, RevinStats> revin_normalize(std::span<const double> window,
                                                                  std::size_t length, std::size_t n_vars) {
    if (window.size() != length * n_vars)
        fail(ErrorKind::Shape, "revin: window size " + std::to_string(window.size()) + " != " +
                                   std::to_string(length) + "x" + std::to_string(n_vars));
    RevinStats st;
    st.mean.assign(n_vars, 0.0);
    st.stdev.assign(n_vars, 0.0);
    const double inv_l = 1.0 / static_cast<double>(length);
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t j = 0; j < n_vars; ++j) st.mean[j] += window[t * n_vars + j];
    for (auto& m : st.mean) m *= inv_l;
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t j = 0; j < n_vars; ++j) {
            const double d = window[t * n_vars + j] - st.mean[j];
            st.stdev[j] += d * d;
        }
    for (auto& s : st.stdev) s = std::max(std::sqrt(s * inv_l), kVarianceFloor);

    std::vector<double> out(window.size());
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t j = 0; j < n_vars; ++j)
            out[t * n_vars + j] = (window[t * n_vars + j] - st.mean[j]) / st.stdev[j];
    return {std::move(out), std::move(st)};
}

inline std::vector<double> revin_denormalize(std::span<const double> normalized, std::size_t length,
                                             std::size_t n_vars, const RevinStats& st) {
    std::vector<double> out(normalized.size());
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t j = 0; j < n_vars; ++j)
            out[t * n_vars + j] = normalized[t * n_vars + j] * st.stdev[j] + st.mean[j];
    return out;
}

// ---------------------------------------------------------------------------
// patch tokens
// ---------------------------------------------------------------------------

// Non-overlapping patches in row-major patch order, row-major flattening
// inside each patch. Both image dimensions must be divisible by patch_size.
inline std::vector<double> patchify(const Spectrogram& img, std::size_t patch_size) {
    if (patch_size == 0 || img.n_scales % patch_size != 0 || img.width % patch_size != 0)
        fail(ErrorKind::Shape, "patchify: image " + std::to_string(img.n_scales) + "x" + std::to_string(img.width) +
                                   " not divisible by patch size " + std::to_string(patch_size));
    const std::size_t gr = img.n_scales / patch_size, gc = img.width / patch_size;
    std::vector<double> tokens(gr * gc * patch_size * patch_size);
    std::size_t out = 0;
    for (std::size_t pr = 0; pr < gr; ++pr)
        for (std::size_t pc = 0; pc < gc; ++pc)
            for (std::size_t r = 0; r < patch_size; ++r)
                for (std::size_t c = 0; c < patch_size; ++c)
                    tokens[out++] = img.at(pr * patch_size + r, pc * patch_size + c);
    return tokens;
}

// Drops the oldest columns so the width becomes a patch-size multiple; used
// before patchify when the window length is not divisible (e.g. patch 16 on
// a 120-wide image).
inline Spectrogram crop_to_patch_multiple(const Spectrogram& img, std::size_t patch_size) {
    const std::size_t keep = (img.width / patch_size) * patch_size;
    if (keep == 0) fail(ErrorKind::Shape, "crop: image narrower than one patch");
    if (keep == img.width) return img;
    Spectrogram out;
    out.n_scales = img.n_scales;
    out.width = keep;
    out.kind = img.kind;
    out.scales = img.scales;
    out.values.resize(img.n_scales * keep);
    const std::size_t skip = img.width - keep;
    for (std::size_t r = 0; r < img.n_scales; ++r)
        for (std::size_t c = 0; c < keep; ++c) out.values[r * keep + c] = img.at(r, c + skip);
    return out;
}

// ---------------------------------------------------------------------------
// spectrogram encoder
// ---------------------------------------------------------------------------

struct VitConfig {
    std::size_t patch_size = 8;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::pair<std::size_t, std::size_t> image_shape{128, 120};  // (n_scales, width)
    double dropout = 0.1;

    std::size_t grid_rows() const { return image_shape.first / patch_size; }
    std::size_t grid_cols() const { return image_shape.second / patch_size; }
    std::size_t n_patches() const { return grid_rows() * grid_cols(); }
    std::size_t patch_dim() const { return patch_size * patch_size; }

    void validate() const {
        if (patch_size == 0 || image_shape.first % patch_size != 0 || image_shape.second % patch_size != 0)
            fail(ErrorKind::Shape, "vit: patch size " + std::to_string(patch_size) + " must divide image " +
                                       std::to_string(image_shape.first) + "x" + std::to_string(image_shape.second));
        if (d_model % n_heads != 0) fail(ErrorKind::Shape, "vit: d_model must be divisible by n_heads");
        if (n_layers == 0) fail(ErrorKind::Contract, "vit: need at least one layer");
    }
};

struct EncoderOutput {
    ad::Tensor summary;  // 1 x d_model
    ad::Tensor tokens;   // sequence x d_model
};

class VitEncoder {
public:
    VitEncoder() = default;
    VitEncoder(ParamStore& ps, const std::string& prefix, const VitConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        patch_proj_ = Linear(ps, prefix + ".patch_proj", cfg_.patch_dim(), cfg_.d_model, rng);
        cls_ = ps.add(prefix + ".cls", {1, cfg_.d_model}, Init::TokenNormal, rng);
        pos_ = ps.add(prefix + ".pos", {cfg_.n_patches() + 1, cfg_.d_model}, Init::TokenNormal, rng);
        for (std::size_t l = 0; l < cfg_.n_layers; ++l)
            blocks_.emplace_back(ps, prefix + ".block" + std::to_string(l), cfg_.d_model, cfg_.n_heads, cfg_.dropout,
                                 rng);
        final_ln_ = LayerNorm(ps, prefix + ".final_ln", cfg_.d_model, rng);
    }

    // tokens: n_patches x patch_dim
    EncoderOutput forward(const ad::Tensor& tokens, bool train, Rng& rng,
                          std::vector<ad::Tensor>* probs_sink = nullptr) const {
        if (tokens.rank() != 2 || tokens.shape()[0] != cfg_.n_patches() || tokens.shape()[1] != cfg_.patch_dim())
            fail(ErrorKind::Shape, "vit: expected " + std::to_string(cfg_.n_patches()) + "x" +
                                       std::to_string(cfg_.patch_dim()) + " tokens, got " + ad::shape_str(tokens.shape()));
        ad::Tensor x = ad::concat({cls_, patch_proj_(tokens)}, 0);
        x = ad::add(x, pos_);
        for (const auto& b : blocks_) x = b(x, train, rng, probs_sink);
        x = final_ln_(x);
        return {ad::slice_rows(x, 0, 1), ad::slice_rows(x, 1, cfg_.n_patches())};
    }

    const VitConfig& config() const { return cfg_; }

private:
    VitConfig cfg_;
    Linear patch_proj_;
    ad::Tensor cls_, pos_;
    std::vector<EncoderBlock> blocks_;
    LayerNorm final_ln_;
};

// ---------------------------------------------------------------------------
// exogenous encoders
// ---------------------------------------------------------------------------

struct ExoConfig {
    std::size_t n_vars = 10;
    std::size_t seq_len = 120;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    double dropout = 0.1;
    bool revin_affine = false;
    bool positional = true;

    void validate() const {
        if (d_model % n_heads != 0) fail(ErrorKind::Shape, "exo: d_model must be divisible by n_heads");
        if (n_vars == 0 || seq_len == 0) fail(ErrorKind::Sizing, "exo: need n_vars >= 1 and seq_len >= 1");
    }
};

class ExoEncoder {
public:
    ExoEncoder() = default;
    ExoEncoder(ParamStore& ps, const std::string& prefix, const ExoConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        in_proj_ = Linear(ps, prefix + ".in_proj", cfg_.n_vars, cfg_.d_model, rng);
        if (cfg_.revin_affine) {
            affine_scale_ = ps.add(prefix + ".revin_scale", {cfg_.n_vars}, Init::Zeros, rng);
            for (auto& v : affine_scale_.data()) v = 1.0;
            affine_shift_ = ps.add(prefix + ".revin_shift", {cfg_.n_vars}, Init::Zeros, rng);
        }
        for (std::size_t l = 0; l < cfg_.n_layers; ++l)
            blocks_.emplace_back(ps, prefix + ".block" + std::to_string(l), cfg_.d_model, cfg_.n_heads, cfg_.dropout,
                                 rng);
        final_ln_ = LayerNorm(ps, prefix + ".final_ln", cfg_.d_model, rng);
        pe_ = sinusoidal_positions(cfg_.seq_len, cfg_.d_model);
    }

    // window: raw L x n_vars values; RevIN happens inside
    EncoderOutput forward(std::span<const double> window, bool train, Rng& rng,
                          std::vector<ad::Tensor>* probs_sink = nullptr, RevinStats* stats_out = nullptr) const {
        auto [norm, stats] = revin_normalize(window, cfg_.seq_len, cfg_.n_vars);
        if (stats_out) *stats_out = stats;
        ad::Tensor x = ad::Tensor::from({cfg_.seq_len, cfg_.n_vars}, std::move(norm));
        if (cfg_.revin_affine) x = ad::add(ad::mul(x, affine_scale_), affine_shift_);
        x = in_proj_(x);
        if (cfg_.positional) x = ad::add(x, pe_);
        for (const auto& b : blocks_) x = b(x, train, rng, probs_sink);
        x = final_ln_(x);
        return {ad::mean_rows(x), x};
    }

    const ExoConfig& config() const { return cfg_; }

private:
    ExoConfig cfg_;
    Linear in_proj_;
    ad::Tensor affine_scale_, affine_shift_;
    std::vector<EncoderBlock> blocks_;
    LayerNorm final_ln_;
    ad::Tensor pe_;
};

// Flattened two-layer MLP for the summary; a shared per-time-step MLP
// produces the token sequence so the fusion interface stays identical.
class MlpExoEncoder {
public:
    MlpExoEncoder() = default;
    MlpExoEncoder(ParamStore& ps, const std::string& prefix, const ExoConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t hidden = 2 * cfg_.d_model;
        flat1_ = Linear(ps, prefix + ".flat1", cfg_.seq_len * cfg_.n_vars, hidden, rng);
        flat2_ = Linear(ps, prefix + ".flat2", hidden, cfg_.d_model, rng);
        tok1_ = Linear(ps, prefix + ".tok1", cfg_.n_vars, hidden, rng);
        tok2_ = Linear(ps, prefix + ".tok2", hidden, cfg_.d_model, rng);
    }

    EncoderOutput forward(std::span<const double> window, bool /*train*/, Rng& /*rng*/,
                          std::vector<ad::Tensor>* /*probs_sink*/ = nullptr, RevinStats* stats_out = nullptr) const {
        auto [norm, stats] = revin_normalize(window, cfg_.seq_len, cfg_.n_vars);
        if (stats_out) *stats_out = stats;
        ad::Tensor x = ad::Tensor::from({cfg_.seq_len, cfg_.n_vars}, std::move(norm));
        const ad::Tensor flat = ad::reshape(x, {1, cfg_.seq_len * cfg_.n_vars});
        const ad::Tensor summary = flat2_(ad::gelu(flat1_(flat)));
        const ad::Tensor tokens = tok2_(ad::gelu(tok1_(x)));
        return {summary, tokens};
    }

    const ExoConfig& config() const { return cfg_; }

private:
    ExoConfig cfg_;
    Linear flat1_, flat2_, tok1_, tok2_;
};

}  // namespace semf::nn
