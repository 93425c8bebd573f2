#pragma once

// The full forecaster: spectrogram encoder + exogenous encoder + fusion +
// shared multi-horizon head, owned parameter registry, and checkpoint glue.
// Checkpoints store the model configuration and the fitted target
// standardizer alongside the weights so a file is self-describing.

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "semf/data.hpp"
#include "semf/encoders.hpp"
#include "semf/error.hpp"
#include "semf/fusion.hpp"
#include "semf/nn.hpp"
#include "semf/timefreq.hpp"

namespace semf {

enum class ExoEncoderKind { Mlp, Transformer };

inline const char* to_string(ExoEncoderKind k) { return k == ExoEncoderKind::Mlp ? "mlp" : "transformer"; }

inline ExoEncoderKind exo_kind_from(const std::string& s) {
    if (s == "mlp") return ExoEncoderKind::Mlp;
    if (s == "transformer") return ExoEncoderKind::Transformer;
    fail(ErrorKind::Usage, "unknown exogenous encoder kind '" + s + "' (valid: mlp, transformer)");
}

struct ModelConfig {
    std::size_t seq_len = 120;
    std::size_t n_scales = 128;
    std::size_t patch_size = 8;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t n_exo_vars = 10;
    ImageKind image_kind = ImageKind::Morlet;
    ExoEncoderKind exo_kind = ExoEncoderKind::Transformer;
    nn::FusionKind fusion_kind = nn::FusionKind::Bi;
    double dropout = 0.1;
    bool revin_affine = false;

    std::size_t head_hidden() const { return 2 * d_model; }
    // width actually fed to the patch grid (oldest columns cropped when
    // seq_len is not a patch multiple)
    std::size_t image_cols() const { return (seq_len / patch_size) * patch_size; }

    nn::VitConfig vit() const {
        nn::VitConfig v;
        v.patch_size = patch_size;
        v.d_model = d_model;
        v.n_heads = n_heads;
        v.n_layers = n_layers;
        v.image_shape = {n_scales, image_cols()};
        v.dropout = dropout;
        return v;
    }

    nn::ExoConfig exo() const {
        nn::ExoConfig e;
        e.n_vars = n_exo_vars;
        e.seq_len = seq_len;
        e.d_model = d_model;
        e.n_heads = n_heads;
        e.n_layers = n_layers;
        e.dropout = dropout;
        e.revin_affine = revin_affine;
        return e;
    }

    void validate() const {
        if (seq_len < 2) fail(ErrorKind::Sizing, "config: seq_len must be >= 2");
        vit().validate();
        exo().validate();
    }
};

class SemfModel {
public:
    SemfModel() = default;  // empty placeholder; build with the config ctor

    SemfModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(Rng::mix(init_seed, 0x5EAF));
        vit_ = nn::VitEncoder(params_, "vit", cfg_.vit(), rng);
        if (cfg_.exo_kind == ExoEncoderKind::Transformer)
            exo_tf_.emplace(params_, "exo", cfg_.exo(), rng);
        else
            exo_mlp_.emplace(params_, "exo", cfg_.exo(), rng);
        if (cfg_.fusion_kind == nn::FusionKind::Bi)
            fuse_bi_.emplace(params_, "fusion", cfg_.d_model, cfg_.n_heads, rng);
        else
            fuse_single_.emplace(params_, "fusion", cfg_.d_model, cfg_.n_heads, rng);
        head_ = nn::PredictionHead(params_, "head", cfg_.d_model, cfg_.head_hidden(), cfg_.dropout, rng);
    }

    SemfModel(const SemfModel&) = delete;
    SemfModel& operator=(const SemfModel&) = delete;
    SemfModel(SemfModel&&) = default;
    SemfModel& operator=(SemfModel&&) = default;

    // patch_tokens: n_patches x patch_dim, exo_window: seq_len x n_exo_vars
    // (raw units). Returns the 1x6 standardized-scale prediction.
    ad::Tensor forward(std::span<const double> patch_tokens, std::span<const double> exo_window, bool train,
                       Rng& rng, std::vector<ad::Tensor>* probs_sink = nullptr) const {
        const auto vit_cfg = cfg_.vit();
        ad::Tensor tokens = ad::Tensor::from({vit_cfg.n_patches(), vit_cfg.patch_dim()},
                                             {patch_tokens.begin(), patch_tokens.end()});
        const nn::EncoderOutput spec = vit_.forward(tokens, train, rng, probs_sink);
        const nn::EncoderOutput exo = exo_tf_ ? exo_tf_->forward(exo_window, train, rng, probs_sink)
                                              : exo_mlp_->forward(exo_window, train, rng, probs_sink);
        const nn::FusionOutput fused =
            fuse_bi_ ? fuse_bi_->forward(spec.summary, spec.tokens, exo.summary, exo.tokens, probs_sink)
                     : fuse_single_->forward(spec.summary, spec.tokens, exo.summary, exo.tokens, probs_sink);
        return head_.forward(fused.fused, train, rng);
    }

    nn::HorizonPrediction predict(std::span<const double> patch_tokens, std::span<const double> exo_window,
                                  const Standardizer* standardizer) const {
        ad::NoGradGuard ng;
        Rng rng(0);  // eval path never draws
        return nn::predict_horizons(forward(patch_tokens, exo_window, /*train=*/false, rng), standardizer);
    }

    const ModelConfig& config() const { return cfg_; }
    const nn::ParamStore& params() const { return params_; }
    std::vector<ad::Tensor> trainable() const { return params_.tensors(); }

    const nn::VitEncoder& vit() const { return vit_; }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> s;
        s.reserve(params_.items().size());
        for (const auto& [name, t] : params_.items()) s.push_back(t.data());
        return s;
    }

    void restore(const std::vector<std::vector<double>>& snap) {
        if (snap.size() != params_.items().size()) fail(ErrorKind::Contract, "restore: parameter count mismatch");
        for (std::size_t i = 0; i < snap.size(); ++i) {
            auto t = params_.items()[i].second;
            if (t.numel() != snap[i].size()) fail(ErrorKind::Contract, "restore: parameter size mismatch");
            t.data() = snap[i];
        }
    }

private:
    ModelConfig cfg_;
    nn::ParamStore params_;
    nn::VitEncoder vit_;
    std::optional<nn::ExoEncoder> exo_tf_;
    std::optional<nn::MlpExoEncoder> exo_mlp_;
    std::optional<nn::BiCaFusion> fuse_bi_;
    std::optional<nn::SingleCaFusion> fuse_single_;
    nn::PredictionHead head_;
};

// ---------------------------------------------------------------------------
// checkpoint glue
// ---------------------------------------------------------------------------

namespace detail {

inline ad::Tensor meta_scalar(double v) { return ad::Tensor::scalar(v); }

}  // namespace detail

inline void save_model_checkpoint(const std::string& path, const SemfModel& model, const Standardizer& st) {
    std::vector<std::pair<std::string, ad::Tensor>> entries;
    const ModelConfig& c = model.config();
    entries.emplace_back("meta.seq_len", detail::meta_scalar(double(c.seq_len)));
    entries.emplace_back("meta.n_scales", detail::meta_scalar(double(c.n_scales)));
    entries.emplace_back("meta.patch_size", detail::meta_scalar(double(c.patch_size)));
    entries.emplace_back("meta.d_model", detail::meta_scalar(double(c.d_model)));
    entries.emplace_back("meta.n_heads", detail::meta_scalar(double(c.n_heads)));
    entries.emplace_back("meta.n_layers", detail::meta_scalar(double(c.n_layers)));
    entries.emplace_back("meta.n_exo_vars", detail::meta_scalar(double(c.n_exo_vars)));
    entries.emplace_back("meta.image_kind", detail::meta_scalar(double(static_cast<int>(c.image_kind))));
    entries.emplace_back("meta.exo_kind", detail::meta_scalar(double(static_cast<int>(c.exo_kind))));
    entries.emplace_back("meta.fusion_kind", detail::meta_scalar(double(static_cast<int>(c.fusion_kind))));
    entries.emplace_back("meta.dropout", detail::meta_scalar(c.dropout));
    entries.emplace_back("meta.revin_affine", detail::meta_scalar(c.revin_affine ? 1.0 : 0.0));
    entries.emplace_back("standardizer.mean", ad::Tensor::from({6}, {st.mean.begin(), st.mean.end()}));
    entries.emplace_back("standardizer.std", ad::Tensor::from({6}, {st.stdev.begin(), st.stdev.end()}));
    for (const auto& [name, t] : model.params().items()) entries.emplace_back(name, t);
    ad::save_checkpoint(path, entries);
}

struct LoadedModel {
    SemfModel model;
    Standardizer standardizer;
};

inline LoadedModel load_model_checkpoint(const std::string& path) {
    const auto entries = ad::load_checkpoint(path);
    auto get = [&](const std::string& name) -> const ad::Tensor& {
        for (const auto& [n, t] : entries)
            if (n == name) return t;
        fail(ErrorKind::Format, "checkpoint missing entry '" + name + "'");
    };

    ModelConfig c;
    c.seq_len = std::size_t(get("meta.seq_len").item());
    c.n_scales = std::size_t(get("meta.n_scales").item());
    c.patch_size = std::size_t(get("meta.patch_size").item());
    c.d_model = std::size_t(get("meta.d_model").item());
    c.n_heads = std::size_t(get("meta.n_heads").item());
    c.n_layers = std::size_t(get("meta.n_layers").item());
    c.n_exo_vars = std::size_t(get("meta.n_exo_vars").item());
    c.image_kind = static_cast<ImageKind>(int(get("meta.image_kind").item()));
    c.exo_kind = static_cast<ExoEncoderKind>(int(get("meta.exo_kind").item()));
    c.fusion_kind = static_cast<nn::FusionKind>(int(get("meta.fusion_kind").item()));
    c.dropout = get("meta.dropout").item();
    c.revin_affine = get("meta.revin_affine").item() != 0.0;

    Standardizer st;
    const auto& mean = get("standardizer.mean").data();
    const auto& stdev = get("standardizer.std").data();
    for (std::size_t k = 0; k < 6; ++k) {
        st.mean[k] = mean[k];
        st.stdev[k] = stdev[k];
    }

    SemfModel model(c, /*init_seed=*/0);
    for (const auto& [name, t] : model.params().items()) {
        const ad::Tensor& src = get(name);
        if (src.numel() != t.numel())
            fail(ErrorKind::Format, "checkpoint entry '" + name + "' has wrong size");
        auto dst = t;
        dst.data() = src.data();
    }
    return {std::move(model), st};
}

}  // namespace semf
