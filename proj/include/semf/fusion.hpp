#pragma once

// Cross-attention fusion of the two modality representations plus the shared
// multi-horizon prediction head. Bi-directional fusion runs both query
// assignments and concatenates; the single-direction variant keeps only the
// spectrogram-as-query path.

#include <array>
#include <string>
#include <vector>

#include "semf/data.hpp"
#include "semf/error.hpp"
#include "semf/nn.hpp"

namespace semf::nn {

enum class FusionKind { Single, Bi };

inline const char* to_string(FusionKind k) { return k == FusionKind::Single ? "single" : "bi"; }

inline FusionKind fusion_kind_from(const std::string& s) {
    if (s == "single") return FusionKind::Single;
    if (s == "bi") return FusionKind::Bi;
    fail(ErrorKind::Usage, "unknown fusion kind '" + s + "' (valid: single, bi)");
}

// One cross-attention read: a single query vector attends over a sequence;
// the residual applies to the query, followed by layer normalization.
struct CrossAttend {
    MultiHeadAttention mha;
    LayerNorm ln;

    CrossAttend() = default;
    CrossAttend(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng)
        : mha(ps, prefix + ".mha", d, heads, rng), ln(ps, prefix + ".ln", d, rng) {}

    ad::Tensor operator()(const ad::Tensor& query, const ad::Tensor& seq,
                          std::vector<ad::Tensor>* probs_sink = nullptr) const {
        if (!seq.defined() || seq.rows() == 0) fail(ErrorKind::Contract, "cross_attend: empty key/value sequence");
        if (query.cols() != seq.cols())
            fail(ErrorKind::Shape, "cross_attend: width mismatch " + ad::shape_str(query.shape()) + " vs " +
                                       ad::shape_str(seq.shape()));
        return ln(ad::add(query, mha(query, seq, probs_sink)));
    }
};

struct FusionOutput {
    ad::Tensor fused;        // 1 x d_model
    ad::Tensor spec_to_exo;  // direction A: spectrogram summary querying exogenous tokens
    ad::Tensor exo_to_spec;  // direction B: exogenous summary querying patch tokens (bi only)
};

class BiCaFusion {
public:
    BiCaFusion() = default;
    BiCaFusion(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng)
        : a_dir_(ps, prefix + ".spec_q", d, heads, rng),
          b_dir_(ps, prefix + ".exo_q", d, heads, rng),
          combine_(ps, prefix + ".combine", 2 * d, d, rng) {}

    FusionOutput forward(const ad::Tensor& cls_vec, const ad::Tensor& patch_seq, const ad::Tensor& exo_summary,
                         const ad::Tensor& exo_seq, std::vector<ad::Tensor>* probs_sink = nullptr) const {
        const ad::Tensor a = a_dir_(cls_vec, exo_seq, probs_sink);
        const ad::Tensor b = b_dir_(exo_summary, patch_seq, probs_sink);
        return {combine_(ad::concat({a, b}, 1)), a, b};
    }

private:
    CrossAttend a_dir_, b_dir_;
    Linear combine_;
};

class SingleCaFusion {
public:
    SingleCaFusion() = default;
    SingleCaFusion(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng)
        : a_dir_(ps, prefix + ".spec_q", d, heads, rng), proj_(ps, prefix + ".proj", d, d, rng) {}

    FusionOutput forward(const ad::Tensor& cls_vec, const ad::Tensor& /*patch_seq*/, const ad::Tensor& /*exo_summary*/,
                         const ad::Tensor& exo_seq, std::vector<ad::Tensor>* probs_sink = nullptr) const {
        const ad::Tensor a = a_dir_(cls_vec, exo_seq, probs_sink);
        return {proj_(a), a, {}};
    }

private:
    CrossAttend a_dir_;
    Linear proj_;
};

// LayerNorm -> Linear -> GELU -> Dropout -> Linear(6); all horizons come out
// of one forward pass.
class PredictionHead {
public:
    PredictionHead() = default;
    PredictionHead(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t hidden, double dropout,
                   Rng& rng)
        : ln_(ps, prefix + ".ln", d, rng),
          fc1_(ps, prefix + ".fc1", d, hidden, rng),
          fc2_(ps, prefix + ".fc2", hidden, kHorizons.size(), rng),
          dropout_(dropout) {}

    ad::Tensor forward(const ad::Tensor& fused, bool train, Rng& rng) const {
        return fc2_(ad::dropout(ad::gelu(fc1_(ln_(fused))), dropout_, train, rng));
    }

private:
    LayerNorm ln_;
    Linear fc1_, fc2_;
    double dropout_ = 0.0;
};

struct HorizonPrediction {
    std::array<double, 6> standardized{};
    std::array<double, 6> destandardized{};
};

inline HorizonPrediction predict_horizons(const ad::Tensor& head_out, const Standardizer* standardizer) {
    if (!standardizer) fail(ErrorKind::Contract, "predict_horizons: no standardizer available");
    if (head_out.numel() != kHorizons.size())
        fail(ErrorKind::Shape, "predict_horizons: expected " + std::to_string(kHorizons.size()) + " outputs, got " +
                                   ad::shape_str(head_out.shape()));
    HorizonPrediction p;
    for (std::size_t k = 0; k < kHorizons.size(); ++k) {
        p.standardized[k] = head_out.data()[k];
        p.destandardized[k] = standardizer->destandardize(k, p.standardized[k]);
    }
    return p;
}

}  // namespace semf::nn
