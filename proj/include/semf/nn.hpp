#pragma once

// Layers shared by both modality encoders and the fusion block. Parameters
// are registered in a ParamStore so the optimizer and checkpoint writer see
// one flat named list.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "semf/error.hpp"
#include "semf/rng.hpp"
#include "semf/tensor.hpp"

namespace semf::nn {

enum class Init { XavierUniform, Zeros, TokenNormal };

class ParamStore {
public:
    ad::Tensor add(const std::string& name, ad::Shape shape, Init init, Rng& rng) {
        ad::Tensor t = ad::Tensor::leaf(shape, /*requires_grad=*/true);
        switch (init) {
            case Init::Zeros:
                break;
            case Init::XavierUniform: {
                // fan_in x fan_out for rank-2, else fan = numel of last dim
                const double fan_in = shape.size() == 2 ? double(shape[0]) : double(shape.back());
                const double fan_out = double(shape.back());
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& v : t.data()) v = rng.uniform(-limit, limit);
                break;
            }
            case Init::TokenNormal:
                for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
                break;
        }
        items_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, ad::Tensor>>& items() const { return items_; }

    std::vector<ad::Tensor> tensors() const {
        std::vector<ad::Tensor> out;
        out.reserve(items_.size());
        for (const auto& [name, t] : items_) out.push_back(t);
        return out;
    }

    ad::Tensor find(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        fail(ErrorKind::Contract, "no parameter named " + name);
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, ad::Tensor>> items_;
};

struct Linear {
    ad::Tensor w;  // in x out
    ad::Tensor b;  // out; may be undefined (bias-free)

    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
           bool with_bias = true) {
        w = ps.add(prefix + ".w", {in, out}, Init::XavierUniform, rng);
        if (with_bias) b = ps.add(prefix + ".b", {out}, Init::Zeros, rng);
    }

    ad::Tensor operator()(const ad::Tensor& x) const {
        const ad::Tensor y = ad::matmul(x, w);
        return b.defined() ? ad::add(y, b) : y;
    }
};

struct LayerNorm {
    ad::Tensor gain;
    ad::Tensor bias;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, std::size_t dim, Rng& rng) {
        gain = ps.add(prefix + ".gain", {dim}, Init::Zeros, rng);
        for (auto& v : gain.data()) v = 1.0;
        bias = ps.add(prefix + ".bias", {dim}, Init::Zeros, rng);
    }

    ad::Tensor operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gain, bias); }
};

// Scaled dot-product attention; queries may come from a different sequence
// than keys/values (cross-attention) or the same one (self-attention).
// When probs_sink is given, the per-head probability matrices are appended.
struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    std::size_t n_heads = 1;
    std::size_t d_model = 0;

    MultiHeadAttention() = default;
    // The key projection is bias-free: a uniform key shift adds a constant to
    // every score row, which softmax cancels, so such a bias cannot learn.
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng)
        : wq(ps, prefix + ".wq", d, d, rng),
          wk(ps, prefix + ".wk", d, d, rng, /*with_bias=*/false),
          wv(ps, prefix + ".wv", d, d, rng),
          wo(ps, prefix + ".wo", d, d, rng),
          n_heads(heads),
          d_model(d) {
        if (d % heads != 0) fail(ErrorKind::Shape, "attention: d_model must be divisible by n_heads");
    }

    ad::Tensor operator()(const ad::Tensor& query_seq, const ad::Tensor& kv_seq,
                          std::vector<ad::Tensor>* probs_sink = nullptr) const {
        if (kv_seq.rows() == 0) fail(ErrorKind::Contract, "attention over an empty sequence");
        if (query_seq.cols() != d_model || kv_seq.cols() != d_model)
            fail(ErrorKind::Shape, "attention: width mismatch, query " + ad::shape_str(query_seq.shape()) +
                                       " kv " + ad::shape_str(kv_seq.shape()) + " d_model " + std::to_string(d_model));
        const ad::Tensor q = wq(query_seq), k = wk(kv_seq), v = wv(kv_seq);
        const std::size_t dh = d_model / n_heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<ad::Tensor> heads;
        heads.reserve(n_heads);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const ad::Tensor qh = ad::slice_cols(q, h * dh, dh);
            const ad::Tensor kh = ad::slice_cols(k, h * dh, dh);
            const ad::Tensor vh = ad::slice_cols(v, h * dh, dh);
            const ad::Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
            const ad::Tensor probs = ad::softmax_lastdim(scores);
            if (probs_sink) probs_sink->push_back(probs);
            heads.push_back(ad::matmul(probs, vh));
        }
        return wo(ad::concat(heads, 1));
    }
};

struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng)
        : fc1(ps, prefix + ".fc1", d, hidden, rng), fc2(ps, prefix + ".fc2", hidden, d, rng) {}

    ad::Tensor operator()(const ad::Tensor& x) const { return fc2(ad::gelu(fc1(x))); }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + ff(ln(x)).
struct EncoderBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ff;
    double dropout_p = 0.0;

    EncoderBlock() = default;
    EncoderBlock(ParamStore& ps, const std::string& prefix, std::size_t d, std::size_t heads, double dropout, Rng& rng)
        : ln1(ps, prefix + ".ln1", d, rng),
          ln2(ps, prefix + ".ln2", d, rng),
          attn(ps, prefix + ".attn", d, heads, rng),
          ff(ps, prefix + ".ff", d, 4 * d, rng),
          dropout_p(dropout) {}

    ad::Tensor operator()(const ad::Tensor& x, bool train, Rng& rng,
                          std::vector<ad::Tensor>* probs_sink = nullptr) const {
        const ad::Tensor normed = ln1(x);
        const ad::Tensor h = ad::add(x, ad::dropout(attn(normed, normed, probs_sink), dropout_p, train, rng));
        return ad::add(h, ad::dropout(ff(ln2(h)), dropout_p, train, rng));
    }
};

inline ad::Tensor sinusoidal_positions(std::size_t length, std::size_t d_model) {
    std::vector<double> pe(length * d_model, 0.0);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double angle = double(pos) / std::pow(10000.0, double(i) / double(d_model));
            pe[pos * d_model + i] = std::sin(angle);
            if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(angle);
        }
    }
    return ad::Tensor::from({length, d_model}, std::move(pe));
}

}  // namespace semf::nn
