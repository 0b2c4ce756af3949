#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "climatellm/autodiff.hpp"
#include "climatellm/model.hpp"

namespace climatellm::graph {

template <typename T>
using Var = typename Tape<T>::Var;

template <typename T>
struct AttentionVars {
    Var<T> wq, bq, wk, wv, bv, wo, bo;
    std::size_t heads = 1;
};

template <typename T>
struct LayerNormVars {
    Var<T> gamma, beta;
};

template <typename T>
struct MlpVars {
    Var<T> w1, b1, w2, b2;
};

template <typename T>
AttentionVars<T> bind_attention(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix,
                                GradPtr<T> grad, std::size_t heads) {
    auto p = [&](const char* leaf) { return bind_param(tape, store, prefix + "." + leaf, grad); };
    return {p("wq"), p("bq"), p("wk"), p("wv"), p("bv"), p("wo"), p("bo"), heads};
}

template <typename T>
LayerNormVars<T> bind_layer_norm(Tape<T>& tape, const ParamStore<T>& store,
                                 const std::string& prefix, GradPtr<T> grad) {
    return {bind_param(tape, store, prefix + ".gamma", grad),
            bind_param(tape, store, prefix + ".beta", grad)};
}

template <typename T>
MlpVars<T> bind_mlp(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix, GradPtr<T> grad) {
    auto p = [&](const char* leaf) { return bind_param(tape, store, prefix + "." + leaf, grad); };
    return {p("w1"), p("b1"), p("w2"), p("b2")};
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
/// Each head's row-stochastic weight matrix is appended to `weights` when
/// non-null.
template <typename T>
Var<T> attention(Tape<T>& tape, Var<T> queries, Var<T> keys_values, const AttentionVars<T>& p,
                 const std::vector<unsigned char>* mask, std::vector<Var<T>>* weights) {
    const Var<T> q = tape.linear(queries, p.wq, p.bq);
    const Var<T> k = tape.matmul(keys_values, p.wk);
    const Var<T> v = tape.linear(keys_values, p.wv, p.bv);
    const std::size_t width = tape.cols(q);
    if (p.heads == 0 || width % p.heads != 0) {
        throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                         std::to_string(p.heads) + " heads");
    }
    const std::size_t head_dim = width / p.heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
    std::vector<Var<T>> outputs;
    for (std::size_t h = 0; h < p.heads; ++h) {
        Var<T> qh = p.heads == 1 ? q : tape.slice_cols(q, h * head_dim, head_dim);
        Var<T> kh = p.heads == 1 ? k : tape.slice_cols(k, h * head_dim, head_dim);
        Var<T> vh = p.heads == 1 ? v : tape.slice_cols(v, h * head_dim, head_dim);
        Var<T> scores = tape.scale(tape.matmul_bt(qh, kh), inv_sqrt);
        Var<T> probs = tape.softmax_rows(scores, mask);
        if (weights) weights->push_back(probs);
        outputs.push_back(tape.matmul(probs, vh));
    }
    Var<T> merged = p.heads == 1 ? outputs.front() : tape.concat_cols(outputs);
    return tape.linear(merged, p.wo, p.bo);
}

template <typename T>
Var<T> layer_norm(Tape<T>& tape, Var<T> x, const LayerNormVars<T>& p, T eps) {
    return tape.layer_norm(x, p.gamma, p.beta, eps);
}

/// Two-layer perceptron with GELU between the layers.
template <typename T>
Var<T> mlp(Tape<T>& tape, Var<T> x, const MlpVars<T>& p) {
    return tape.linear(tape.gelu(tape.linear(x, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace climatellm::graph
