#pragma once

#include <vector>

#include "climatellm/layers.hpp"
#include "climatellm/model.hpp"

namespace climatellm {

// Meta-fusion prompting. Blocks: prompt.tokens [K x d_model], cross-attention
// sets prompt.attn_t / prompt.attn_c, layer norms prompt.ln_t / prompt.ln_c.

/// Dense C x L x D tensor, row-major.
struct Tensor3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(std::size_t a, std::size_t b, std::size_t c) : d0(a), d1(b), d2(c), data(a * b * c) {}
    double& at(std::size_t i, std::size_t j, std::size_t k) { return data[(i * d1 + j) * d2 + k]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * d1 + j) * d2 + k];
    }
};

/// Mean over the variable axis: [C x L x D] -> [L x D].
Matrix<double> aggregate_variables(const Tensor3& s);

/// Mean over the time axis: [C x L x D] -> [C x D].
Matrix<double> aggregate_time(const Tensor3& s);

struct MetaFusionResult {
    Matrix<double> prompts;                       // K x D
    std::vector<Matrix<double>> temporal_weights; // per head, K x L
    std::vector<Matrix<double>> variable_weights; // per head, K x C
};

/// Prompt tokens attend first over the time aggregate, then over the
/// variable aggregate, each stage with a residual and LayerNorm.
MetaFusionResult meta_fusion(const Model<double>& model, const Tensor3& s);

namespace graph {

template <typename T>
struct PromptVars {
    Var<T> tokens;
    AttentionVars<T> attn_t, attn_c;
    LayerNormVars<T> ln_t, ln_c;
};

template <typename T>
PromptVars<T> bind_prompt(Tape<T>& tape, const ParamStore<T>& store, std::size_t heads, GradPtr<T> grad) {
    return {bind_param(tape, store, "prompt.tokens", grad),
            bind_attention(tape, store, "prompt.attn_t", grad, heads),
            bind_attention(tape, store, "prompt.attn_c", grad, heads),
            bind_layer_norm(tape, store, "prompt.ln_t", grad),
            bind_layer_norm(tape, store, "prompt.ln_c", grad)};
}

/// s holds C blocks of L rows (variable-major). Returns L x D.
template <typename T>
Var<T> aggregate_variables(Tape<T>& tape, Var<T> s, std::size_t vars, std::size_t steps) {
    if (vars == 0 || steps == 0) throw InvalidInput("aggregate over an empty axis");
    if (tape.rows(s) != vars * steps) throw ShapeError("aggregate_variables: row count mismatch");
    if (vars == 1) return s;
    std::vector<Var<T>> slices;
    for (std::size_t c = 0; c < vars; ++c) slices.push_back(tape.slice_rows(s, c * steps, steps));
    return tape.mean_of(slices);
}

/// Returns C x D.
template <typename T>
Var<T> aggregate_time(Tape<T>& tape, Var<T> s, std::size_t vars, std::size_t steps) {
    if (vars == 0 || steps == 0) throw InvalidInput("aggregate over an empty axis");
    if (tape.rows(s) != vars * steps) throw ShapeError("aggregate_time: row count mismatch");
    if (steps == 1) return s;
    std::vector<Var<T>> rows;
    for (std::size_t c = 0; c < vars; ++c) {
        rows.push_back(tape.mean_rows(tape.slice_rows(s, c * steps, steps)));
    }
    return tape.concat_rows(rows);
}

template <typename T>
Var<T> meta_fusion(Tape<T>& tape, const PromptVars<T>& p, Var<T> s, std::size_t vars,
                   std::size_t steps, T ln_eps, std::vector<Var<T>>* temporal_weights = nullptr,
                   std::vector<Var<T>>* variable_weights = nullptr) {
    if (tape.cols(s) != tape.cols(p.tokens)) {
        throw ShapeError("meta_fusion: representation width differs from prompt width");
    }
    Var<T> s_time = aggregate_variables(tape, s, vars, steps);
    Var<T> s_vars = aggregate_time(tape, s, vars, steps);
    Var<T> stage1 = tape.add(attention(tape, p.tokens, s_time, p.attn_t, nullptr, temporal_weights),
                             p.tokens);
    Var<T> p1 = layer_norm(tape, stage1, p.ln_t, ln_eps);
    Var<T> stage2 = tape.add(attention(tape, p1, s_vars, p.attn_c, nullptr, variable_weights), p1);
    return layer_norm(tape, stage2, p.ln_c, ln_eps);
}

}  // namespace graph
}  // namespace climatellm
