#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "climatellm/fmoe.hpp"
#include "climatellm/grid.hpp"
#include "climatellm/layers.hpp"
#include "climatellm/model.hpp"
#include "climatellm/prompt.hpp"
#include "climatellm/spectral.hpp"

namespace climatellm {

// Decoder-only transformer over [prompt tokens ; timestep tokens].
// Blocks: backbone.input<v>.{weight, bias}, backbone.time_embed [L x D],
// backbone.layer<l>.{ln1, attn, ln2, mlp}, head.ln, head.{weight, bias}.
//
// Spectra enter the learned layers in orthonormal units (divided by
// sqrt(MN)) and the head emits coefficients in the same units;
// project_to_spectrum multiplies back by sqrt(MN).

/// Factor applied to unnormalized spectra before the learned layers.
double spectral_input_scale(const ModelConfig& config);

/// Attention admissibility for K prompt tokens followed by L timestep tokens:
/// prompts see prompts (and timesteps when `prefix_bidirectional`),
/// timesteps see every prompt and causally earlier timesteps.
std::vector<unsigned char> sequence_mask(std::size_t prompts, std::size_t steps,
                                         bool prefix_bidirectional);

enum class Segment { prompt, timestep };

struct TokenSequence {
    Matrix<double> tokens;     // (K + T) x D
    std::size_t prompts = 0;   // leading prompt rows

    std::vector<Segment> segments() const;
};

struct TokenizeResult {
    Tensor3 per_variable;     // C x T x D, input of meta_fusion
    Matrix<double> tokens;    // T x D, mean over variables plus time encoding
};

/// Flattens each variable's retained-bin latent channels, projects them with
/// that variable's input map, and averages variables into one token per step.
TokenizeResult tokenize_per_variable(const std::vector<LatentSpectrum>& steps,
                                     const Model<double>& model);

struct BackboneResult {
    Matrix<double> hidden;                        // (K + T) x D
    std::vector<Matrix<double>> attention;        // layer-major, then head
};

BackboneResult backbone_forward(const TokenSequence& tokens, const Model<double>& model);

/// Final row of `hidden` -> LayerNorm -> head -> retained bins of every
/// variable (zero elsewhere), Hermitian-symmetrized.
SpectralField project_to_spectrum(const Matrix<double>& hidden, const Model<double>& model,
                                  const GridField& like);

/// Linear map from head coefficients to the normalized field (V x MN), plus
/// its adjoint for backpropagation.
class SpectralReadout {
public:
    explicit SpectralReadout(const ModelConfig& config);

    std::size_t input_size() const { return 2 * vars_ * layout_.size(); }
    std::size_t output_size() const { return vars_ * plane_; }

    /// Head coefficients -> Hermitian spectrum (unnormalized convention).
    void to_spectrum(std::span<const double> head, std::vector<double>& re,
                     std::vector<double>& im) const;
    void forward(std::span<const double> head, std::span<double> field) const;
    /// Accumulates the adjoint applied to `grad_field` into `grad_head`.
    void adjoint(std::span<const double> grad_field, std::span<double> grad_head) const;

private:
    std::size_t vars_, lat_, lon_, plane_;
    bool use_fft_;
    double scale_;
    ModeLayout layout_;
};

/// Model input for one history window.
template <typename T>
struct WindowInput {
    NormStats stats;
    Matrix<T> bins;               // rows (t, v, bin) of scaled (re, im)
    std::vector<T> gate_features; // L x B
    std::size_t steps = 0;
};

/// Normalizes the window with its own statistics and transforms each step.
/// Every span holds one V x M x N field.
template <typename T>
WindowInput<T> prepare_window(const ModelConfig& config,
                              const std::vector<std::span<const double>>& steps);

namespace graph {

template <typename T>
struct BackboneVars {
    struct Layer {
        LayerNormVars<T> ln1, ln2;
        AttentionVars<T> attn;
        MlpVars<T> mlp;
    };
    std::vector<Var<T>> input_weight, input_bias;
    Var<T> time_embed;
    std::vector<Layer> layers;
    LayerNormVars<T> head_ln;
    Var<T> head_weight, head_bias;
};

template <typename T>
struct ModelVars {
    FmoeVars<T> fmoe;
    PromptVars<T> prompt;
    BackboneVars<T> backbone;
};

template <typename T>
BackboneVars<T> bind_backbone(Tape<T>& tape, const Model<T>& model, GradPtr<T> grad) {
    const ModelConfig& c = model.config;
    const ParamStore<T>& s = model.params;
    BackboneVars<T> b;
    for (std::size_t v = 0; v < c.n_vars; ++v) {
        const std::string p = "backbone.input" + std::to_string(v);
        b.input_weight.push_back(bind_param(tape, s, p + ".weight", grad));
        b.input_bias.push_back(bind_param(tape, s, p + ".bias", grad));
    }
    b.time_embed = bind_param(tape, s, "backbone.time_embed", grad);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "backbone.layer" + std::to_string(l);
        b.layers.push_back({bind_layer_norm(tape, s, p + ".ln1", grad),
                            bind_layer_norm(tape, s, p + ".ln2", grad),
                            bind_attention(tape, s, p + ".attn", grad, c.n_heads),
                            bind_mlp(tape, s, p + ".mlp", grad)});
    }
    b.head_ln = bind_layer_norm(tape, s, "head.ln", grad);
    b.head_weight = bind_param(tape, s, "head.weight", grad);
    b.head_bias = bind_param(tape, s, "head.bias", grad);
    return b;
}

template <typename T>
ModelVars<T> bind_model(Tape<T>& tape, const Model<T>& model, GradPtr<T> grad) {
    ModelVars<T> v;
    v.fmoe = bind_fmoe(tape, model.params, model.config.experts, grad);
    if (model.config.use_prompt) {
        v.prompt = bind_prompt(tape, model.params, model.config.prompt_heads, grad);
    }
    v.backbone = bind_backbone(tape, model, grad);
    return v;
}

template <typename T>
struct Tokens {
    Var<T> per_variable;  // (C * T) x D, variable-major
    Var<T> tokens;        // T x D
};

/// latent: rows (t, v, bin) of width d.
template <typename T>
Tokens<T> tokenize(Tape<T>& tape, Var<T> latent, std::size_t steps, const ModelConfig& c,
                   const BackboneVars<T>& b) {
    const std::size_t nb = c.n_bins(), d = tape.cols(latent);
    if (tape.rows(latent) != steps * c.n_vars * nb) {
        throw ShapeError("tokenize: latent rows do not match steps x vars x retained bins");
    }
    if (b.input_weight.empty() || tape.rows(b.input_weight[0]) != nb * d) {
        throw ShapeError("tokenize: input projection expects " +
                         std::to_string(tape.rows(b.input_weight.at(0))) +
                         " flattened channels, got " + std::to_string(nb * d));
    }
    if (steps > tape.rows(b.time_embed)) throw ShapeError("tokenize: more steps than time table");
    Var<T> flat = tape.reshape(latent, steps * c.n_vars, nb * d);
    std::vector<Var<T>> per_var;
    for (std::size_t v = 0; v < c.n_vars; ++v) {
        std::vector<std::size_t> rows(steps);
        for (std::size_t t = 0; t < steps; ++t) rows[t] = t * c.n_vars + v;
        per_var.push_back(tape.linear(tape.gather_rows(flat, rows), b.input_weight[v],
                                      b.input_bias[v]));
    }
    Var<T> table = steps == tape.rows(b.time_embed) ? b.time_embed
                                                    : tape.slice_rows(b.time_embed, 0, steps);
    Var<T> mean = c.n_vars == 1 ? per_var.front() : tape.mean_of(per_var);
    return {tape.concat_rows(per_var), tape.add(mean, table)};
}

template <typename T>
Var<T> backbone(Tape<T>& tape, Var<T> x, std::size_t prompts, const ModelConfig& c,
                const BackboneVars<T>& b, std::vector<Var<T>>* attention_weights = nullptr) {
    const std::size_t steps = tape.rows(x) - prompts;
    const auto mask = sequence_mask(prompts, steps, c.prefix_bidirectional);
    const T eps = static_cast<T>(c.ln_eps);
    Var<T> h = x;
    for (const auto& layer : b.layers) {
        Var<T> a = layer_norm(tape, h, layer.ln1, eps);
        h = tape.add(h, attention(tape, a, a, layer.attn, &mask, attention_weights));
        h = tape.add(h, mlp(tape, layer_norm(tape, h, layer.ln2, eps), layer.mlp));
    }
    return h;
}

/// Last hidden row -> LayerNorm -> linear head, 1 x (2 V nb).
template <typename T>
Var<T> head(Tape<T>& tape, Var<T> hidden, const ModelConfig& c, const BackboneVars<T>& b) {
    Var<T> last = tape.slice_rows(hidden, tape.rows(hidden) - 1, 1);
    Var<T> normed = layer_norm(tape, last, b.head_ln, static_cast<T>(c.ln_eps));
    return tape.linear(normed, b.head_weight, b.head_bias);
}

/// Head coefficients -> normalized field, V x MN.
template <typename T>
Var<T> readout(Tape<T>& tape, Var<T> coeffs, const ModelConfig& c) {
    auto map = std::make_shared<SpectralReadout>(c);
    if (tape.size(coeffs) != map->input_size()) throw ShapeError("readout: head width mismatch");
    const std::size_t in_n = map->input_size(), out_n = map->output_size();
    auto forward = [map, in_n, out_n](const T* in, T* out) {
        std::vector<double> a(in, in + in_n), y(out_n);
        map->forward(a, y);
        for (std::size_t i = 0; i < out_n; ++i) out[i] = static_cast<T>(y[i]);
    };
    auto adjoint = [map, in_n, out_n](const T* g, T* gin) {
        std::vector<double> a(g, g + out_n), y(in_n, 0.0);
        map->adjoint(a, y);
        for (std::size_t i = 0; i < in_n; ++i) gin[i] += static_cast<T>(y[i]);
    };
    return tape.linear_map(coeffs, c.n_vars, c.n_lat * c.n_lon, forward, adjoint);
}

template <typename T>
struct ForwardTrace {
    Var<T> latent, gates, per_variable, tokens, prompts, sequence, hidden, head;
    std::vector<Var<T>> prompt_attention;
    std::vector<Var<T>> backbone_attention;
};

/// Whole forward pass for one window; returns the normalized prediction
/// V x MN.
template <typename T>
Var<T> forward_window(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& c,
                      const WindowInput<T>& in, ForwardTrace<T>* trace = nullptr) {
    const std::size_t nb = c.n_bins();
    Var<T> bins = tape.constant(in.bins);
    Var<T> z = lift(tape, bins, vars.fmoe);
    Var<T> latent;
    if (c.use_moe) {
        std::vector<Var<T>> gates;
        for (std::size_t t = 0; t < in.steps; ++t) {
            std::vector<T> f(in.gate_features.begin() + t * c.bands,
                             in.gate_features.begin() + (t + 1) * c.bands);
            gates.push_back(gate(tape, f, vars.fmoe));
        }
        Var<T> stacked = in.steps == 1 ? gates.front() : tape.concat_rows(gates);
        const auto band = radial_band_index(c.n_lat, c.n_lon, default_band_edges(c.bands));
        const ModeLayout layout = c.layout();
        std::vector<std::size_t> rows(tape.rows(z));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::size_t t = i / (c.n_vars * nb);
            rows[i] = t * c.bands + band[layout.flat[i % nb]];
        }
        latent = mix(tape, z, stacked, rows, vars.fmoe);
        if (trace) trace->gates = stacked;
    } else {
        latent = expert(tape, z, vars.fmoe.experts.at(0));
    }
    Tokens<T> tok = tokenize(tape, latent, in.steps, c, vars.backbone);
    Var<T> sequence = tok.tokens;
    std::size_t prompts = 0;
    if (c.use_prompt) {
        Var<T> p = meta_fusion(tape, vars.prompt, tok.per_variable, c.n_vars, in.steps,
                               static_cast<T>(c.ln_eps), trace ? &trace->prompt_attention : nullptr,
                               trace ? &trace->prompt_attention : nullptr);
        sequence = tape.concat_rows({p, tok.tokens});
        prompts = c.prompt_tokens;
        if (trace) trace->prompts = p;
    }
    Var<T> hidden = backbone(tape, sequence, prompts, c, vars.backbone,
                             trace ? &trace->backbone_attention : nullptr);
    Var<T> coeffs = head(tape, hidden, c, vars.backbone);
    if (trace) {
        trace->latent = latent;
        trace->per_variable = tok.per_variable;
        trace->tokens = tok.tokens;
        trace->sequence = sequence;
        trace->hidden = hidden;
        trace->head = coeffs;
    }
    return readout(tape, coeffs, c);
}

}  // namespace graph

/// One-step forecast: normalize, transform, mix experts, tokenize, prompt,
/// transformer, project, invert, de-normalize.
template <typename T>
GridField forecast(const HistoryWindow& history, const Model<T>& model);

/// Autoregressive forecasts for 1..steps ahead, feeding each prediction back
/// into the window.
template <typename T>
std::vector<GridField> rollout(const HistoryWindow& history, const Model<T>& model,
                               std::size_t steps);

/// Normalized-space prediction for prepared input (V x MN, row-major).
template <typename T>
std::vector<double> predict_normalized(const WindowInput<T>& input, const Model<T>& model);

/// Denormalized prediction written into `out` (V x M x N).
template <typename T>
void predict_window(const std::vector<std::span<const double>>& steps, const Model<T>& model,
                    std::span<double> out);

}  // namespace climatellm
