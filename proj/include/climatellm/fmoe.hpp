#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "climatellm/layers.hpp"
#include "climatellm/model.hpp"
#include "climatellm/spectral.hpp"

namespace climatellm {

// Frequency-domain mixture of experts. The learnable blocks live in the
// model's parameter store:
//   fmoe.lift.{weight [2 x d], bias [1 x d]}          lift g: (re, im) -> d
//   fmoe.expert<e>.{w1, b1, w2, b2}                   expert f_e: d -> 2d -> d
//   fmoe.gate.{weight, bias} [B x E]                  gate G: band energy -> logits

/// Latent channels of every bin: values[((v * M + km) * N + kn) * d + c].
struct LatentSpectrum {
    std::size_t n_vars = 0;
    std::size_t n_lat = 0;
    std::size_t n_lon = 0;
    std::size_t latent = 0;
    std::vector<double> values;
    std::vector<std::size_t> band_index;  // M x N, radial band of each bin

    double at(std::size_t v, std::size_t km, std::size_t kn, std::size_t c) const {
        return values[((v * n_lat + km) * n_lon + kn) * latent + c];
    }
};

/// log of the mean squared magnitude of every radial band (pooled over
/// variables); empty bands report 0.
std::vector<double> band_log_energy(std::span<const double> re, std::span<const double> im,
                                    std::size_t n_vars, const std::vector<std::size_t>& band_index,
                                    std::size_t bands);

/// Per-bin affine map of (re, im) to the latent channels.
LatentSpectrum lift(const SpectralField& spec, const Model<double>& model);

/// Per-band softmax over experts, B x E.
Matrix<double> gate(const SpectralField& spec, const Model<double>& model);

/// sum_e G_e(S)[band(bin)] * f_e(g(S))[bin]. Honors `use_moe`: when off, only
/// expert 0 is applied with weight 1.
LatentSpectrum moe_forward(const SpectralField& spec, const Model<double>& model);

namespace graph {

template <typename T>
struct ExpertVars {
    Var<T> w1, b1, w2, b2;
};

template <typename T>
struct FmoeVars {
    Var<T> lift_weight, lift_bias;
    std::vector<ExpertVars<T>> experts;
    Var<T> gate_weight, gate_bias;
};

template <typename T>
FmoeVars<T> bind_fmoe(Tape<T>& tape, const ParamStore<T>& store, std::size_t experts, GradPtr<T> grad) {
    FmoeVars<T> v;
    v.lift_weight = bind_param(tape, store, "fmoe.lift.weight", grad);
    v.lift_bias = bind_param(tape, store, "fmoe.lift.bias", grad);
    for (std::size_t e = 0; e < experts; ++e) {
        const std::string p = "fmoe.expert" + std::to_string(e);
        v.experts.push_back({bind_param(tape, store, p + ".w1", grad),
                             bind_param(tape, store, p + ".b1", grad),
                             bind_param(tape, store, p + ".w2", grad),
                             bind_param(tape, store, p + ".b2", grad)});
    }
    v.gate_weight = bind_param(tape, store, "fmoe.gate.weight", grad);
    v.gate_bias = bind_param(tape, store, "fmoe.gate.bias", grad);
    return v;
}

/// bins: n x 2 (re, im) -> n x d.
template <typename T>
Var<T> lift(Tape<T>& tape, Var<T> bins, const FmoeVars<T>& p) {
    if (tape.cols(bins) != 2) throw ShapeError("lift expects (re, im) pairs");
    return tape.linear(bins, p.lift_weight, p.lift_bias);
}

template <typename T>
Var<T> expert(Tape<T>& tape, Var<T> z, const ExpertVars<T>& e) {
    return tape.linear(tape.gelu(tape.linear(z, e.w1, e.b1)), e.w2, e.b2);
}

/// Gate weights B x E from per-band features (length B).
template <typename T>
Var<T> gate(Tape<T>& tape, const std::vector<T>& features, const FmoeVars<T>& p) {
    const std::size_t bands = tape.rows(p.gate_weight);
    if (features.size() != bands) throw ShapeError("gate feature count differs from band count");
    Var<T> f = tape.constant(bands, 1, features);
    Var<T> logits = tape.add(tape.mul_col(p.gate_weight, f), p.gate_bias);
    return tape.softmax_rows(logits);
}

/// Weighted expert sum. `gates` stacks gate matrices (rows = groups of
/// bands); `gate_row[i]` selects the gate row for latent row i.
template <typename T>
Var<T> mix(Tape<T>& tape, Var<T> z, Var<T> gates, const std::vector<std::size_t>& gate_row,
           const FmoeVars<T>& p) {
    if (gate_row.size() != tape.rows(z)) throw ShapeError("one gate row per latent row required");
    Var<T> per_row = tape.gather_rows(gates, gate_row);
    Var<T> total;
    for (std::size_t e = 0; e < p.experts.size(); ++e) {
        Var<T> out = tape.mul_col(expert(tape, z, p.experts[e]), tape.slice_cols(per_row, e, 1));
        total = total.valid() ? tape.add(total, out) : out;
    }
    return total;
}

}  // namespace graph
}  // namespace climatellm
