#include "climatellm/fmoe.hpp"

#include "climatellm/errors.hpp"

namespace climatellm {

std::vector<double> band_log_energy(std::span<const double> re, std::span<const double> im,
                                    std::size_t n_vars, const std::vector<std::size_t>& band_index,
                                    std::size_t bands) {
    const std::size_t plane = band_index.size();
    if (re.size() != n_vars * plane || im.size() != re.size()) {
        throw ShapeError("band energy: spectrum size does not match band index");
    }
    std::vector<double> energy(bands, 0.0);
    std::vector<std::size_t> count(bands, 0);
    for (std::size_t v = 0; v < n_vars; ++v) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t b = band_index[i];
            const double r = re[v * plane + i], q = im[v * plane + i];
            energy[b] += r * r + q * q;
            ++count[b];
        }
    }
    std::vector<double> features(bands, 0.0);
    for (std::size_t b = 0; b < bands; ++b) {
        if (count[b] > 0) features[b] = std::log(energy[b] / static_cast<double>(count[b]) + 1e-12);
    }
    return features;
}

namespace {

using graph::Var;

struct Prepared {
    Matrix<double> bins;  // (v, km, kn) rows of (re, im)
    std::vector<std::size_t> band_index;
};

Prepared prepare(const SpectralField& spec, const Model<double>& model) {
    spec.validate();
    Prepared p;
    p.bins = Matrix<double>(spec.re.size(), 2);
    for (std::size_t i = 0; i < spec.re.size(); ++i) {
        p.bins(i, 0) = spec.re[i];
        p.bins(i, 1) = spec.im[i];
    }
    p.band_index = radial_band_index(spec.n_lat(), spec.n_lon(),
                                     default_band_edges(model.config.bands));
    return p;
}

LatentSpectrum to_latent(const SpectralField& spec, const Tape<double>& tape, Var<double> z,
                         std::vector<std::size_t> band_index) {
    LatentSpectrum out;
    out.n_vars = spec.n_vars();
    out.n_lat = spec.n_lat();
    out.n_lon = spec.n_lon();
    out.latent = tape.cols(z);
    auto vals = tape.values(z);
    out.values.assign(vals.begin(), vals.end());
    out.band_index = std::move(band_index);
    return out;
}

}  // namespace

LatentSpectrum lift(const SpectralField& spec, const Model<double>& model) {
    Prepared p = prepare(spec, model);
    Tape<double> tape;
    auto vars = graph::bind_fmoe(tape, model.params, model.config.experts, nullptr);
    Var<double> z = graph::lift(tape, tape.constant(std::move(p.bins)), vars);
    return to_latent(spec, tape, z, std::move(p.band_index));
}

Matrix<double> gate(const SpectralField& spec, const Model<double>& model) {
    spec.validate();
    const auto band_index = radial_band_index(spec.n_lat(), spec.n_lon(),
                                              default_band_edges(model.config.bands));
    const auto features =
        band_log_energy(spec.re, spec.im, spec.n_vars(), band_index, model.config.bands);
    Tape<double> tape;
    auto vars = graph::bind_fmoe(tape, model.params, model.config.experts, nullptr);
    return tape.matrix(graph::gate(tape, features, vars));
}

LatentSpectrum moe_forward(const SpectralField& spec, const Model<double>& model) {
    Prepared p = prepare(spec, model);
    Tape<double> tape;
    auto vars = graph::bind_fmoe(tape, model.params, model.config.experts, nullptr);
    Var<double> z = graph::lift(tape, tape.constant(std::move(p.bins)), vars);
    Var<double> out;
    if (model.config.use_moe) {
        const auto features =
            band_log_energy(spec.re, spec.im, spec.n_vars(), p.band_index, model.config.bands);
        Var<double> gates = graph::gate(tape, features, vars);
        std::vector<std::size_t> rows(tape.rows(z));
        const std::size_t plane = spec.plane_size();
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = p.band_index[i % plane];
        out = graph::mix(tape, z, gates, rows, vars);
    } else {
        out = graph::expert(tape, z, vars.experts.at(0));
    }
    return to_latent(spec, tape, out, std::move(p.band_index));
}

}  // namespace climatellm
