#include "climatellm/backbone.hpp"

#include <cmath>
#include <deque>

#include "climatellm/errors.hpp"

namespace climatellm {

double spectral_input_scale(const ModelConfig& config) {
    return config.use_fft ? 1.0 / std::sqrt(static_cast<double>(config.n_lat * config.n_lon)) : 1.0;
}

std::vector<unsigned char> sequence_mask(std::size_t prompts, std::size_t steps,
                                         bool prefix_bidirectional) {
    const std::size_t n = prompts + steps;
    std::vector<unsigned char> mask(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            bool ok;
            if (i < prompts) {
                ok = j < prompts || prefix_bidirectional;
            } else {
                ok = j < prompts || j <= i;
            }
            mask[i * n + j] = ok ? 1 : 0;
        }
    }
    return mask;
}

std::vector<Segment> TokenSequence::segments() const {
    std::vector<Segment> s(tokens.rows, Segment::timestep);
    for (std::size_t i = 0; i < prompts && i < s.size(); ++i) s[i] = Segment::prompt;
    return s;
}

// ---------------------------------------------------------------------------

SpectralReadout::SpectralReadout(const ModelConfig& config)
    : vars_(config.n_vars),
      lat_(config.n_lat),
      lon_(config.n_lon),
      plane_(config.n_lat * config.n_lon),
      use_fft_(config.use_fft),
      scale_(config.use_fft ? std::sqrt(static_cast<double>(config.n_lat * config.n_lon)) : 1.0),
      layout_(config.layout()) {}

namespace {

// In-place (S + conj(S[-k])) / 2 on every plane.
void symmetrize_planes(std::vector<cplx>& data, std::size_t vars, std::size_t M, std::size_t N) {
    const std::size_t plane = M * N;
    std::vector<cplx> tmp(plane);
    for (std::size_t v = 0; v < vars; ++v) {
        cplx* p = data.data() + v * plane;
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t mirror = ((M - m) % M) * N + (N - n) % N;
                tmp[m * N + n] = 0.5 * (p[m * N + n] + std::conj(p[mirror]));
            }
        }
        std::copy(tmp.begin(), tmp.end(), p);
    }
}

}  // namespace

void SpectralReadout::to_spectrum(std::span<const double> head, std::vector<double>& re,
                                  std::vector<double>& im) const {
    if (head.size() != input_size()) throw ShapeError("readout: head width mismatch");
    re.assign(vars_ * plane_, 0.0);
    im.assign(vars_ * plane_, 0.0);
    const std::size_t nb = layout_.size();
    if (!use_fft_) {
        for (std::size_t i = 0; i < vars_ * nb; ++i) re[i] = head[2 * i];
        return;
    }
    std::vector<cplx> data(vars_ * plane_);
    for (std::size_t v = 0; v < vars_; ++v) {
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t h = (v * nb + b) * 2;
            data[v * plane_ + layout_.flat[b]] = scale_ * cplx(head[h], head[h + 1]);
        }
    }
    symmetrize_planes(data, vars_, lat_, lon_);
    for (std::size_t i = 0; i < data.size(); ++i) {
        re[i] = data[i].real();
        im[i] = data[i].imag();
    }
}

void SpectralReadout::forward(std::span<const double> head, std::span<double> field) const {
    if (field.size() != output_size()) throw ShapeError("readout: output size mismatch");
    if (!use_fft_) {
        if (head.size() != input_size()) throw ShapeError("readout: head width mismatch");
        for (std::size_t i = 0; i < output_size(); ++i) field[i] = head[2 * i];
        return;
    }
    std::vector<double> re, im;
    to_spectrum(head, re, im);
    std::vector<cplx> data(re.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = {re[i], im[i]};
    fft2_planes(data, vars_, lat_, lon_, true);
    const double inv = 1.0 / static_cast<double>(plane_);
    for (std::size_t i = 0; i < data.size(); ++i) field[i] = data[i].real() * inv;
}

void SpectralReadout::adjoint(std::span<const double> grad_field,
                              std::span<double> grad_head) const {
    if (grad_field.size() != output_size() || grad_head.size() != input_size()) {
        throw ShapeError("readout adjoint: size mismatch");
    }
    if (!use_fft_) {
        for (std::size_t i = 0; i < output_size(); ++i) grad_head[2 * i] += grad_field[i];
        return;
    }
    std::vector<cplx> data(grad_field.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = grad_field[i];
    fft2_planes(data, vars_, lat_, lon_, false);
    const double inv = 1.0 / static_cast<double>(plane_);
    for (cplx& c : data) c *= inv;
    symmetrize_planes(data, vars_, lat_, lon_);
    const std::size_t nb = layout_.size();
    for (std::size_t v = 0; v < vars_; ++v) {
        for (std::size_t b = 0; b < nb; ++b) {
            const cplx c = data[v * plane_ + layout_.flat[b]];
            const std::size_t h = (v * nb + b) * 2;
            grad_head[h] += scale_ * c.real();
            grad_head[h + 1] += scale_ * c.imag();
        }
    }
}

// ---------------------------------------------------------------------------

template <typename T>
WindowInput<T> prepare_window(const ModelConfig& config,
                              const std::vector<std::span<const double>>& steps) {
    const std::size_t V = config.n_vars, M = config.n_lat, N = config.n_lon, plane = M * N;
    if (steps.size() != config.history) {
        throw ShapeError("window has " + std::to_string(steps.size()) + " steps, model expects " +
                         std::to_string(config.history));
    }
    for (auto s : steps) {
        if (s.size() != V * plane) throw ShapeError("window step does not match the model grid");
    }
    WindowInput<T> in;
    in.steps = steps.size();
    in.stats = compute_norm_stats(steps, V, config.norm_eps);
    const ModeLayout layout = config.layout();
    const std::size_t nb = layout.size();
    const double scale = spectral_input_scale(config);
    const auto band_index = radial_band_index(M, N, default_band_edges(config.bands));
    in.bins = Matrix<T>(in.steps * V * nb, 2);
    in.gate_features.reserve(in.steps * config.bands);

    std::vector<double> x(V * plane), re, im;
    for (std::size_t t = 0; t < in.steps; ++t) {
        for (std::size_t v = 0; v < V; ++v) {
            const double mu = in.stats.mu[v], d = in.stats.sigma[v] + in.stats.epsilon;
            for (std::size_t i = 0; i < plane; ++i) {
                x[v * plane + i] = (steps[t][v * plane + i] - mu) / d;
            }
        }
        if (config.use_fft) {
            dft2_values(x, V, M, N, re, im);
            for (double& r : re) r *= scale;
            for (double& q : im) q *= scale;
        } else {
            re = x;
            im.assign(x.size(), 0.0);
        }
        for (std::size_t v = 0; v < V; ++v) {
            for (std::size_t b = 0; b < nb; ++b) {
                const std::size_t row = (t * V + v) * nb + b;
                in.bins(row, 0) = static_cast<T>(re[v * plane + layout.flat[b]]);
                in.bins(row, 1) = static_cast<T>(im[v * plane + layout.flat[b]]);
            }
        }
        for (double f : band_log_energy(re, im, V, band_index, config.bands)) {
            in.gate_features.push_back(static_cast<T>(f));
        }
    }
    return in;
}

template WindowInput<float> prepare_window<float>(const ModelConfig&,
                                                  const std::vector<std::span<const double>>&);
template WindowInput<double> prepare_window<double>(const ModelConfig&,
                                                    const std::vector<std::span<const double>>&);

// ---------------------------------------------------------------------------

TokenizeResult tokenize_per_variable(const std::vector<LatentSpectrum>& steps,
                                     const Model<double>& model) {
    const ModelConfig& c = model.config;
    if (steps.empty()) throw InvalidInput("tokenize: no timesteps");
    const ModeLayout layout = c.layout();
    const std::size_t nb = layout.size(), d = steps.front().latent;
    Matrix<double> latent(steps.size() * c.n_vars * nb, d);
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const LatentSpectrum& s = steps[t];
        if (s.n_vars != c.n_vars || s.n_lat != c.n_lat || s.n_lon != c.n_lon || s.latent != d) {
            throw ShapeError("tokenize: latent spectrum does not match the model");
        }
        for (std::size_t v = 0; v < c.n_vars; ++v) {
            for (std::size_t b = 0; b < nb; ++b) {
                const std::size_t row = (t * c.n_vars + v) * nb + b;
                const std::size_t bin = v * c.n_lat * c.n_lon + layout.flat[b];
                for (std::size_t k = 0; k < d; ++k) latent(row, k) = s.values[bin * d + k];
            }
        }
    }
    Tape<double> tape;
    auto b = graph::bind_backbone(tape, model, nullptr);
    auto tok = graph::tokenize(tape, tape.constant(std::move(latent)), steps.size(), c, b);
    TokenizeResult r;
    Matrix<double> pv = tape.matrix(tok.per_variable);
    r.per_variable = Tensor3(c.n_vars, steps.size(), pv.cols);
    r.per_variable.data = std::move(pv.data);
    r.tokens = tape.matrix(tok.tokens);
    return r;
}

BackboneResult backbone_forward(const TokenSequence& tokens, const Model<double>& model) {
    if (tokens.prompts >= tokens.tokens.rows) throw InvalidInput("sequence has no timestep tokens");
    if (tokens.tokens.cols != model.config.d_model) throw ShapeError("token width differs from d_model");
    Tape<double> tape;
    auto b = graph::bind_backbone(tape, model, nullptr);
    std::vector<graph::Var<double>> weights;
    auto h = graph::backbone(tape, tape.constant(tokens.tokens), tokens.prompts, model.config, b,
                             &weights);
    BackboneResult r;
    r.hidden = tape.matrix(h);
    for (auto w : weights) r.attention.push_back(tape.matrix(w));
    return r;
}

SpectralField project_to_spectrum(const Matrix<double>& hidden, const Model<double>& model,
                                  const GridField& like) {
    const ModelConfig& c = model.config;
    if (like.n_vars() != c.n_vars || like.n_lat() != c.n_lat || like.n_lon() != c.n_lon) {
        throw ShapeError("project_to_spectrum: grid differs from the model");
    }
    Tape<double> tape;
    auto b = graph::bind_backbone(tape, model, nullptr);
    auto coeffs = graph::head(tape, tape.constant(hidden), c, b);
    SpectralField out = SpectralField::zeros_like(like);
    SpectralReadout(c).to_spectrum(tape.values(coeffs), out.re, out.im);
    out.hermitian = true;
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<double> predict_normalized(const WindowInput<T>& input, const Model<T>& model) {
    Tape<T> tape;
    auto vars = graph::bind_model(tape, model, static_cast<T*>(nullptr));
    auto out = graph::forward_window(tape, vars, model.config, input);
    auto vals = tape.values(out);
    return std::vector<double>(vals.begin(), vals.end());
}

template <typename T>
void predict_window(const std::vector<std::span<const double>>& steps, const Model<T>& model,
                    std::span<double> out) {
    const ModelConfig& c = model.config;
    const std::size_t plane = c.n_lat * c.n_lon;
    if (out.size() != c.n_vars * plane) throw ShapeError("prediction buffer has the wrong size");
    WindowInput<T> in = prepare_window<T>(c, steps);
    const auto y = predict_normalized(in, model);
    for (std::size_t v = 0; v < c.n_vars; ++v) {
        const double mu = in.stats.mu[v], d = in.stats.sigma[v] + in.stats.epsilon;
        for (std::size_t i = 0; i < plane; ++i) out[v * plane + i] = y[v * plane + i] * d + mu;
    }
}

namespace {

void check_history(const HistoryWindow& history, const ModelConfig& c) {
    if (history.length() != c.history) {
        throw ShapeError("history has " + std::to_string(history.length()) +
                         " steps, model expects " + std::to_string(c.history));
    }
    const GridField& f = history.last();
    if (f.n_vars() != c.n_vars || f.n_lat() != c.n_lat || f.n_lon() != c.n_lon) {
        throw ShapeError("history grid differs from the model grid");
    }
}

}  // namespace

template <typename T>
GridField forecast(const HistoryWindow& history, const Model<T>& model) {
    check_history(history, model.config);
    std::vector<std::span<const double>> steps;
    for (const GridField& s : history.steps) steps.push_back(s.values());
    std::vector<double> out(history.last().size());
    predict_window(steps, model, out);
    return history.last().with_values(std::move(out));
}

template <typename T>
std::vector<GridField> rollout(const HistoryWindow& history, const Model<T>& model,
                               std::size_t steps) {
    check_history(history, model.config);
    std::deque<std::vector<double>> window;
    for (const GridField& s : history.steps) {
        window.emplace_back(s.values().begin(), s.values().end());
    }
    std::vector<GridField> result;
    for (std::size_t k = 0; k < steps; ++k) {
        std::vector<std::span<const double>> spans(window.begin(), window.end());
        std::vector<double> next(history.last().size());
        predict_window(spans, model, next);
        result.push_back(history.last().with_values(next));
        window.pop_front();
        window.push_back(std::move(next));
    }
    return result;
}

#define CLIMATELLM_INSTANTIATE(T)                                                               \
    template std::vector<double> predict_normalized<T>(const WindowInput<T>&, const Model<T>&); \
    template void predict_window<T>(const std::vector<std::span<const double>>&,                \
                                    const Model<T>&, std::span<double>);                        \
    template GridField forecast<T>(const HistoryWindow&, const Model<T>&);                      \
    template std::vector<GridField> rollout<T>(const HistoryWindow&, const Model<T>&,           \
                                               std::size_t);

CLIMATELLM_INSTANTIATE(float)
CLIMATELLM_INSTANTIATE(double)

#undef CLIMATELLM_INSTANTIATE

}  // namespace climatellm
