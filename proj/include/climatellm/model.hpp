#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "climatellm/autodiff.hpp"
#include "climatellm/spectral.hpp"

namespace climatellm {

/// Architecture of the forecaster. Grid sizes come from the dataset.
struct ModelConfig {
    std::size_t n_vars = 4;
    std::size_t n_lat = 32;
    std::size_t n_lon = 64;
    std::size_t history = 4;          // L, steps per input window
    std::size_t k_max = 0;            // retained modes per axis; 0 = min(8, min(M,N)/2)

    std::size_t latent = 32;          // d
    std::size_t experts = 4;          // E
    std::size_t bands = 4;            // B

    std::size_t prompt_tokens = 8;    // K
    std::size_t prompt_heads = 1;

    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;

    double norm_eps = 1e-6;
    double ln_eps = 1e-5;

    bool use_fft = true;
    bool use_prompt = true;
    bool use_moe = true;
    /// Prompt tokens attend to timestep tokens. Disabled only to isolate the
    /// causal structure in tests.
    bool prefix_bidirectional = true;

    std::size_t expert_hidden() const { return 2 * latent; }
    std::size_t effective_k_max() const;
    /// Retained bins: low-frequency block with FFT, every grid point without.
    ModeLayout layout() const;
    std::size_t n_bins() const { return layout().size(); }
    std::size_t head_width() const { return 2 * n_vars * n_bins(); }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Equal-width edges over normalized radial wavenumber [0, 1].
std::vector<double> default_band_edges(std::size_t bands);

/// Band of every bin of an M x N plane. Radial wavenumber is normalized per
/// axis by the Nyquist index so anisotropic grids share one scale.
std::vector<std::size_t> radial_band_index(std::size_t n_lat, std::size_t n_lon,
                                           const std::vector<double>& edges);

struct ParamBlock {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return rows * cols; }
};

/// Named parameter blocks stored back to back in one flat buffer, so
/// gradients and optimizer moments share the same layout.
template <typename T>
class ParamStore {
public:
    std::size_t add(const std::string& name, std::size_t rows, std::size_t cols) {
        if (index_.count(name)) throw InvalidConfig("duplicate parameter block " + name);
        blocks_.push_back({name, rows, cols, values_.size()});
        values_.resize(values_.size() + rows * cols, T(0));
        index_[name] = blocks_.size() - 1;
        return blocks_.size() - 1;
    }

    std::size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter block " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    const ParamBlock& block(std::size_t i) const { return blocks_[i]; }
    const ParamBlock& block(const std::string& name) const { return blocks_[find(name)]; }

    std::span<T> values(std::size_t i) {
        return std::span<T>(values_).subspan(blocks_[i].offset, blocks_[i].size());
    }
    std::span<const T> values(std::size_t i) const {
        return std::span<const T>(values_).subspan(blocks_[i].offset, blocks_[i].size());
    }
    std::span<T> values(const std::string& name) { return values(find(name)); }
    std::span<const T> values(const std::string& name) const { return values(find(name)); }

    Matrix<double> matrix(const std::string& name) const {
        const ParamBlock& b = block(name);
        Matrix<double> m(b.rows, b.cols);
        auto v = values(find(name));
        for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<double>(v[i]);
        return m;
    }

    std::vector<T>& flat() { return values_; }
    const std::vector<T>& flat() const { return values_; }
    std::size_t total() const { return values_.size(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const ParamBlock& b : blocks_) out.add(b.name, b.rows, b.cols);
        for (std::size_t i = 0; i < values_.size(); ++i) out.flat()[i] = static_cast<U>(values_[i]);
        return out;
    }

private:
    std::vector<ParamBlock> blocks_;
    std::vector<T> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gradcheck grouping of a parameter block: "lift", "experts", "gate",
/// "prompt", "attention", "head" or "backbone".
std::string param_module(const std::string& block_name);

/// Complete forecaster: configuration plus every learnable block.
template <typename T>
struct Model {
    ModelConfig config;
    ParamStore<T> params;

    /// Fresh parameters: Xavier-uniform projections, zero biases, unit
    /// LayerNorm gains, N(0, 0.02) prompt tokens and time embedding.
    static Model init(const ModelConfig& config, std::uint64_t seed);

    template <typename U>
    Model<U> cast() const {
        return Model<U>{config, params.template cast<U>()};
    }
};

extern template struct Model<float>;
extern template struct Model<double>;

/// Gradient buffer argument; null binds the block as a constant.
template <typename T>
using GradPtr = std::type_identity_t<T>*;

/// Registers a parameter block on a tape, accumulating its gradient into
/// `grad_flat` (same layout as the store) when given.
template <typename T>
typename Tape<T>::Var bind_param(Tape<T>& tape, const ParamStore<T>& store, const std::string& name,
                                 GradPtr<T> grad_flat) {
    const std::size_t i = store.find(name);
    const ParamBlock& b = store.block(i);
    return tape.parameter(store.values(i).data(), grad_flat ? grad_flat + b.offset : nullptr,
                          b.rows, b.cols);
}

}  // namespace climatellm
