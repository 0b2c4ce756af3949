#include "climatellm/model.hpp"

#include <algorithm>
#include <cmath>

#include "climatellm/errors.hpp"

namespace climatellm {

std::size_t ModelConfig::effective_k_max() const {
    if (k_max != 0) return k_max;
    return std::min<std::size_t>(8, std::min(n_lat, n_lon) / 2);
}

ModeLayout ModelConfig::layout() const {
    if (!use_fft) return ModeLayout::full(n_lat, n_lon);
    return ModeLayout::truncated(n_lat, n_lon, effective_k_max());
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw InvalidConfig("model config: " + msg); };
    if (n_vars == 0) fail("n_vars must be >= 1");
    if (n_lat < 2 || n_lon < 2) fail("grid must be at least 2x2");
    if (history == 0) fail("history must be >= 1");
    if (use_fft) {
        const std::size_t k = effective_k_max();
        if (k == 0 || k > std::min(n_lat, n_lon) / 2) fail("k_max must lie in [1, min(M,N)/2]");
    }
    if (latent == 0) fail("latent must be >= 1");
    if (experts == 0) fail("experts must be >= 1");
    if (bands == 0) fail("bands must be >= 1");
    if (prompt_tokens == 0) fail("prompt_tokens must be >= 1");
    if (d_model == 0) fail("d_model must be >= 1");
    if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (prompt_heads == 0 || d_model % prompt_heads != 0) {
        fail("d_model must be divisible by prompt_heads");
    }
    if (!(norm_eps > 0.0) || !(ln_eps > 0.0)) fail("epsilons must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {
        {"n_vars", n_vars},
        {"n_lat", n_lat},
        {"n_lon", n_lon},
        {"history", history},
        {"k_max", effective_k_max()},
        {"latent", latent},
        {"experts", experts},
        {"bands", bands},
        {"prompt_tokens", prompt_tokens},
        {"prompt_heads", prompt_heads},
        {"d_model", d_model},
        {"n_layers", n_layers},
        {"n_heads", n_heads},
        {"norm_eps", norm_eps},
        {"ln_eps", ln_eps},
        {"use_fft", use_fft},
        {"use_prompt", use_prompt},
        {"use_moe", use_moe},
        {"prefix_bidirectional", prefix_bidirectional},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_vars", c.n_vars);
    get("n_lat", c.n_lat);
    get("n_lon", c.n_lon);
    get("history", c.history);
    get("k_max", c.k_max);
    get("latent", c.latent);
    get("experts", c.experts);
    get("bands", c.bands);
    get("prompt_tokens", c.prompt_tokens);
    get("prompt_heads", c.prompt_heads);
    get("d_model", c.d_model);
    get("n_layers", c.n_layers);
    get("n_heads", c.n_heads);
    get("norm_eps", c.norm_eps);
    get("ln_eps", c.ln_eps);
    get("use_fft", c.use_fft);
    get("use_prompt", c.use_prompt);
    get("use_moe", c.use_moe);
    get("prefix_bidirectional", c.prefix_bidirectional);
    return c;
}

std::vector<double> default_band_edges(std::size_t bands) {
    if (bands == 0) throw InvalidConfig("need at least one band");
    std::vector<double> edges(bands + 1);
    for (std::size_t b = 0; b <= bands; ++b) {
        edges[b] = static_cast<double>(b) / static_cast<double>(bands);
    }
    return edges;
}

std::vector<std::size_t> radial_band_index(std::size_t n_lat, std::size_t n_lon,
                                           const std::vector<double>& edges) {
    if (edges.size() < 2) throw InvalidConfig("band edges need at least two entries");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) throw InvalidConfig("band edges must increase");
    }
    if (edges.front() > 0.0 || edges.back() < 1.0) {
        throw InvalidConfig("band edges must cover [0, 1]");
    }
    const std::size_t bands = edges.size() - 1;
    const double half_m = std::max(1.0, static_cast<double>(n_lat / 2));
    const double half_n = std::max(1.0, static_cast<double>(n_lon / 2));
    std::vector<std::size_t> index(n_lat * n_lon);
    for (std::size_t km = 0; km < n_lat; ++km) {
        for (std::size_t kn = 0; kn < n_lon; ++kn) {
            const double a = static_cast<double>(signed_frequency(km, n_lat)) / half_m;
            const double b = static_cast<double>(signed_frequency(kn, n_lon)) / half_n;
            const double rho = std::sqrt(0.5 * (a * a + b * b));
            std::size_t band = 0;
            while (band + 1 < bands && rho >= edges[band + 1]) ++band;
            index[km * n_lon + kn] = band;
        }
    }
    return index;
}

std::string param_module(const std::string& name) {
    auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
    if (starts("fmoe.lift")) return "lift";
    if (starts("fmoe.expert")) return "experts";
    if (starts("fmoe.gate")) return "gate";
    if (starts("prompt.")) return "prompt";
    if (starts("head.")) return "head";
    if (starts("backbone.layer") && name.find(".attn.") != std::string::npos) return "attention";
    return "backbone";
}

namespace {

template <typename T>
void xavier(std::span<T> w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (T& x : w) x = static_cast<T>(dist(rng));
}

template <typename T>
void gaussian(std::span<T> w, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& x : w) x = static_cast<T>(dist(rng));
}

template <typename T>
void fill(std::span<T> w, T value) {
    std::fill(w.begin(), w.end(), value);
}

template <typename T>
void add_attention(ParamStore<T>& s, const std::string& prefix, std::size_t width) {
    // No key bias: it shifts every score of a query equally and cancels in
    // the softmax.
    for (const char* m : {"q", "k", "v", "o"}) {
        s.add(prefix + ".w" + m, width, width);
        if (std::string(m) != "k") s.add(prefix + ".b" + m, 1, width);
    }
}

template <typename T>
void add_layer_norm(ParamStore<T>& s, const std::string& prefix, std::size_t width) {
    s.add(prefix + ".gamma", 1, width);
    s.add(prefix + ".beta", 1, width);
}

}  // namespace

template <typename T>
Model<T> Model<T>::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model<T> model{config, {}};
    ParamStore<T>& s = model.params;
    const std::size_t d = config.latent, dh = config.expert_hidden();
    const std::size_t dm = config.d_model, nb = config.n_bins();

    s.add("fmoe.lift.weight", 2, d);
    s.add("fmoe.lift.bias", 1, d);
    for (std::size_t e = 0; e < config.experts; ++e) {
        const std::string p = "fmoe.expert" + std::to_string(e);
        s.add(p + ".w1", d, dh);
        s.add(p + ".b1", 1, dh);
        s.add(p + ".w2", dh, d);
        s.add(p + ".b2", 1, d);
    }
    s.add("fmoe.gate.weight", config.bands, config.experts);
    s.add("fmoe.gate.bias", config.bands, config.experts);

    s.add("prompt.tokens", config.prompt_tokens, dm);
    add_attention(s, "prompt.attn_t", dm);
    add_layer_norm(s, "prompt.ln_t", dm);
    add_attention(s, "prompt.attn_c", dm);
    add_layer_norm(s, "prompt.ln_c", dm);

    for (std::size_t v = 0; v < config.n_vars; ++v) {
        s.add("backbone.input" + std::to_string(v) + ".weight", nb * d, dm);
        s.add("backbone.input" + std::to_string(v) + ".bias", 1, dm);
    }
    s.add("backbone.time_embed", config.history, dm);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::string p = "backbone.layer" + std::to_string(l);
        add_layer_norm(s, p + ".ln1", dm);
        add_attention(s, p + ".attn", dm);
        add_layer_norm(s, p + ".ln2", dm);
        s.add(p + ".mlp.w1", dm, 4 * dm);
        s.add(p + ".mlp.b1", 1, 4 * dm);
        s.add(p + ".mlp.w2", 4 * dm, dm);
        s.add(p + ".mlp.b2", 1, dm);
    }
    add_layer_norm(s, "head.ln", dm);
    s.add("head.weight", dm, config.head_width());
    s.add("head.bias", 1, config.head_width());

    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < s.blocks().size(); ++i) {
        const ParamBlock& b = s.block(i);
        const std::string& n = b.name;
        auto ends = [&](const char* suffix) {
            const std::string sfx(suffix);
            return n.size() >= sfx.size() && n.compare(n.size() - sfx.size(), sfx.size(), sfx) == 0;
        };
        std::span<T> w = s.values(i);
        if (ends(".gamma")) {
            fill(w, T(1));
        } else if (ends(".beta") || ends(".bias") || ends(".b1") || ends(".b2") ||
                   ends(".bq") || ends(".bv") || ends(".bo")) {
            fill(w, T(0));
        } else if (n == "prompt.tokens" || n == "backbone.time_embed") {
            gaussian(w, 0.02, rng);
        } else if (n == "fmoe.gate.weight") {
            gaussian(w, 0.02, rng);
        } else {
            xavier(w, b.rows, b.cols, rng);
        }
    }
    return model;
}

template struct Model<float>;
template struct Model<double>;

}  // namespace climatellm
