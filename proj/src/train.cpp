#include "climatellm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "climatellm/errors.hpp"

namespace climatellm {

using nlohmann::json;

std::vector<double> LatWeights::mean_one() const {
    std::vector<double> out(alpha);
    for (double& a : out) a *= static_cast<double>(alpha.size());
    return out;
}

LatWeights latitude_weights(std::span<const double> lats) {
    if (lats.empty()) throw InvalidInput("latitude weights need at least one latitude");
    const double deg = std::acos(-1.0) / 180.0;
    LatWeights w;
    double total = 0.0;
    for (double lat : lats) {
        if (!(std::abs(lat) <= 90.0)) throw InvalidInput("latitude outside [-90, 90]");
        const double c = std::abs(lat) == 90.0 ? 0.0 : std::cos(lat * deg);
        w.alpha.push_back(c);
        total += c;
    }
    if (!(total > 0.0)) throw InvalidInput("latitude weights undefined: every row is polar");
    for (double& a : w.alpha) a /= total;
    return w;
}

std::string to_string(LossVariant v) {
    return v == LossVariant::alpha_weighted ? "alpha_weighted" : "weatherbench_normalized";
}

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "alpha_weighted") return LossVariant::alpha_weighted;
    if (s == "weatherbench_normalized") return LossVariant::weatherbench_normalized;
    throw InvalidConfig("unknown loss variant '" + s + "'");
}

std::vector<double> cell_weights(const LatWeights& w, std::size_t n_lon, LossVariant variant) {
    const std::vector<double> a =
        variant == LossVariant::alpha_weighted ? w.alpha : w.mean_one();
    const double cells = static_cast<double>(a.size() * n_lon);
    std::vector<double> out(a.size() * n_lon);
    for (std::size_t m = 0; m < a.size(); ++m) {
        for (std::size_t n = 0; n < n_lon; ++n) out[m * n_lon + n] = a[m] / cells;
    }
    return out;
}

std::vector<double> weighted_rmse(std::span<const double> pred, std::span<const double> truth,
                                  std::size_t n_vars, const LatWeights& w, std::size_t n_lon,
                                  LossVariant variant) {
    const std::size_t plane = w.alpha.size() * n_lon;
    if (pred.size() != truth.size() || pred.size() != n_vars * plane) {
        throw ShapeError("weighted_rmse: prediction and truth shapes differ");
    }
    const auto cw = cell_weights(w, n_lon, variant);
    std::vector<double> out(n_vars, 0.0);
    for (std::size_t v = 0; v < n_vars; ++v) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double e = pred[v * plane + i] - truth[v * plane + i];
            s += cw[i] * e * e;
        }
        out[v] = std::sqrt(s);
    }
    return out;
}

std::vector<double> weighted_rmse(const GridField& pred, const GridField& truth,
                                  const LatWeights& w, LossVariant variant) {
    if (!pred.same_grid(truth)) throw ShapeError("weighted_rmse: grids differ");
    if (w.alpha.size() != pred.n_lat()) throw ShapeError("weighted_rmse: weight count mismatch");
    return weighted_rmse(pred.values(), truth.values(), pred.n_vars(), w, pred.n_lon(), variant);
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw InvalidConfig("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw InvalidConfig("Adam epsilon must be positive");
    if (!(clip_norm >= 0.0)) throw InvalidConfig("clip_norm must be non-negative");
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"epochs", epochs},               {"seed", seed},
            {"beta1", beta1},                 {"beta2", beta2},
            {"adam_eps", adam_eps},           {"clip_norm", clip_norm},
            {"loss_variant", to_string(loss_variant)},
            {"balance_variables", balance_variables},
            {"augment_lon_shift", augment_lon_shift}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.balance_variables = j.value("balance_variables", c.balance_variables);
        c.augment_lon_shift = j.value("augment_lon_shift", c.augment_lon_shift);
        c.loss_variant = loss_variant_from_string(j.value("loss_variant", to_string(c.loss_variant)));
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("malformed training config: ") + e.what());
    }
    c.validate();
    return c;
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               const TrainConfig& config) {
    if (grads.size() != params.size()) throw ShapeError("adam: gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam: optimizer state does not match the parameters");
    }
    ++state.step;
    const double b1 = config.beta1, b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double mhat = state.m[i] / c1, vhat = state.v[i] / c2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) -
                                   config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps));
    }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState&,
                               const TrainConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState&,
                                const TrainConfig&);

// ---------------------------------------------------------------------------

std::vector<std::size_t> window_starts(const SplitRange& split, std::size_t history) {
    std::vector<std::size_t> out;
    for (std::size_t s = split.begin; s + history < split.end; ++s) out.push_back(s);
    return out;
}

std::vector<double> variable_balance(const Dataset& data, const TrainConfig& config) {
    const std::size_t V = data.manifest.n_vars();
    std::vector<double> out(V, 1.0);
    if (!config.balance_variables) return out;
    const SplitRange& r = data.manifest.train;
    if (r.size() == 0) throw InvalidInput("empty training split");
    const std::size_t plane = data.manifest.n_lat() * data.manifest.n_lon();
    for (std::size_t v = 0; v < V; ++v) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t t = r.begin; t < r.end; ++t) {
            auto x = data.step(t).subspan(v * plane, plane);
            for (double y : x) sum += y;
        }
        const double n = static_cast<double>(r.size() * plane), mean = sum / n;
        for (std::size_t t = r.begin; t < r.end; ++t) {
            auto x = data.step(t).subspan(v * plane, plane);
            for (double y : x) sq += (y - mean) * (y - mean);
        }
        const double sd = std::sqrt(sq / n);
        out[v] = sd > 0.0 ? sd : 1.0;
    }
    return out;
}

namespace {

// out(v, m, n) = in(v, m, n - shift), periodic in longitude.
std::vector<double> rotate_lon(std::span<const double> in, std::size_t n_lon, std::size_t shift) {
    std::vector<double> out(in.size());
    for (std::size_t row = 0; row < in.size() / n_lon; ++row) {
        for (std::size_t n = 0; n < n_lon; ++n) {
            out[row * n_lon + (n + shift) % n_lon] = in[row * n_lon + n];
        }
    }
    return out;
}

}  // namespace

template <typename T>
Sample<T> make_sample(const Dataset& data, const ModelConfig& config, std::size_t first,
                      const std::vector<double>& balance, std::size_t lon_shift) {
    if (!balance.empty() && balance.size() != config.n_vars) {
        throw ShapeError("one balance factor per variable required");
    }
    const std::size_t L = config.history;
    if (first + L >= data.manifest.n_steps) throw InvalidInput("window runs past the series");
    std::vector<std::vector<double>> rotated;
    std::vector<std::span<const double>> steps;
    lon_shift %= config.n_lon;
    if (lon_shift != 0) {
        for (std::size_t t = first; t <= first + L; ++t) {
            rotated.push_back(rotate_lon(data.step(t), config.n_lon, lon_shift));
        }
        for (std::size_t t = 0; t < L; ++t) steps.push_back(rotated[t]);
    } else {
        for (std::size_t t = first; t < first + L; ++t) steps.push_back(data.step(t));
    }
    Sample<T> s;
    s.input = prepare_window<T>(config, steps);
    const std::span<const double> truth =
        lon_shift != 0 ? std::span<const double>(rotated.back()) : data.step(first + L);
    const std::size_t plane = config.n_lat * config.n_lon;
    s.target.resize(truth.size());
    for (std::size_t v = 0; v < config.n_vars; ++v) {
        const double d = s.input.stats.sigma[v] + s.input.stats.epsilon;
        s.scale.push_back(static_cast<T>(balance.empty() ? d : d / balance[v]));
        for (std::size_t i = 0; i < plane; ++i) {
            s.target[v * plane + i] =
                static_cast<T>((truth[v * plane + i] - s.input.stats.mu[v]) / d);
        }
    }
    return s;
}

template <typename T>
double sample_loss(const Model<T>& model, const Sample<T>& sample,
                   const std::vector<T>& cell_weight, T* grad, T seed) {
    Tape<T> tape;
    auto vars = graph::bind_model(tape, model, grad);
    auto pred = graph::forward_window(tape, vars, model.config, sample.input);
    auto loss = graph::window_loss(tape, pred, sample.target, sample.scale, cell_weight);
    const double value = static_cast<double>(tape.scalar(loss));
    if (grad) tape.backward(loss, seed);
    return value;
}

template <typename T>
double batch_loss_and_grad(const Model<T>& model, const std::vector<const Sample<T>*>& batch,
                           const std::vector<T>& cell_weight, std::vector<T>& grad) {
    if (batch.empty()) throw InvalidInput("empty batch");
    grad.assign(model.params.total(), T(0));
    const T seed = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    double total = 0.0;
    for (const Sample<T>* s : batch) total += sample_loss(model, *s, cell_weight, grad.data(), seed);
    return total / static_cast<double>(batch.size());
}

template <typename T>
void check_finite_gradient(const ParamStore<T>& params, const std::vector<T>& grad) {
    for (const ParamBlock& b : params.blocks()) {
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (!std::isfinite(static_cast<double>(grad[b.offset + i]))) {
                throw TrainingDivergence("non-finite gradient in parameter " + b.name + "[" +
                                         std::to_string(i) + "]");
            }
        }
    }
}

#define CLIMATELLM_INSTANTIATE(T)                                                               \
    template Sample<T> make_sample<T>(const Dataset&, const ModelConfig&, std::size_t,          \
                                      const std::vector<double>&, std::size_t);                 \
    template double sample_loss<T>(const Model<T>&, const Sample<T>&, const std::vector<T>&, T*, \
                                   T);                                                          \
    template double batch_loss_and_grad<T>(const Model<T>&, const std::vector<const Sample<T>*>&, \
                                           const std::vector<T>&, std::vector<T>&);             \
    template void check_finite_gradient<T>(const ParamStore<T>&, const std::vector<T>&);

CLIMATELLM_INSTANTIATE(float)
CLIMATELLM_INSTANTIATE(double)

#undef CLIMATELLM_INSTANTIATE

// ---------------------------------------------------------------------------

json EpochRecord::to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"val_loss", val_loss},
            {"wall_seconds", wall_seconds},
            {"config_hash", config_hash}};
}

TrainState initial_train_state(const ModelConfig& config, const TrainConfig& train) {
    config.validate();
    train.validate();
    TrainState s;
    s.model = Model<float>::init(config, train.seed);
    s.best = s.model;
    return s;
}

namespace {

std::vector<float> to_float(const std::vector<double>& x) {
    return std::vector<float>(x.begin(), x.end());
}

void check_dataset(const Dataset& data, const ModelConfig& c) {
    const DatasetManifest& m = data.manifest;
    if (m.n_vars() != c.n_vars || m.n_lat() != c.n_lat || m.n_lon() != c.n_lon) {
        throw ShapeError("dataset grid " + std::to_string(m.n_vars()) + "x" +
                         std::to_string(m.n_lat()) + "x" + std::to_string(m.n_lon()) +
                         " differs from the model grid");
    }
}

}  // namespace

double split_loss(const Dataset& data, const Model<float>& model, const SplitRange& split,
                  const TrainConfig& config) {
    check_dataset(data, model.config);
    const auto starts = window_starts(split, model.config.history);
    if (starts.empty()) throw InvalidInput("split too short for one forecast window");
    const auto cw = to_float(cell_weights(latitude_weights(data.manifest.lats),
                                          data.manifest.n_lon(), config.loss_variant));
    const auto balance = variable_balance(data, config);
    double total = 0.0;
    for (std::size_t s : starts) {
        const auto sample = make_sample<float>(data, model.config, s, balance);
        total += sample_loss<float>(model, sample, cw, nullptr, 1.0f);
    }
    return total / static_cast<double>(starts.size());
}

void train(const Dataset& data, const TrainConfig& config, const std::string& config_hash,
           TrainState& state,
           const std::function<void(const EpochRecord&, const TrainState&)>& on_epoch) {
    config.validate();
    const ModelConfig& mc = state.model.config;
    mc.validate();
    check_dataset(data, mc);
    const auto starts = window_starts(data.manifest.train, mc.history);
    if (starts.empty()) throw InvalidInput("training split too short for one forecast window");
    const auto balance = variable_balance(data, config);
    std::vector<Sample<float>> samples;
    samples.reserve(starts.size());
    for (std::size_t s : starts) samples.push_back(make_sample<float>(data, mc, s, balance));
    const auto cw = to_float(cell_weights(latitude_weights(data.manifest.lats),
                                          data.manifest.n_lon(), config.loss_variant));

    std::vector<float> grad;
    for (std::size_t epoch = state.epochs_done + 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
        std::shuffle(order.begin(), order.end(), rng);
        if (config.augment_lon_shift) {
            std::uniform_int_distribution<std::size_t> shift(0, mc.n_lon - 1);
            for (std::size_t i = 0; i < samples.size(); ++i) {
                samples[i] = make_sample<float>(data, mc, starts[i], balance, shift(rng));
            }
        }

        double total = 0.0;
        for (std::size_t first = 0, batch_no = 0; first < order.size();
             first += config.batch_size, ++batch_no) {
            std::vector<const Sample<float>*> batch;
            for (std::size_t i = first; i < std::min(order.size(), first + config.batch_size); ++i) {
                batch.push_back(&samples[order[i]]);
            }
            const double loss = batch_loss_and_grad(state.model, batch, cw, grad);
            if (!std::isfinite(loss)) {
                throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch_no));
            }
            check_finite_gradient(state.model.params, grad);
            if (config.clip_norm > 0.0) {
                double norm = 0.0;
                for (float g : grad) norm += static_cast<double>(g) * g;
                norm = std::sqrt(norm);
                if (norm > config.clip_norm) {
                    const float f = static_cast<float>(config.clip_norm / norm);
                    for (float& g : grad) g *= f;
                }
            }
            adam_step<float>(state.model.params.flat(), grad, state.adam, config);
            total += loss * static_cast<double>(batch.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(samples.size());
        rec.val_loss = split_loss(data, state.model, data.manifest.val, config);
        rec.config_hash = config_hash;
        if (!std::isfinite(rec.val_loss)) {
            throw TrainingDivergence("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        state.epochs_done = epoch;
        if (state.best_epoch == 0 || rec.val_loss < state.best_val) {
            state.best_val = rec.val_loss;
            state.best_epoch = epoch;
            state.best = state.model;
        }
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (on_epoch) on_epoch(rec, state);
    }
}

// ---------------------------------------------------------------------------

json GradcheckReport::to_json() const {
    json j;
    j["step"] = step;
    j["tolerance"] = tolerance;
    j["loss"] = loss;
    j["passed"] = passed;
    j["checked"] = checked;
    j["failed"] = failed;
    json rows = json::array();
    for (const auto& e : entries) {
        rows.push_back({{"block", e.block},
                        {"module", e.module},
                        {"index", e.index},
                        {"analytic", e.analytic},
                        {"numeric", e.numeric},
                        {"rel_error", e.rel_error},
                        {"passed", e.passed}});
    }
    j["entries"] = rows;
    return j;
}

GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options) {
    config.validate();
    if (!(options.step > 0.0) || !(options.tolerance > 0.0)) {
        throw InvalidConfig("gradcheck step and tolerance must be positive");
    }
    std::mt19937_64 rng(options.seed);
    Model<double> model = Model<double>::init(config, options.seed);
    // Move off the initialization point, where near-uniform attention leaves
    // query/key gradients at round-off scale.
    {
        std::normal_distribution<double> jitter(0.0, options.jitter);
        for (double& p : model.params.flat()) p += jitter(rng);
    }

    // Random smooth-ish window with distinct per-variable offsets.
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t plane = config.n_lat * config.n_lon, step_size = config.n_vars * plane;
    std::vector<std::vector<double>> fields(config.history + 1, std::vector<double>(step_size));
    for (auto& f : fields) {
        for (std::size_t v = 0; v < config.n_vars; ++v) {
            for (std::size_t i = 0; i < plane; ++i) {
                f[v * plane + i] = 10.0 * static_cast<double>(v) + (1.0 + v) * normal(rng);
            }
        }
    }
    std::vector<std::span<const double>> steps(fields.begin(), fields.end() - 1);
    Sample<double> sample;
    sample.input = prepare_window<double>(config, steps);
    for (std::size_t v = 0; v < config.n_vars; ++v) {
        const double d = sample.input.stats.sigma[v] + sample.input.stats.epsilon;
        sample.scale.push_back(d);
        for (std::size_t i = 0; i < plane; ++i) {
            sample.target.push_back((fields.back()[v * plane + i] - sample.input.stats.mu[v]) / d);
        }
    }
    std::vector<double> lats(config.n_lat);
    for (std::size_t m = 0; m < config.n_lat; ++m) {
        lats[m] = 90.0 - 180.0 * (static_cast<double>(m) + 0.5) / static_cast<double>(config.n_lat);
    }
    const auto cw = cell_weights(latitude_weights(lats), config.n_lon, LossVariant::alpha_weighted);

    GradcheckReport report;
    report.step = options.step;
    report.tolerance = options.tolerance;
    std::vector<double> grad(model.params.total(), 0.0);
    report.loss = sample_loss<double>(model, sample, cw, grad.data(), 1.0);

    bool corrupted = false;
    for (const std::string& module : kGradcheckModules) {
        std::vector<std::pair<std::size_t, std::size_t>> pool;  // (block, index)
        for (std::size_t b = 0; b < model.params.blocks().size(); ++b) {
            const ParamBlock& blk = model.params.block(b);
            if (param_module(blk.name) != module) continue;
            for (std::size_t i = 0; i < blk.size(); ++i) pool.emplace_back(b, i);
        }
        std::shuffle(pool.begin(), pool.end(), rng);
        if (pool.size() > options.per_module) pool.resize(options.per_module);
        std::sort(pool.begin(), pool.end());
        report.checked[module] = pool.size();
        report.failed[module] = 0;
        for (auto [b, i] : pool) {
            const ParamBlock& blk = model.params.block(b);
            double& p = model.params.flat()[blk.offset + i];
            const double saved = p;
            p = saved + options.step;
            const double up = sample_loss<double>(model, sample, cw, nullptr, 1.0);
            p = saved - options.step;
            const double down = sample_loss<double>(model, sample, cw, nullptr, 1.0);
            p = saved;

            GradcheckEntry e;
            e.block = blk.name;
            e.module = module;
            e.index = i;
            e.analytic = grad[blk.offset + i];
            if (options.corrupt && !corrupted) {
                e.analytic += 1e-2 * (std::abs(e.analytic) + 1.0);
                corrupted = true;
            }
            e.numeric = (up - down) / (2.0 * options.step);
            e.rel_error = std::abs(e.analytic - e.numeric) /
                          std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
            e.passed = e.rel_error <= options.tolerance;
            if (!e.passed) ++report.failed[module];
            report.entries.push_back(e);
        }
    }
    report.passed = true;
    for (const std::string& module : kGradcheckModules) {
        if (report.checked[module] < options.per_module || report.failed[module] > 0) {
            report.passed = false;
        }
    }
    return report;
}

}  // namespace climatellm
