#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "climatellm/backbone.hpp"
#include "climatellm/dataio.hpp"
#include "climatellm/model.hpp"

namespace climatellm {

/// cos(latitude) weights normalized to sum 1.
struct LatWeights {
    std::vector<double> alpha;

    /// alpha scaled to mean 1.
    std::vector<double> mean_one() const;
};

LatWeights latitude_weights(std::span<const double> lats);

enum class LossVariant {
    alpha_weighted,               // sqrt(1/(MN) sum alpha e^2), sum alpha = 1
    weatherbench_normalized,  // alpha rescaled to mean 1
};

std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

/// Per-cell weight w(m) / (MN) for one plane, so that the per-variable
/// score is sqrt(sum_cells weight * e^2).
std::vector<double> cell_weights(const LatWeights& w, std::size_t n_lon, LossVariant variant);

/// Weighted RMSE of each variable. Buffers hold V x M x N values with M =
/// w.alpha.size().
std::vector<double> weighted_rmse(std::span<const double> pred, std::span<const double> truth,
                                  std::size_t n_vars, const LatWeights& w, std::size_t n_lon,
                                  LossVariant variant = LossVariant::alpha_weighted);

std::vector<double> weighted_rmse(const GridField& pred, const GridField& truth,
                                  const LatWeights& w,
                                  LossVariant variant = LossVariant::alpha_weighted);

namespace graph {

/// Mean over variables of the weighted RMSE in physical units. `pred` is
/// the normalized prediction (V x MN); `target` the normalized truth,
/// `scale` the per-variable sigma + epsilon.
template <typename T>
Var<T> window_loss(Tape<T>& tape, Var<T> pred, const std::vector<T>& target,
                   const std::vector<T>& scale, const std::vector<T>& cell_weight) {
    const std::size_t V = tape.rows(pred), P = tape.cols(pred);
    if (target.size() != V * P || scale.size() != V || cell_weight.size() != P) {
        throw ShapeError("window_loss: size mismatch");
    }
    std::vector<T> w(V * P);
    for (std::size_t v = 0; v < V; ++v) std::copy(cell_weight.begin(), cell_weight.end(), w.begin() + v * P);
    Var<T> err = tape.mul_col(tape.sub(pred, tape.constant(V, P, target)), tape.constant(V, 1, scale));
    Var<T> weighted = tape.mul(tape.mul(err, err), tape.constant(V, P, std::move(w)));
    return tape.mean_all(tape.sqrt(tape.row_sums(weighted)));
}

}  // namespace graph

// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables clipping
    LossVariant loss_variant = LossVariant::alpha_weighted;
    /// Divide each variable's error by its training-split standard deviation
    /// so that variables in large units do not dominate the objective.
    bool balance_variables = true;
    /// Rotate each training window by a random whole number of longitude
    /// cells every epoch.
    bool augment_lon_shift = false;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               const TrainConfig& config);

/// Prepared (input, target) pair for one forecast window.
template <typename T>
struct Sample {
    WindowInput<T> input;
    std::vector<T> target;  // normalized with the input window's statistics
    std::vector<T> scale;   // sigma + epsilon per variable
};

/// Window of `history` steps starting at `first`, target at first + history.
/// `balance`, when nonempty, divides each variable's loss scale.
template <typename T>
Sample<T> make_sample(const Dataset& data, const ModelConfig& config, std::size_t first,
                      const std::vector<double>& balance = {}, std::size_t lon_shift = 0);

/// Per-variable loss divisors for `config`: training-split standard
/// deviations, or ones when balancing is off.
std::vector<double> variable_balance(const Dataset& data, const TrainConfig& config);

/// First-step indices of every window whose inputs and target lie in `split`.
std::vector<std::size_t> window_starts(const SplitRange& split, std::size_t history);

/// Loss of one sample; when `grad` is given, adds d(seed * loss)/dparams.
template <typename T>
double sample_loss(const Model<T>& model, const Sample<T>& sample,
                   const std::vector<T>& cell_weight, T* grad, T seed);

/// Mean loss of the batch and its gradient (overwrites `grad`). Samples are
/// accumulated strictly in order.
template <typename T>
double batch_loss_and_grad(const Model<T>& model, const std::vector<const Sample<T>*>& batch,
                           const std::vector<T>& cell_weight, std::vector<T>& grad);

/// Throws TrainingDivergence naming the first block with a non-finite entry.
template <typename T>
void check_finite_gradient(const ParamStore<T>& params, const std::vector<T>& grad);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_seconds = 0.0;
    std::string config_hash;

    nlohmann::json to_json() const;
};

struct TrainState {
    Model<float> model;
    AdamState adam;
    std::size_t epochs_done = 0;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    Model<float> best;
};

/// Fresh state: initialized model, empty optimizer moments.
TrainState initial_train_state(const ModelConfig& config, const TrainConfig& train);

/// Runs epochs epochs_done+1 .. train.epochs. `on_epoch` sees each record
/// and the updated state (including the best model so far).
void train(const Dataset& data, const TrainConfig& config, const std::string& config_hash,
           TrainState& state,
           const std::function<void(const EpochRecord&, const TrainState&)>& on_epoch = {});

/// Mean loss over the windows of a split.
double split_loss(const Dataset& data, const Model<float>& model, const SplitRange& split,
                  const TrainConfig& config);

// ---------------------------------------------------------------------------
// Finite-difference verification of the reverse pass.

struct GradcheckEntry {
    std::string block;
    std::string module;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    bool passed = false;
};

struct GradcheckReport {
    double step = 1e-4;
    double tolerance = 1e-4;
    double loss = 0.0;
    std::vector<GradcheckEntry> entries;
    std::map<std::string, std::size_t> checked;   // per module
    std::map<std::string, std::size_t> failed;    // per module
    bool passed = false;

    nlohmann::json to_json() const;
};

inline const std::vector<std::string> kGradcheckModules{"lift",   "experts",   "gate",
                                                        "prompt", "attention", "head"};

struct GradcheckOptions {
    std::size_t per_module = 20;
    double step = 1e-4;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    /// Std of the Gaussian offset added to every initialized parameter.
    double jitter = 0.2;
    /// Negative control: perturbs one analytic gradient entry before comparing.
    bool corrupt = false;
};

/// float64 model and random window, central differences on sampled
/// parameters of every module in kGradcheckModules.
GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options);

}  // namespace climatellm
