#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "climatellm/dataio.hpp"
#include "climatellm/model.hpp"
#include "climatellm/train.hpp"

namespace climatellm {

/// Pointwise time mean of a nonempty series.
GridField climatology(const std::vector<GridField>& series);

/// Time mean of the steps in `range`, V x M x N.
std::vector<double> climatology(const Dataset& data, const SplitRange& range);

/// Per-variable latitude-weighted RMSE.
std::vector<double> eval_rmse(std::span<const double> pred, std::span<const double> truth,
                              std::size_t n_vars, const LatWeights& w, std::size_t n_lon,
                              LossVariant variant = LossVariant::weatherbench_normalized);
std::vector<double> eval_rmse(const GridField& pred, const GridField& truth, const LatWeights& w,
                              LossVariant variant = LossVariant::weatherbench_normalized);

/// Per-variable anomaly correlation. An entry is empty when either anomaly
/// field has zero weighted norm.
std::vector<std::optional<double>> eval_acc(std::span<const double> pred,
                                            std::span<const double> truth,
                                            std::span<const double> clim, std::size_t n_vars,
                                            const LatWeights& w, std::size_t n_lon);
std::vector<std::optional<double>> eval_acc(const GridField& pred, const GridField& truth,
                                            const GridField& clim, const LatWeights& w);

struct MetricCell {
    std::string forecaster;   // "model", "persistence" or "climatology"
    std::string variable;
    std::size_t lead_steps = 0;
    double lead_hours = 0.0;
    double rmse = 0.0;                  // mean-1 weights
    double rmse_literal = 0.0;          // training-loss weights
    std::optional<double> acc;          // empty when undefined in every window
    std::size_t acc_windows = 0;        // windows where ACC was defined
};

struct EvalReport {
    std::string dataset;
    std::string checkpoint_hash;
    std::string config_hash;
    std::string metric_variant = "weatherbench_normalized";
    std::size_t windows = 0;
    std::vector<MetricCell> cells;

    const MetricCell& find(const std::string& forecaster, const std::string& variable,
                           std::size_t lead_steps) const;
    /// Means over variables; the ACC mean is empty when any cell is undefined.
    double mean_rmse(const std::string& forecaster, std::size_t lead_steps) const;
    std::optional<double> mean_acc(const std::string& forecaster, std::size_t lead_steps) const;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

struct EvalOptions {
    std::vector<double> lead_hours{6.0};
    bool baselines = true;
    std::size_t max_windows = 0;   // 0 evaluates every test window
};

/// Autoregressive rollout from every test window, scored per variable and
/// lead time against the truth, with persistence and climatology rows.
/// Climatology comes from the training split.
EvalReport evaluate(const Model<float>& model, const Dataset& data, const EvalOptions& options);

/// Lead time in whole steps; throws InvalidInput if not a positive multiple.
std::size_t lead_steps(double lead_hours, double timestep_hours);

}  // namespace climatellm
