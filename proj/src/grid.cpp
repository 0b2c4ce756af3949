#include "climatellm/grid.hpp"

#include <algorithm>
#include <cmath>

#include "climatellm/errors.hpp"

namespace climatellm {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (double x : values) {
        if (!std::isfinite(x)) {
            throw InvalidInput(std::string(what) + ": non-finite value");
        }
    }
}

void require_matching_vars(const GridField& field, const NormStats& stats) {
    if (stats.mu.size() != field.n_vars() || stats.sigma.size() != field.n_vars()) {
        throw ShapeError("norm stats have " + std::to_string(stats.mu.size()) +
                         " variables, field has " + std::to_string(field.n_vars()));
    }
}

}  // namespace

GridField::GridField(std::vector<std::string> var_names, std::vector<double> lats,
                     std::vector<double> lons, std::vector<double> values)
    : var_names_(std::move(var_names)),
      lats_(std::move(lats)),
      lons_(std::move(lons)),
      values_(std::move(values)) {
    if (var_names_.empty()) throw ShapeError("grid field needs at least one variable");
    if (lats_.size() < 2 || lons_.size() < 2) {
        throw ShapeError("grid field needs at least 2 latitudes and 2 longitudes");
    }
    if (values_.size() != n_vars() * plane_size()) {
        throw ShapeError("grid field value count " + std::to_string(values_.size()) +
                         " does not match " + std::to_string(n_vars()) + "x" +
                         std::to_string(n_lat()) + "x" + std::to_string(n_lon()));
    }
    for (double lat : lats_) {
        if (!(lat >= -90.0 && lat <= 90.0)) throw InvalidInput("latitude outside [-90, 90]");
    }
    bool increasing = true, decreasing = true;
    for (std::size_t i = 1; i < lats_.size(); ++i) {
        increasing = increasing && lats_[i] > lats_[i - 1];
        decreasing = decreasing && lats_[i] < lats_[i - 1];
    }
    if (!increasing && !decreasing) throw InvalidInput("latitudes must be strictly monotone");
    for (double lon : lons_) {
        if (!(lon >= 0.0 && lon < 360.0)) throw InvalidInput("longitude outside [0, 360)");
    }
    require_finite(values_, "grid field");
}

GridField GridField::zeros_like(const GridField& like) {
    return GridField(like.var_names_, like.lats_, like.lons_,
                     std::vector<double>(like.size(), 0.0));
}

bool GridField::same_grid(const GridField& other) const {
    return var_names_ == other.var_names_ && lats_ == other.lats_ && lons_ == other.lons_;
}

GridField GridField::with_values(std::vector<double> values) const {
    return GridField(var_names_, lats_, lons_, std::move(values));
}

HistoryWindow::HistoryWindow(std::vector<GridField> s, std::vector<double> t)
    : steps(std::move(s)), timestamps(std::move(t)) {
    if (steps.empty()) throw InvalidInput("history window is empty");
    if (timestamps.size() != steps.size()) {
        throw ShapeError("history window needs one timestamp per step");
    }
    for (std::size_t i = 1; i < steps.size(); ++i) {
        if (!steps[i].same_grid(steps[0])) throw ShapeError("history steps differ in grid");
        if (!(timestamps[i] > timestamps[i - 1])) {
            throw InvalidInput("history timestamps must increase");
        }
    }
}

void NormStats::validate() const {
    if (mu.size() != sigma.size()) throw ShapeError("mu and sigma lengths differ");
    if (!(epsilon >= 0.0)) throw InvalidInput("epsilon must be >= 0");
    for (std::size_t v = 0; v < sigma.size(); ++v) {
        if (!(sigma[v] >= 0.0)) throw InvalidInput("sigma must be non-negative");
        if (!(sigma[v] + epsilon > 0.0)) throw InvalidInput("sigma + epsilon must be positive");
    }
}

NormStats compute_norm_stats(const HistoryWindow& history, double epsilon) {
    if (history.steps.empty()) throw InvalidInput("cannot compute stats of an empty window");
    const GridField& first = history.steps.front();
    std::vector<std::span<const double>> steps;
    for (const GridField& step : history.steps) {
        if (step.n_vars() != first.n_vars() || step.plane_size() != first.plane_size()) {
            throw ShapeError("history steps differ in shape");
        }
        steps.push_back(step.values());
    }
    return compute_norm_stats(steps, first.n_vars(), epsilon);
}

NormStats compute_norm_stats(const std::vector<std::span<const double>>& steps,
                             std::size_t vars, double epsilon) {
    if (steps.empty()) throw InvalidInput("cannot compute stats of an empty window");
    if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
    if (vars == 0 || steps.front().size() % vars != 0) {
        throw ShapeError("step size is not a multiple of the variable count");
    }
    const std::size_t plane = steps.front().size() / vars;
    const double count = static_cast<double>(steps.size() * plane);

    NormStats stats;
    stats.epsilon = epsilon;
    stats.mu.assign(vars, 0.0);
    stats.sigma.assign(vars, 0.0);
    for (std::span<const double> step : steps) {
        if (step.size() != vars * plane) throw ShapeError("history steps differ in shape");
        require_finite(step, "history window");
        for (std::size_t v = 0; v < vars; ++v) {
            for (std::size_t i = 0; i < plane; ++i) stats.mu[v] += step[v * plane + i];
        }
    }
    for (double& m : stats.mu) m /= count;
    for (std::span<const double> step : steps) {
        for (std::size_t v = 0; v < vars; ++v) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = step[v * plane + i] - stats.mu[v];
                stats.sigma[v] += d * d;
            }
        }
    }
    for (double& s : stats.sigma) s = std::sqrt(s / count);
    return stats;
}

GridField normalize(const GridField& field, const NormStats& stats) {
    require_matching_vars(field, stats);
    stats.validate();
    std::vector<double> out(field.values().begin(), field.values().end());
    const std::size_t plane = field.plane_size();
    for (std::size_t v = 0; v < field.n_vars(); ++v) {
        const double scale = stats.sigma[v] + stats.epsilon;
        for (std::size_t i = 0; i < plane; ++i) {
            double& x = out[v * plane + i];
            x = (x - stats.mu[v]) / scale;
        }
    }
    return field.with_values(std::move(out));
}

GridField denormalize(const GridField& field, const NormStats& stats) {
    require_matching_vars(field, stats);
    stats.validate();
    std::vector<double> out(field.values().begin(), field.values().end());
    const std::size_t plane = field.plane_size();
    for (std::size_t v = 0; v < field.n_vars(); ++v) {
        const double scale = stats.sigma[v] + stats.epsilon;
        for (std::size_t i = 0; i < plane; ++i) {
            double& x = out[v * plane + i];
            x = x * scale + stats.mu[v];
        }
    }
    return field.with_values(std::move(out));
}

}  // namespace climatellm
