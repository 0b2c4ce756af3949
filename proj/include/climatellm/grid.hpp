#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace climatellm {

/// Real-valued climate state on a regular latitude/longitude grid.
///
/// Values are stored variable-major, then latitude, then longitude:
/// `values[(v * M + m) * N + n]`.
class GridField {
public:
    GridField() = default;

    /// Validates shape, coordinate ranges and finiteness.
    GridField(std::vector<std::string> var_names, std::vector<double> lats,
              std::vector<double> lons, std::vector<double> values);

    /// Zero field sharing the grid of `like`.
    static GridField zeros_like(const GridField& like);

    std::size_t n_vars() const { return var_names_.size(); }
    std::size_t n_lat() const { return lats_.size(); }
    std::size_t n_lon() const { return lons_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t plane_size() const { return n_lat() * n_lon(); }

    double at(std::size_t v, std::size_t m, std::size_t n) const {
        return values_[(v * n_lat() + m) * n_lon() + n];
    }
    double& at(std::size_t v, std::size_t m, std::size_t n) {
        return values_[(v * n_lat() + m) * n_lon() + n];
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> plane(std::size_t v) const {
        return std::span<const double>(values_).subspan(v * plane_size(), plane_size());
    }
    std::span<double> plane(std::size_t v) {
        return std::span<double>(values_).subspan(v * plane_size(), plane_size());
    }

    const std::vector<std::string>& var_names() const { return var_names_; }
    const std::vector<double>& lats() const { return lats_; }
    const std::vector<double>& lons() const { return lons_; }

    /// Same variables and coordinates.
    bool same_grid(const GridField& other) const;

    /// Replace values, keeping the grid. Checks size and finiteness.
    GridField with_values(std::vector<double> values) const;

private:
    std::vector<std::string> var_names_;
    std::vector<double> lats_;
    std::vector<double> lons_;
    std::vector<double> values_;
};

/// Ordered sequence of L grid fields ending just before the forecast target.
struct HistoryWindow {
    std::vector<GridField> steps;
    std::vector<double> timestamps;  // hours

    HistoryWindow() = default;
    HistoryWindow(std::vector<GridField> steps, std::vector<double> timestamps);

    std::size_t length() const { return steps.size(); }
    const GridField& last() const { return steps.back(); }
};

/// Per-variable window statistics used by `normalize`/`denormalize`.
struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;
    double epsilon = 1e-6;

    void validate() const;
};

inline constexpr double kDefaultNormEpsilon = 1e-6;

/// Mean and population standard deviation of each variable over all L*M*N
/// entries of the window.
NormStats compute_norm_stats(const HistoryWindow& history,
                             double epsilon = kDefaultNormEpsilon);

/// Same statistics over raw steps, each holding `n_vars` equally sized planes.
NormStats compute_norm_stats(const std::vector<std::span<const double>>& steps,
                             std::size_t n_vars, double epsilon = kDefaultNormEpsilon);

/// (x - mu) / (sigma + epsilon), per variable.
GridField normalize(const GridField& field, const NormStats& stats);

/// x * (sigma + epsilon) + mu, per variable.
GridField denormalize(const GridField& field, const NormStats& stats);

}  // namespace climatellm
