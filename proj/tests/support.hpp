#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "climatellm/dataio.hpp"
#include "climatellm/grid.hpp"
#include "climatellm/model.hpp"

namespace testing {

using climatellm::GridField;

inline std::vector<double> evenly_spaced_lats(std::size_t m) {
    std::vector<double> lats(m);
    for (std::size_t i = 0; i < m; ++i) {
        lats[i] = 90.0 - 180.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    }
    return lats;
}

inline std::vector<double> evenly_spaced_lons(std::size_t n) {
    std::vector<double> lons(n);
    for (std::size_t i = 0; i < n; ++i) lons[i] = 360.0 * static_cast<double>(i) / static_cast<double>(n);
    return lons;
}

inline std::vector<std::string> var_names(std::size_t v) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < v; ++i) names.push_back("v" + std::to_string(i));
    return names;
}

inline GridField make_field(std::size_t vars, std::size_t m, std::size_t n, std::vector<double> values) {
    return GridField(var_names(vars), evenly_spaced_lats(m), evenly_spaced_lons(n), std::move(values));
}

inline GridField random_field(std::size_t vars, std::size_t m, std::size_t n, std::mt19937_64& rng,
                              double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(vars * m * n);
    for (double& x : v) x = dist(rng);
    return make_field(vars, m, n, std::move(v));
}

/// Literal double sum over the grid, written independently of the library.
inline std::complex<double> dft_bin(const GridField& f, std::size_t v, std::size_t km, std::size_t kn) {
    const double M = static_cast<double>(f.n_lat()), N = static_cast<double>(f.n_lon());
    std::complex<double> s = 0.0;
    for (std::size_t m = 0; m < f.n_lat(); ++m) {
        for (std::size_t n = 0; n < f.n_lon(); ++n) {
            const double phase = -2.0 * std::numbers::pi *
                                 (static_cast<double>(km * m) / M + static_cast<double>(kn * n) / N);
            s += f.at(v, m, n) * std::polar(1.0, phase);
        }
    }
    return s;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("climatellm-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Small grid and model for fast tests.
inline climatellm::ModelConfig tiny_model(std::size_t vars = 2, std::size_t m = 8, std::size_t n = 8) {
    climatellm::ModelConfig c;
    c.n_vars = vars;
    c.n_lat = m;
    c.n_lon = n;
    c.history = 3;
    c.k_max = 2;
    c.latent = 4;
    c.experts = 3;
    c.bands = 2;
    c.prompt_tokens = 2;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    return c;
}

inline climatellm::SyntheticConfig tiny_synthetic(std::size_t steps = 120) {
    climatellm::SyntheticConfig s;
    s.n_steps = steps;
    s.var_names = {"a", "b"};
    s.means = {10.0, -3.0};
    s.scales = {2.0, 1.0};
    s.velocity_lon = {0.5, -0.5};
    s.velocity_lat = {0.0, 0.25};
    s.n_lat = 8;
    s.n_lon = 8;
    return s;
}

}  // namespace testing
