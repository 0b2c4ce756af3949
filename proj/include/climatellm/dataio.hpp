#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "climatellm/grid.hpp"

namespace climatellm {

inline constexpr int kDatasetFormatVersion = 1;

/// Half-open step ranges [begin, end).
struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    std::string name;
    std::vector<std::string> var_names;
    std::vector<double> lats;
    std::vector<double> lons;
    double timestep_hours = 6.0;
    double start_hours = 0.0;
    std::size_t n_steps = 0;
    SplitRange train, val, test;
    std::string payload;           // file name relative to the manifest
    std::string checksum;          // "crc32:xxxxxxxx" of the payload bytes
    nlohmann::json provenance;     // generator settings, config hash

    std::size_t n_vars() const { return var_names.size(); }
    std::size_t n_lat() const { return lats.size(); }
    std::size_t n_lon() const { return lons.size(); }
    std::size_t step_size() const { return n_vars() * n_lat() * n_lon(); }

    /// Throws CorruptData on inconsistent fields.
    void validate() const;
    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

/// Time-major series of fields. Values are float32-representable.
struct Dataset {
    DatasetManifest manifest;
    std::vector<double> values;    // n_steps x V x M x N

    std::span<const double> step(std::size_t t) const;
    GridField field(std::size_t t) const;
    HistoryWindow window(std::size_t first, std::size_t length) const;
};

/// 70/15/15 split by time, train first.
void assign_default_splits(DatasetManifest& manifest);

/// CRC-32 (zlib polynomial) of a byte buffer, formatted "crc32:%08x".
std::string payload_checksum(std::span<const unsigned char> bytes);

/// Writes `<dir>/<name>.manifest.json` and `<dir>/<name>.grd1`.
/// Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reads a manifest and its payload. Throws CorruptData on checksum,
/// version or size mismatch.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
    std::string name = "synthetic";
    std::size_t n_lat = 8;
    std::size_t n_lon = 16;
    std::size_t n_steps = 2000;
    double timestep_hours = 6.0;
    std::vector<std::string> var_names{"t2m", "u10", "z", "t"};
    std::vector<double> means{280.0, 0.0, 54000.0, 250.0};
    std::vector<double> scales{10.0, 5.0, 500.0, 8.0};

    /// Transport per step in grid cells, per variable (eastward, northward).
    std::vector<double> velocity_lon{0.75, -0.7, 0.6, 1.0};
    std::vector<double> velocity_lat{0.0, 0.25, 0.2, -0.25};
    double max_courant = 1.0;

    double diffusion = 0.001;          // per step, in squared wavenumber units
    std::size_t ic_radius = 2;         // band limit of the initial and forced modes
    double ic_amplitude = 1.0;         // initial field std, in units of scale
    double forcing = 1.0;              // stationary std of the forced modes
    double noise = 0.02;               // observation noise, fraction of scale
    double extreme_rate = 0.002;       // bumps per step
    double extreme_amplitude = 3.0;    // fraction of scale
    double extreme_width = 1.0;        // cells
    std::uint64_t seed = 7;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticConfig from_json(const nlohmann::json& j);
};

/// Advection by spectral phase shift (exact for whole-cell velocities),
/// spectral diffusion, stochastic forcing of the low modes, observation
/// noise and rare localized bumps. Periodic in both directions.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Last step of the history.
GridField persistence_forecast(const HistoryWindow& history);

/// The climatology field itself.
GridField climatology_forecast(const GridField& climatology);

}  // namespace climatellm
