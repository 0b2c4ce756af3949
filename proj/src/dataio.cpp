#include "climatellm/dataio.hpp"

#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include <zlib.h>

#include "climatellm/errors.hpp"
#include "climatellm/spectral.hpp"

namespace climatellm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

void DatasetManifest::validate() const {
    if (format_version != kDatasetFormatVersion) {
        throw CorruptData("unsupported dataset format version " + std::to_string(format_version));
    }
    if (var_names.empty() || lats.size() < 2 || lons.size() < 2) {
        throw CorruptData("manifest grid is empty or too small");
    }
    if (!(timestep_hours > 0.0)) throw CorruptData("manifest timestep must be positive");
    if (train.begin != 0 || train.end > val.begin || val.begin != train.end ||
        val.end != test.begin || test.end != n_steps || train.end < train.begin ||
        val.end < val.begin || test.end < test.begin) {
        throw CorruptData("manifest splits must tile the time axis as train < val < test");
    }
}

namespace {

json split_json(const SplitRange& r) { return json::array({r.begin, r.end}); }

SplitRange split_from(const json& j) {
    if (!j.is_array() || j.size() != 2) throw CorruptData("split must be [begin, end]");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

}  // namespace

json DatasetManifest::to_json() const {
    json j;
    j["format_version"] = format_version;
    j["name"] = name;
    j["var_names"] = var_names;
    j["lats"] = lats;
    j["lons"] = lons;
    j["timestep_hours"] = timestep_hours;
    j["start_hours"] = start_hours;
    j["n_steps"] = n_steps;
    j["splits"] = {{"train", split_json(train)}, {"val", split_json(val)}, {"test", split_json(test)}};
    j["payload"] = payload;
    j["checksum"] = checksum;
    j["provenance"] = provenance.is_null() ? json::object() : provenance;
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    DatasetManifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        m.name = j.at("name").get<std::string>();
        m.var_names = j.at("var_names").get<std::vector<std::string>>();
        m.lats = j.at("lats").get<std::vector<double>>();
        m.lons = j.at("lons").get<std::vector<double>>();
        m.timestep_hours = j.at("timestep_hours").get<double>();
        m.start_hours = j.value("start_hours", 0.0);
        m.n_steps = j.at("n_steps").get<std::size_t>();
        m.train = split_from(j.at("splits").at("train"));
        m.val = split_from(j.at("splits").at("val"));
        m.test = split_from(j.at("splits").at("test"));
        m.payload = j.at("payload").get<std::string>();
        m.checksum = j.at("checksum").get<std::string>();
        m.provenance = j.value("provenance", json::object());
    } catch (const json::exception& e) {
        throw CorruptData(std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
}

void assign_default_splits(DatasetManifest& m) {
    const std::size_t t = m.n_steps;
    const std::size_t a = t * 70 / 100, b = t * 85 / 100;
    m.train = {0, a};
    m.val = {a, b};
    m.test = {b, t};
}

// ---------------------------------------------------------------------------
// Dataset

std::span<const double> Dataset::step(std::size_t t) const {
    if (t >= manifest.n_steps) throw InvalidInput("step index out of range");
    const std::size_t n = manifest.step_size();
    return std::span<const double>(values).subspan(t * n, n);
}

GridField Dataset::field(std::size_t t) const {
    auto s = step(t);
    return GridField(manifest.var_names, manifest.lats, manifest.lons,
                     std::vector<double>(s.begin(), s.end()));
}

HistoryWindow Dataset::window(std::size_t first, std::size_t length) const {
    std::vector<GridField> steps;
    std::vector<double> times;
    for (std::size_t t = first; t < first + length; ++t) {
        steps.push_back(field(t));
        times.push_back(manifest.start_hours + static_cast<double>(t) * manifest.timestep_hours);
    }
    return HistoryWindow(std::move(steps), std::move(times));
}

std::string payload_checksum(std::span<const unsigned char> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
        crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
        done += chunk;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "crc32:%08lx", static_cast<unsigned long>(crc));
    return buf;
}

namespace {

std::vector<unsigned char> encode_payload(const std::vector<double>& values) {
    std::vector<unsigned char> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    return out;
}

std::vector<double> decode_payload(const std::vector<unsigned char>& bytes) {
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return out;
}

}  // namespace

fs::path save_dataset(const Dataset& dataset, const fs::path& dir) {
    DatasetManifest m = dataset.manifest;
    if (m.name.empty()) throw InvalidInput("dataset needs a name");
    if (dataset.values.size() != m.n_steps * m.step_size()) {
        throw ShapeError("dataset values do not match the manifest shape");
    }
    m.validate();
    const auto bytes = encode_payload(dataset.values);
    m.payload = m.name + ".grd1";
    m.checksum = payload_checksum(bytes);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / m.payload, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed to write " + (dir / m.payload).string());
    }
    const fs::path manifest_path = dir / (m.name + ".manifest.json");
    std::ofstream out(manifest_path);
    out << m.to_json().dump(2) << "\n";
    if (!out) throw Error("failed to write " + manifest_path.string());
    return manifest_path;
}

Dataset load_dataset(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw InvalidInput("cannot open manifest " + manifest_path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CorruptData("manifest is not valid JSON: " + std::string(e.what()));
    }
    Dataset d;
    d.manifest = DatasetManifest::from_json(j);
    const fs::path payload = manifest_path.parent_path() / d.manifest.payload;
    std::ifstream pin(payload, std::ios::binary);
    if (!pin) throw CorruptData("missing payload " + payload.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(pin)),
                                     std::istreambuf_iterator<char>());
    const std::size_t expected = d.manifest.n_steps * d.manifest.step_size() * 4;
    if (bytes.size() != expected) {
        throw CorruptData("payload has " + std::to_string(bytes.size()) + " bytes, manifest implies " +
                          std::to_string(expected));
    }
    if (payload_checksum(bytes) != d.manifest.checksum) {
        throw CorruptData("payload checksum mismatch for " + payload.string());
    }
    d.values = decode_payload(bytes);
    for (double x : d.values) {
        if (!std::isfinite(x)) throw CorruptData("payload contains non-finite values");
    }
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
    const std::size_t v = var_names.size();
    if (v == 0) throw InvalidConfig("synthetic data needs at least one variable");
    if (means.size() != v || scales.size() != v || velocity_lon.size() != v ||
        velocity_lat.size() != v) {
        throw InvalidConfig("per-variable synthetic settings must have one entry per variable");
    }
    if (n_lat < 2 || n_lon < 2) throw InvalidConfig("synthetic grid must be at least 2 x 2");
    if (n_steps < 1) throw InvalidConfig("synthetic series needs at least one step");
    if (!(timestep_hours > 0.0)) throw InvalidConfig("timestep must be positive");
    if (!(diffusion >= 0.0)) throw InvalidConfig("diffusion coefficient must be non-negative");
    if (!(noise >= 0.0) || !(forcing >= 0.0) || !(ic_amplitude >= 0.0)) {
        throw InvalidConfig("noise, forcing and initial amplitude must be non-negative");
    }
    if (!(extreme_rate >= 0.0 && extreme_rate <= 1.0)) {
        throw InvalidConfig("extreme rate must lie in [0, 1]");
    }
    if (!(extreme_width > 0.0)) throw InvalidConfig("extreme width must be positive");
    for (std::size_t i = 0; i < v; ++i) {
        if (!(scales[i] > 0.0)) throw InvalidConfig("variable scales must be positive");
        const double courant = std::max(std::abs(velocity_lon[i]), std::abs(velocity_lat[i]));
        if (!(courant <= max_courant)) {
            throw InvalidConfig("velocity of " + var_names[i] + " exceeds the Courant limit (" +
                                std::to_string(courant) + " > " + std::to_string(max_courant) +
                                " cells per step)");
        }
    }
}

json SyntheticConfig::to_json() const {
    return {{"name", name},
            {"n_lat", n_lat},
            {"n_lon", n_lon},
            {"n_steps", n_steps},
            {"timestep_hours", timestep_hours},
            {"var_names", var_names},
            {"means", means},
            {"scales", scales},
            {"velocity_lon", velocity_lon},
            {"velocity_lat", velocity_lat},
            {"max_courant", max_courant},
            {"diffusion", diffusion},
            {"ic_radius", ic_radius},
            {"ic_amplitude", ic_amplitude},
            {"forcing", forcing},
            {"noise", noise},
            {"extreme_rate", extreme_rate},
            {"extreme_amplitude", extreme_amplitude},
            {"extreme_width", extreme_width},
            {"seed", seed}};
}

SyntheticConfig SyntheticConfig::from_json(const json& j) {
    SyntheticConfig c;
    try {
        c.name = j.value("name", c.name);
        c.n_lat = j.value("n_lat", c.n_lat);
        c.n_lon = j.value("n_lon", c.n_lon);
        c.n_steps = j.value("n_steps", c.n_steps);
        c.timestep_hours = j.value("timestep_hours", c.timestep_hours);
        c.var_names = j.value("var_names", c.var_names);
        c.means = j.value("means", c.means);
        c.scales = j.value("scales", c.scales);
        c.velocity_lon = j.value("velocity_lon", c.velocity_lon);
        c.velocity_lat = j.value("velocity_lat", c.velocity_lat);
        c.max_courant = j.value("max_courant", c.max_courant);
        c.diffusion = j.value("diffusion", c.diffusion);
        c.ic_radius = j.value("ic_radius", c.ic_radius);
        c.ic_amplitude = j.value("ic_amplitude", c.ic_amplitude);
        c.forcing = j.value("forcing", c.forcing);
        c.noise = j.value("noise", c.noise);
        c.extreme_rate = j.value("extreme_rate", c.extreme_rate);
        c.extreme_amplitude = j.value("extreme_amplitude", c.extreme_amplitude);
        c.extreme_width = j.value("extreme_width", c.extreme_width);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("malformed synthetic config: ") + e.what());
    }
    return c;
}

namespace {

// Complex Gaussian coefficients on the forced modes, Hermitian so the field
// stays real, with E|c|^2 = 1 per mode.
std::vector<cplx> hermitian_noise(const std::vector<std::size_t>& modes, std::size_t M,
                                  std::size_t N, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    std::vector<cplx> c(M * N, cplx(0.0, 0.0));
    std::vector<char> set(M * N, 0);
    for (std::size_t idx : modes) {
        const std::size_t km = idx / N, kn = idx % N;
        const std::size_t mirror = ((M - km) % M) * N + (N - kn) % N;
        if (set[idx]) continue;
        const double re = normal(rng), im = normal(rng);
        if (mirror == idx) {
            c[idx] = cplx(re * std::sqrt(2.0), 0.0);
        } else {
            c[idx] = cplx(re, im);
            c[mirror] = std::conj(c[idx]);
            set[mirror] = 1;
        }
        set[idx] = 1;
    }
    return c;
}

bool is_whole(double x) { return std::floor(x) == x; }

// field(m, n) <- field(m - dm, n - dn), periodic.
void roll(std::vector<double>& plane, std::size_t M, std::size_t N, long dm, long dn) {
    std::vector<double> out(plane.size());
    const long Ml = static_cast<long>(M), Nl = static_cast<long>(N);
    for (long m = 0; m < Ml; ++m) {
        const long sm = ((m - dm) % Ml + Ml) % Ml;
        for (long n = 0; n < Nl; ++n) {
            const long sn = ((n - dn) % Nl + Nl) % Nl;
            out[m * N + n] = plane[sm * N + sn];
        }
    }
    plane.swap(out);
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    const std::size_t V = config.var_names.size(), M = config.n_lat, N = config.n_lon;
    const std::size_t plane = M * N;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::vector<std::size_t> modes;
    std::vector<double> k2(plane);
    for (std::size_t km = 0; km < M; ++km) {
        for (std::size_t kn = 0; kn < N; ++kn) {
            const double a = static_cast<double>(signed_frequency(km, M));
            const double b = static_cast<double>(signed_frequency(kn, N));
            k2[km * N + kn] = a * a + b * b;
            const double r = static_cast<double>(config.ic_radius);
            if (k2[km * N + kn] > 0.0 && k2[km * N + kn] <= r * r) modes.push_back(km * N + kn);
        }
    }
    // Unnormalized DFT amplitude giving unit field variance when spread over
    // the forced modes.
    const double unit = modes.empty() ? 0.0
                                      : static_cast<double>(plane) /
                                            std::sqrt(static_cast<double>(modes.size()));

    std::vector<std::vector<double>> state(V, std::vector<double>(plane, 0.0));
    for (std::size_t v = 0; v < V; ++v) {
        auto c = hermitian_noise(modes, M, N, rng);
        for (cplx& x : c) x *= unit * config.ic_amplitude;
        fft2_planes(c, 1, M, N, true);
        for (std::size_t i = 0; i < plane; ++i) state[v][i] = c[i].real() / plane;
    }

    Dataset d;
    DatasetManifest& m = d.manifest;
    m.name = config.name;
    m.var_names = config.var_names;
    for (std::size_t i = 0; i < M; ++i) {
        m.lats.push_back(90.0 - 180.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(M));
    }
    for (std::size_t i = 0; i < N; ++i) {
        m.lons.push_back(360.0 * static_cast<double>(i) / static_cast<double>(N));
    }
    m.timestep_hours = config.timestep_hours;
    m.n_steps = config.n_steps;
    assign_default_splits(m);
    m.provenance = {{"generator", "synthetic"}, {"config", config.to_json()}};
    d.values.resize(config.n_steps * V * plane);

    const double two_pi = 2.0 * std::acos(-1.0);
    for (std::size_t t = 0; t < config.n_steps; ++t) {
        if (t > 0) {
            for (std::size_t v = 0; v < V; ++v) {
                const double u = config.velocity_lon[v], w = config.velocity_lat[v];
                const bool spectral_step =
                    !is_whole(u) || !is_whole(w) || config.diffusion > 0.0 || config.forcing > 0.0;
                if (!spectral_step) {
                    roll(state[v], M, N, static_cast<long>(w), static_cast<long>(u));
                    continue;
                }
                std::vector<cplx> c(state[v].begin(), state[v].end());
                fft2_planes(c, 1, M, N, false);
                auto xi = hermitian_noise(modes, M, N, rng);
                for (std::size_t km = 0; km < M; ++km) {
                    for (std::size_t kn = 0; kn < N; ++kn) {
                        const std::size_t i = km * N + kn;
                        const double a = static_cast<double>(signed_frequency(km, M));
                        const double b = static_cast<double>(signed_frequency(kn, N));
                        const double phase = -two_pi * (a * w / static_cast<double>(M) +
                                                        b * u / static_cast<double>(N));
                        const double damp = std::exp(-config.diffusion * k2[i]);
                        c[i] *= damp * cplx(std::cos(phase), std::sin(phase));
                        const double drive = std::sqrt(std::max(0.0, 1.0 - damp * damp));
                        c[i] += xi[i] * (unit * config.forcing * drive);
                    }
                }
                fft2_planes(c, 1, M, N, true);
                for (std::size_t i = 0; i < plane; ++i) state[v][i] = c[i].real() / plane;
            }
        }
        for (std::size_t v = 0; v < V; ++v) {
            if (config.extreme_rate > 0.0 && uniform(rng) < config.extreme_rate) {
                const double cm = uniform(rng) * static_cast<double>(M);
                const double cn = uniform(rng) * static_cast<double>(N);
                const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
                const double w2 = 2.0 * config.extreme_width * config.extreme_width;
                for (std::size_t i = 0; i < M; ++i) {
                    for (std::size_t j = 0; j < N; ++j) {
                        double dm = std::abs(static_cast<double>(i) - cm);
                        double dn = std::abs(static_cast<double>(j) - cn);
                        dm = std::min(dm, static_cast<double>(M) - dm);
                        dn = std::min(dn, static_cast<double>(N) - dn);
                        state[v][i * N + j] +=
                            sign * config.extreme_amplitude * std::exp(-(dm * dm + dn * dn) / w2);
                    }
                }
            }
            double* out = d.values.data() + (t * V + v) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                double x = state[v][i];
                if (config.noise > 0.0) x += config.noise * normal(rng);
                out[i] = static_cast<double>(
                    static_cast<float>(config.means[v] + config.scales[v] * x));
            }
        }
    }
    return d;
}

GridField persistence_forecast(const HistoryWindow& history) {
    if (history.steps.empty()) throw InvalidInput("persistence needs a nonempty history");
    return history.last();
}

GridField climatology_forecast(const GridField& climatology) { return climatology; }

}  // namespace climatellm
