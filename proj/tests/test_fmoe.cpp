#include <doctest.h>

#include <cmath>
#include <numbers>

#include "climatellm/fmoe.hpp"
#include "support.hpp"

using namespace climatellm;

namespace {

double gelu(double x) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

/// Plain-loop expert e applied to one latent vector.
std::vector<double> apply_expert(const Model<double>& m, std::size_t e, const std::vector<double>& z) {
    const std::string p = "fmoe.expert" + std::to_string(e);
    const Matrix<double> w1 = m.params.matrix(p + ".w1"), b1 = m.params.matrix(p + ".b1");
    const Matrix<double> w2 = m.params.matrix(p + ".w2"), b2 = m.params.matrix(p + ".b2");
    std::vector<double> h(w1.cols), out(w2.cols);
    for (std::size_t j = 0; j < w1.cols; ++j) {
        double s = b1(0, j);
        for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * w1(i, j);
        h[j] = gelu(s);
    }
    for (std::size_t j = 0; j < w2.cols; ++j) {
        double s = b2(0, j);
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w2(i, j);
        out[j] = s;
    }
    return out;
}

Model<double> jittered(const ModelConfig& c, std::uint64_t seed) {
    Model<double> m = Model<double>::init(c, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> d(0.0, 0.3);
    for (double& x : m.params.flat()) x += d(rng);
    return m;
}

SpectralField random_spectrum(std::size_t vars, std::size_t m, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return dft2(testing::random_field(vars, m, n, rng));
}

}  // namespace

TEST_CASE("lift is a per-bin affine map of (re, im)") {
    const Model<double> m = jittered(testing::tiny_model(), 1);
    const SpectralField s = random_spectrum(2, 8, 8, 2);
    const LatentSpectrum z = lift(s, m);
    const Matrix<double> w = m.params.matrix("fmoe.lift.weight"), b = m.params.matrix("fmoe.lift.bias");
    for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t km = 0; km < 8; km += 3)
            for (std::size_t kn = 0; kn < 8; kn += 2)
                for (std::size_t c = 0; c < z.latent; ++c) {
                    const cplx x = s.at(v, km, kn);
                    CHECK(std::abs(z.at(v, km, kn, c) - (x.real() * w(0, c) + x.imag() * w(1, c) + b(0, c))) < 1e-12);
                }
}

TEST_CASE("band energy features") {
    const std::vector<std::size_t> band{0, 1, 1, 0};
    const std::vector<double> re{1, 2, 0, 3, 0, 0, 0, 1}, im{0, 0, 2, 0, 0, 0, 0, 0};
    const auto f = band_log_energy(re, im, 2, band, 3);
    CHECK(std::abs(f[0] - std::log((1.0 + 9.0 + 0.0 + 1.0) / 4.0 + 1e-12)) < 1e-14);
    CHECK(std::abs(f[1] - std::log((4.0 + 4.0) / 4.0 + 1e-12)) < 1e-14);
    CHECK(f[2] == 0.0);
}

TEST_CASE("radial bands start at the mean and cover every band") {
    const auto idx = radial_band_index(8, 16, default_band_edges(4));
    CHECK(idx[0] == 0);
    std::vector<int> seen(4, 0);
    for (auto b : idx) seen.at(b) = 1;
    for (int s : seen) CHECK(s == 1);
    CHECK(idx[4 * 16 + 8] == 3);
}

TEST_CASE("gate rows are distributions over experts") {
    ModelConfig c = testing::tiny_model();
    c.experts = 5;
    c.bands = 3;
    const Model<double> m = jittered(c, 3);
    const Matrix<double> g = gate(random_spectrum(2, 8, 8, 4), m);
    CHECK(g.rows == 3);
    CHECK(g.cols == 5);
    for (std::size_t b = 0; b < g.rows; ++b) {
        double s = 0.0;
        for (std::size_t e = 0; e < g.cols; ++e) {
            CHECK(g(b, e) > 0.0);
            s += g(b, e);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("mixture output matches a plain-loop oracle") {
    const Model<double> m = jittered(testing::tiny_model(), 5);
    const SpectralField s = random_spectrum(2, 8, 8, 6);
    const LatentSpectrum z = lift(s, m), y = moe_forward(s, m);
    const Matrix<double> g = gate(s, m);
    for (std::size_t v = 0; v < 2; ++v) {
        for (std::size_t km = 0; km < 8; km += 3) {
            for (std::size_t kn = 0; kn < 8; kn += 3) {
                std::vector<double> zin(z.latent), want(z.latent, 0.0);
                for (std::size_t c = 0; c < z.latent; ++c) zin[c] = z.at(v, km, kn, c);
                const std::size_t band = y.band_index[km * 8 + kn];
                for (std::size_t e = 0; e < m.config.experts; ++e) {
                    const auto f = apply_expert(m, e, zin);
                    for (std::size_t c = 0; c < z.latent; ++c) want[c] += g(band, e) * f[c];
                }
                for (std::size_t c = 0; c < z.latent; ++c) CHECK(std::abs(y.at(v, km, kn, c) - want[c]) < 1e-12);
            }
        }
    }
}

TEST_CASE("a single expert collapses to that expert") {
    ModelConfig c = testing::tiny_model();
    c.experts = 1;
    const Model<double> m = jittered(c, 7);
    const SpectralField s = random_spectrum(2, 8, 8, 8);
    const LatentSpectrum z = lift(s, m), y = moe_forward(s, m);
    double worst = 0.0;
    for (std::size_t i = 0; i < z.values.size() / z.latent; ++i) {
        std::vector<double> zin(z.values.begin() + i * z.latent, z.values.begin() + (i + 1) * z.latent);
        const auto f = apply_expert(m, 0, zin);
        for (std::size_t k = 0; k < z.latent; ++k) worst = std::max(worst, std::abs(y.values[i * z.latent + k] - f[k]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("disabling the mixture applies expert 0 alone") {
    ModelConfig c = testing::tiny_model();
    const Model<double> on = jittered(c, 9);
    Model<double> off = on;
    off.config.use_moe = false;
    const SpectralField s = random_spectrum(2, 8, 8, 10);
    const LatentSpectrum z = lift(s, off), y = moe_forward(s, off);
    std::vector<double> zin(z.values.begin(), z.values.begin() + z.latent);
    const auto f = apply_expert(off, 0, zin);
    for (std::size_t k = 0; k < z.latent; ++k) CHECK(std::abs(y.values[k] - f[k]) < 1e-12);
}

TEST_CASE("permuting experts together with gate columns leaves the output unchanged") {
    ModelConfig c = testing::tiny_model();
    c.experts = 4;
    const Model<double> m = jittered(c, 11);
    Model<double> p = m;
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    for (std::size_t e = 0; e < 4; ++e) {
        for (const char* leaf : {".w1", ".b1", ".w2", ".b2"}) {
            auto src = m.params.values("fmoe.expert" + std::to_string(perm[e]) + leaf);
            auto dst = p.params.values("fmoe.expert" + std::to_string(e) + leaf);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    for (const char* name : {"fmoe.gate.weight", "fmoe.gate.bias"}) {
        auto src = m.params.values(name);
        auto dst = p.params.values(name);
        for (std::size_t b = 0; b < c.bands; ++b)
            for (std::size_t e = 0; e < 4; ++e) dst[b * 4 + e] = src[b * 4 + perm[e]];
    }
    const SpectralField s = random_spectrum(2, 8, 8, 12);
    const auto a = moe_forward(s, m).values, b = moe_forward(s, p).values;
    CHECK(testing::max_abs_diff(a, b) <= 1e-12);
}
