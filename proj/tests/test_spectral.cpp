#include <doctest.h>

#include <cmath>

#include "climatellm/errors.hpp"
#include "climatellm/spectral.hpp"
#include "support.hpp"

using namespace climatellm;

TEST_CASE("2x2 transform of 1 2 3 4") {
    const SpectralField s = dft2(testing::make_field(1, 2, 2, {1, 2, 3, 4}));
    const std::vector<double> want{10, -2, -4, 0};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(s.re[i] - want[i]) < 1e-12);
        CHECK(std::abs(s.im[i]) < 1e-12);
    }
}

TEST_CASE("fast transform matches the literal sum on mixed-radix grids") {
    std::mt19937_64 rng(11);
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{2, 3}, {5, 7}, {6, 10}, {9, 4}, {12, 15}}) {
        const GridField f = testing::random_field(2, m, n, rng);
        const SpectralField s = dft2(f);
        for (std::size_t v = 0; v < 2; ++v) {
            for (std::size_t km = 0; km < m; ++km) {
                for (std::size_t kn = 0; kn < n; ++kn) {
                    CHECK(std::abs(s.at(v, km, kn) - testing::dft_bin(f, v, km, kn)) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("bruteforce agrees with the independent oracle") {
    std::mt19937_64 rng(12);
    const GridField f = testing::random_field(1, 4, 6, rng);
    const SpectralField s = dft2_bruteforce(f);
    for (std::size_t km = 0; km < 4; ++km)
        for (std::size_t kn = 0; kn < 6; ++kn)
            CHECK(std::abs(s.at(0, km, kn) - testing::dft_bin(f, 0, km, kn)) < 1e-12);
    CHECK_THROWS_AS(dft2_bruteforce(testing::make_field(1, 65, 65, std::vector<double>(65 * 65))),
                    InvalidInput);
}

TEST_CASE("inverse recovers the field") {
    std::mt19937_64 rng(13);
    const GridField f = testing::random_field(3, 6, 10, rng);
    const GridField back = idft2(dft2(f));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(back.values()[i] - f.values()[i]) < 1e-12);
}

TEST_CASE("inverse rejects spectra of complex fields") {
    SpectralField s = SpectralField::zeros(testing::var_names(1), testing::evenly_spaced_lats(4),
                                           testing::evenly_spaced_lons(4));
    s.set(0, 0, 1, {1.0, 0.0});
    CHECK_THROWS_AS(idft2(s), SymmetryViolation);
    CHECK_NOTHROW(idft2(hermitian_symmetrize(s)));
}

TEST_CASE("signed frequency") {
    CHECK(signed_frequency(0, 8) == 0);
    CHECK(signed_frequency(4, 8) == 4);
    CHECK(signed_frequency(5, 8) == -3);
    CHECK(signed_frequency(3, 5) == -2);
}

TEST_CASE("truncation keeps exactly the low-frequency block") {
    std::mt19937_64 rng(14);
    const SpectralField s = dft2(testing::random_field(1, 8, 12, rng));
    const SpectralField t = truncate_modes(s, 3);
    std::size_t kept = 0;
    for (std::size_t km = 0; km < 8; ++km) {
        for (std::size_t kn = 0; kn < 12; ++kn) {
            const bool keep = std::abs(signed_frequency(km, 8)) < 3 && std::abs(signed_frequency(kn, 12)) < 3;
            if (keep) {
                ++kept;
                CHECK(t.at(0, km, kn) == s.at(0, km, kn));
            } else {
                CHECK(t.at(0, km, kn) == cplx(0.0, 0.0));
            }
        }
    }
    CHECK(kept == 25);
    CHECK(ModeLayout::truncated(8, 12, 3).size() == 25);
    CHECK(hermitian_defect(t) < 1e-12);
    CHECK_THROWS_AS(truncate_modes(s, 0), InvalidInput);
    CHECK_THROWS_AS(truncate_modes(s, 5), InvalidInput);
}

TEST_CASE("hermitian projection is idempotent and fixes real spectra") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> d;
    SpectralField s = SpectralField::zeros(testing::var_names(2), testing::evenly_spaced_lats(5),
                                           testing::evenly_spaced_lons(6));
    for (auto& x : s.re) x = d(rng);
    for (auto& x : s.im) x = d(rng);
    const SpectralField h = hermitian_symmetrize(s);
    CHECK(hermitian_defect(s) > 0.1);
    CHECK(hermitian_defect(h) < 1e-14);
    const SpectralField hh = hermitian_symmetrize(h);
    CHECK(testing::max_abs_diff(h.re, hh.re) < 1e-15);
    CHECK(testing::max_abs_diff(h.im, hh.im) < 1e-15);
    std::vector<double> re, im;
    idft2_complex(h, re, im);
    for (double x : im) CHECK(std::abs(x) < 1e-9);
    const SpectralField real_spec = dft2(testing::random_field(1, 5, 6, rng));
    const SpectralField fixed = hermitian_symmetrize(real_spec);
    CHECK(testing::max_abs_diff(real_spec.re, fixed.re) < 1e-12);
}

TEST_CASE("Parseval") {
    std::mt19937_64 rng(16);
    const GridField f = testing::random_field(2, 7, 9, rng);
    double e = 0.0;
    for (double x : f.values()) e += x * x;
    CHECK(std::abs(spectral_energy(dft2(f)) / 63.0 - e) < 1e-9 * e);
}

TEST_CASE("square-grid coefficients of a constant field") {
    for (std::size_t n : {4, 8}) {
        const double c = 1.75, N = static_cast<double>(n);
        const GridField f = testing::make_field(1, n, n, std::vector<double>(n * n, c));
        const Prop1Entry e = prop1_coefficients(f, 0, 0);
        CHECK(std::abs(e.A - cplx(c * N * N * (1.0 / N - 1.0 / (N + 1.0)), 0.0)) < 1e-12);
        CHECK(std::abs(e.B - cplx(c * N * N / ((N + 1.0) * (N + 1.0)), 0.0)) < 1e-12);
        CHECK(std::abs(e.F - cplx(c, 0.0)) < 1e-12);
    }
}

TEST_CASE("square-grid helpers need one square variable") {
    CHECK_THROWS_AS(prop1_coefficients(testing::make_field(1, 4, 5, std::vector<double>(20)), 0, 0),
                    InvalidInput);
    CHECK_THROWS_AS(prop1_coefficients(testing::make_field(2, 4, 4, std::vector<double>(32)), 0, 0),
                    InvalidInput);
    std::mt19937_64 rng(17);
    CHECK(prop1_roundtrip_check(testing::random_field(1, 8, 8, rng)).passed);
}
