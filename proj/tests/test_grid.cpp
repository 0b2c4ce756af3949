#include <doctest.h>

#include <cmath>
#include <limits>

#include "climatellm/errors.hpp"
#include "climatellm/grid.hpp"
#include "support.hpp"

using namespace climatellm;

TEST_CASE("norm stats of 1 2 3 4 use the population deviation") {
    const HistoryWindow w({testing::make_field(1, 2, 2, {1, 2, 3, 4})}, {0.0});
    const NormStats s = compute_norm_stats(w);
    CHECK(s.mu[0] == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(std::abs(s.sigma[0] - std::sqrt(1.25)) < 1e-15);
    CHECK(s.epsilon == 1e-6);
}

TEST_CASE("norm stats pool every step and keep variables apart") {
    const HistoryWindow w({testing::make_field(2, 2, 2, {1, 1, 1, 1, 0, 0, 0, 0}),
                           testing::make_field(2, 2, 2, {3, 3, 3, 3, 0, 0, 0, 2})},
                          {0.0, 6.0});
    const NormStats s = compute_norm_stats(w);
    CHECK(s.mu[0] == doctest::Approx(2.0));
    CHECK(s.sigma[0] == doctest::Approx(1.0));
    CHECK(s.mu[1] == doctest::Approx(0.25));
    CHECK(s.sigma[1] == doctest::Approx(std::sqrt(4.0 / 8.0 - 0.0625)));
}

TEST_CASE("non-finite input is rejected") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(testing::make_field(1, 2, 2, {1, nan, 3, 4}), InvalidInput);
    std::vector<double> raw{1, nan, 3, 4};
    CHECK_THROWS_AS(compute_norm_stats({std::span<const double>(raw)}, 1), InvalidInput);
}

TEST_CASE("constant window normalizes to zero through epsilon") {
    const HistoryWindow w({testing::make_field(1, 2, 2, {5, 5, 5, 5})}, {0.0});
    const NormStats s = compute_norm_stats(w);
    CHECK(s.sigma[0] == 0.0);
    const GridField z = normalize(w.last(), s);
    for (double x : z.values()) CHECK(x == 0.0);
}

TEST_CASE("normalize and denormalize are inverse") {
    std::mt19937_64 rng(3);
    const GridField f = testing::random_field(3, 4, 6, rng, 7.0);
    const NormStats s = compute_norm_stats(HistoryWindow({f}, {0.0}));
    const GridField z = normalize(f, s);
    const GridField back = denormalize(z, s);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(back.values()[i] - f.values()[i]) < 1e-12);
    double mean = 0.0;
    for (double x : z.plane(1)) mean += x;
    CHECK(std::abs(mean) < 1e-12);
}

TEST_CASE("grid field validates its shape and coordinates") {
    CHECK_THROWS_AS(testing::make_field(1, 2, 2, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(GridField({"a"}, {95.0, 0.0}, {0.0, 90.0}, {1, 2, 3, 4}), InvalidInput);
    CHECK_THROWS_AS(GridField({"a"}, {0.0, 0.0}, {0.0, 90.0}, {1, 2, 3, 4}), InvalidInput);
    CHECK_THROWS_AS(GridField({"a"}, {0.0, 10.0}, {0.0, 360.0}, {1, 2, 3, 4}), InvalidInput);
    CHECK_THROWS_AS(GridField({"a"}, {0.0}, {0.0, 90.0}, {1, 2}), ShapeError);
}

TEST_CASE("history windows need increasing timestamps and one grid") {
    const GridField a = testing::make_field(1, 2, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(HistoryWindow({a, a}, {6.0, 0.0}), InvalidInput);
    CHECK_THROWS_AS(HistoryWindow({a, testing::make_field(1, 2, 3, {1, 2, 3, 4, 5, 6})}, {0.0, 6.0}),
                    ShapeError);
    CHECK_THROWS_AS(HistoryWindow({a}, {0.0, 6.0}), ShapeError);
}
