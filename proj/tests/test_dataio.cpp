#include <doctest.h>

#include <cmath>
#include <fstream>

#include "climatellm/checkpoint.hpp"
#include "climatellm/errors.hpp"
#include "climatellm/dataio.hpp"
#include "climatellm/spectral.hpp"
#include "support.hpp"

using namespace climatellm;
namespace fs = std::filesystem;

namespace {

SyntheticConfig quiet(std::size_t steps) {
    SyntheticConfig s = testing::tiny_synthetic(steps);
    s.noise = 0.0;
    s.forcing = 0.0;
    s.extreme_rate = 0.0;
    return s;
}

double plane_energy(const Dataset& d, std::size_t t, std::size_t v, double mean) {
    const std::size_t plane = d.manifest.n_lat() * d.manifest.n_lon();
    double e = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        const double x = d.step(t)[v * plane + i] - mean;
        e += x * x;
    }
    return e;
}

void overwrite_byte(const fs::path& p, std::size_t offset) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(offset));
    f.put('\x7f');
}

}  // namespace

TEST_CASE("no motion, no diffusion and no noise keep the field constant") {
    SyntheticConfig s = quiet(20);
    s.velocity_lon = {0.0, 0.0};
    s.velocity_lat = {0.0, 0.0};
    s.diffusion = 0.0;
    const Dataset d = generate_synthetic(s);
    for (std::size_t t = 1; t < 20; ++t)
        for (std::size_t i = 0; i < d.manifest.step_size(); ++i) CHECK(d.step(t)[i] == d.step(0)[i]);
}

TEST_CASE("pure diffusion never increases anomaly energy") {
    SyntheticConfig s = quiet(30);
    s.velocity_lon = {0.0, 0.0};
    s.velocity_lat = {0.0, 0.0};
    s.diffusion = 0.05;
    const Dataset d = generate_synthetic(s);
    for (std::size_t v = 0; v < 2; ++v) {
        double prev = plane_energy(d, 0, v, s.means[v]);
        for (std::size_t t = 1; t < 30; ++t) {
            const double e = plane_energy(d, t, v, s.means[v]);
            CHECK(e <= prev * (1.0 + 1e-6));
            prev = e;
        }
        CHECK(prev < plane_energy(d, 0, v, s.means[v]));
    }
}

TEST_CASE("whole-cell advection is an exact circular shift") {
    SyntheticConfig s = quiet(6);
    s.velocity_lon = {1.0, 0.0};
    s.velocity_lat = {0.0, -1.0};
    s.diffusion = 0.0;
    const Dataset d = generate_synthetic(s);
    const std::size_t M = 8, N = 8;
    for (std::size_t t = 1; t < 6; ++t) {
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) {
                CHECK(d.field(t).at(0, m, (n + 1) % N) == d.field(t - 1).at(0, m, n));
                CHECK(d.field(t).at(1, m, n) == d.field(t - 1).at(1, (m + 1) % M, n));
            }
        }
    }
}

TEST_CASE("fractional advection preserves anomaly energy without diffusion") {
    SyntheticConfig s = quiet(10);
    s.diffusion = 0.0;
    const Dataset d = generate_synthetic(s);
    const double e0 = plane_energy(d, 0, 0, s.means[0]);
    CHECK(std::abs(plane_energy(d, 9, 0, s.means[0]) - e0) < 1e-4 * e0);
}

TEST_CASE("synthetic configuration is validated") {
    SyntheticConfig s = testing::tiny_synthetic();
    s.velocity_lon[0] = 1.5;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    CHECK_THROWS_AS(generate_synthetic(s), InvalidConfig);
    s = testing::tiny_synthetic();
    s.scales = {1.0};
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    s = testing::tiny_synthetic();
    s.diffusion = -1.0;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    const SyntheticConfig back = SyntheticConfig::from_json(testing::tiny_synthetic().to_json());
    CHECK(back.to_json() == testing::tiny_synthetic().to_json());
}

TEST_CASE("synthetic generation is seeded") {
    const Dataset a = generate_synthetic(testing::tiny_synthetic(50));
    const Dataset b = generate_synthetic(testing::tiny_synthetic(50));
    CHECK(a.values == b.values);
    SyntheticConfig other = testing::tiny_synthetic(50);
    other.seed = 8;
    CHECK(generate_synthetic(other).values != a.values);
    for (double x : a.values) CHECK(static_cast<double>(static_cast<float>(x)) == x);
    CHECK(a.manifest.train.end == 35);
    CHECK(a.manifest.val.end == 42);
    CHECK(a.manifest.test.end == 50);
}

TEST_CASE("dataset save and load are bit exact") {
    testing::TempDir dir("dataset");
    const Dataset d = generate_synthetic(testing::tiny_synthetic(40));
    const fs::path manifest = save_dataset(d, dir.path());
    const Dataset back = load_dataset(manifest);
    CHECK(back.values == d.values);
    CHECK(back.manifest.var_names == d.manifest.var_names);
    CHECK(back.manifest.lats == d.manifest.lats);
    CHECK(back.manifest.checksum.rfind("crc32:", 0) == 0);
    CHECK(back.manifest.to_json() == load_dataset(save_dataset(back, dir.path())).manifest.to_json());
}

TEST_CASE("corrupt datasets are rejected") {
    testing::TempDir dir("corrupt");
    const Dataset d = generate_synthetic(testing::tiny_synthetic(40));
    const fs::path manifest = save_dataset(d, dir.path());
    const fs::path payload = dir.path() / load_dataset(manifest).manifest.payload;

    SUBCASE("truncated payload") {
        fs::resize_file(payload, fs::file_size(payload) - 4);
        CHECK_THROWS_AS(load_dataset(manifest), CorruptData);
    }
    SUBCASE("flipped payload byte") {
        overwrite_byte(payload, 100);
        CHECK_THROWS_AS(load_dataset(manifest), CorruptData);
    }
    SUBCASE("variable count mismatch") {
        nlohmann::json j;
        std::ifstream(manifest) >> j;
        j["var_names"].push_back("extra");
        std::ofstream(manifest) << j.dump();
        CHECK_THROWS_AS(load_dataset(manifest), CorruptData);
    }
    SUBCASE("unsupported version") {
        nlohmann::json j;
        std::ifstream(manifest) >> j;
        j["format_version"] = 99;
        std::ofstream(manifest) << j.dump();
        CHECK_THROWS_AS(load_dataset(manifest), CorruptData);
    }
    SUBCASE("garbage manifest") {
        std::ofstream(manifest) << "{not json";
        CHECK_THROWS_AS(load_dataset(manifest), CorruptData);
    }
    SUBCASE("missing manifest") {
        CHECK_THROWS_AS(load_dataset(dir.path() / "absent.manifest.json"), InvalidInput);
    }
}

TEST_CASE("payload checksum is the zlib CRC-32") {
    const std::string s = "123456789";
    const std::vector<unsigned char> b(s.begin(), s.end());
    CHECK(payload_checksum(b) == "crc32:cbf43926");
}

TEST_CASE("baselines") {
    const GridField a = testing::make_field(1, 2, 2, {1, 2, 3, 4});
    const GridField b = testing::make_field(1, 2, 2, {5, 6, 7, 8});
    const GridField p = persistence_forecast(HistoryWindow({a, b}, {0.0, 6.0}));
    CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{5, 6, 7, 8});
    CHECK_THROWS_AS(persistence_forecast(HistoryWindow()), InvalidInput);
}

TEST_CASE("checkpoint round trip and corruption") {
    testing::TempDir dir("ckpt");
    const Model<float> m = Model<float>::init(testing::tiny_model(), 3);
    AdamState adam;
    adam.m.assign(m.params.total(), 0.25);
    adam.v.assign(m.params.total(), 0.5);
    adam.step = 7;
    const fs::path p = dir.path() / "a.ckpt";
    save_checkpoint(p, m, &adam, {{"epochs_done", 2}});
    const Checkpoint c = load_checkpoint(p);
    CHECK(c.model.params.flat() == m.params.flat());
    CHECK(c.model.config.to_json() == m.config.to_json());
    REQUIRE(c.adam.has_value());
    CHECK(c.adam->m == adam.m);
    CHECK(c.adam->step == 7);
    CHECK(c.meta["epochs_done"] == 2);
    CHECK(file_hash(p) == fnv1a_hex([&] {
              std::ifstream f(p, std::ios::binary);
              return std::string(std::istreambuf_iterator<char>(f), {});
          }()));
    CHECK(fnv1a_hex("") == "cbf29ce484222325");

    save_checkpoint(dir.path() / "b.ckpt", m, nullptr, {});
    CHECK_FALSE(load_checkpoint(dir.path() / "b.ckpt").adam.has_value());

    fs::copy_file(p, dir.path() / "t.ckpt");
    fs::resize_file(dir.path() / "t.ckpt", fs::file_size(p) - 3);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "t.ckpt"), CorruptData);
    fs::copy_file(p, dir.path() / "m.ckpt");
    overwrite_byte(dir.path() / "m.ckpt", 0);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "m.ckpt"), CorruptData);
    {
        std::ofstream f(dir.path() / "x.ckpt", std::ios::binary | std::ios::app);
        std::ifstream in(p, std::ios::binary);
        f << in.rdbuf() << "tail";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "x.ckpt"), CorruptData);
}
