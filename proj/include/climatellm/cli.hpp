#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace climatellm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad arguments/config or a failed check
inline constexpr int kExitRuntime = 2;     // I/O, corrupt data, divergence

/// Environment variable overriding the output root directory.
inline constexpr const char* kOutputRootEnv = "CLIMATELLM_OUTPUT_ROOT";

/// Entry point of the command-line tool; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a hash of the canonical (sorted-key) dump of `config`.
std::string config_hash(const nlohmann::json& config);

/// 8-bit binary PGM of an M x N plane, linearly scaled from its min to max,
/// row 0 at the top. Writes `<path>` and `<path>.json` with min, max and
/// the config hash.
void write_pgm(const std::filesystem::path& path, std::span<const double> plane,
               std::size_t n_lat, std::size_t n_lon, const std::string& config_hash);

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> pixels;
    std::vector<std::string> comments;
};

PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace climatellm
