#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xccd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Seeded RNG with portable derived draws. mt19937_64 output is fixed by the
// standard; the distributions here avoid std::uniform_*_distribution, whose
// results vary across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform integer in [0, n), n >= 1. Rejection sampling over a
    // power-of-two mask, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    // Uniform double in [0, 1) with 53 bits.
    double real() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (cached spare).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a; the bytes overload is named separately so a string literal never
// binds to the void* parameter.
std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                          std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& p);

std::string lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Replaces the first occurrence of `needle`; throws if absent.
std::string replace_once(std::string_view text, std::string_view needle, std::string_view value);

}  // namespace xccd
