#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vulnkg {

using Date = std::chrono::sys_days;
using Timestamp = std::chrono::sys_seconds;

/// Parses "YYYY-MM-DD" optionally followed by "THH:MM:SS[.fff][Z|+hh:mm]".
Timestamp parse_timestamp(std::string_view text);
/// Accepts the same inputs as parse_timestamp and truncates to the day.
Date parse_date(std::string_view text);
std::string format_date(Date d);
std::string format_timestamp(Timestamp t);
inline Date to_date(Timestamp t) { return std::chrono::floor<std::chrono::days>(t); }
int year_of(Date d);

std::uint32_t crc32(std::string_view bytes);
std::string crc32_hex(std::string_view bytes);
std::uint64_t fnv1a64(std::string_view bytes);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view content);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

/// Seeded generator with portable draws (std distributions are
/// implementation-defined, so sampling goes through these helpers).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Uniform double in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace vulnkg
