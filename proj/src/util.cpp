#include "vulnkg/util.hpp"

#include <boost/crc.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace vulnkg {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    if (s.empty()) throw std::invalid_argument("malformed timestamp: '" + std::string(whole) + "'");
    for (char c : s) {
        if (c < '0' || c > '9') throw std::invalid_argument("malformed timestamp: '" + std::string(whole) + "'");
        v = v * 10 + (c - '0');
    }
    return v;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    using namespace std::chrono;
    const auto t = trim(text);
    std::string_view s = t;
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') {
        throw std::invalid_argument("malformed timestamp: '" + std::string(text) + "'");
    }
    const year_month_day ymd{year{parse_int(s.substr(0, 4), text)}, month{static_cast<unsigned>(parse_int(s.substr(5, 2), text))},
                             day{static_cast<unsigned>(parse_int(s.substr(8, 2), text))}};
    if (!ymd.ok()) throw std::invalid_argument("invalid calendar date: '" + std::string(text) + "'");
    Timestamp ts = sys_days{ymd};
    if (s.size() > 10) {
        if (s[10] != 'T' && s[10] != ' ') throw std::invalid_argument("malformed timestamp: '" + std::string(text) + "'");
        if (s.size() < 19) throw std::invalid_argument("malformed timestamp: '" + std::string(text) + "'");
        const int hh = parse_int(s.substr(11, 2), text);
        const int mm = parse_int(s.substr(14, 2), text);
        const int ss = parse_int(s.substr(17, 2), text);
        ts += hours{hh} + minutes{mm} + seconds{ss};
        auto rest = s.substr(19);
        if (!rest.empty() && rest[0] == '.') {
            std::size_t i = 1;
            while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
            rest = rest.substr(i);
        }
        if (!rest.empty() && rest != "Z") {
            if ((rest[0] == '+' || rest[0] == '-') && rest.size() == 6 && rest[3] == ':') {
                const int oh = parse_int(rest.substr(1, 2), text);
                const int om = parse_int(rest.substr(4, 2), text);
                const auto offset = hours{oh} + minutes{om};
                ts += rest[0] == '+' ? -offset : offset;
            } else {
                throw std::invalid_argument("malformed timezone in '" + std::string(text) + "'");
            }
        }
    }
    return ts;
}

Date parse_date(std::string_view text) { return to_date(parse_timestamp(text)); }

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

std::string format_timestamp(Timestamp t) {
    const auto d = to_date(t);
    const auto secs = (t - d).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "T%02lld:%02lld:%02lld", static_cast<long long>(secs / 3600),
                  static_cast<long long>(secs / 60 % 60), static_cast<long long>(secs % 60));
    return format_date(d) + buf;
}

int year_of(Date d) { return static_cast<int>(std::chrono::year_month_day{d}.year()); }

std::uint32_t crc32(std::string_view bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

std::string crc32_hex(std::string_view bytes) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", crc32(bytes));
    return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& p, std::string_view content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::string trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    // Box-Muller; u1 shifted away from zero
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace vulnkg
