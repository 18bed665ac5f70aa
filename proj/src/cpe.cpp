#include "vulnkg/cpe.hpp"

#include <array>
#include <cctype>
#include <vector>

namespace vulnkg::ingest {

namespace {

constexpr std::string_view kPrefix = "cpe:2.3:";

std::vector<std::string> split_unescaped(std::string_view s) {
    std::vector<std::string> out(1);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '\\') {
            if (i + 1 >= s.size()) throw CpeError("dangling escape in CPE name");
            out.back() += c;
            out.back() += s[++i];
        } else if (c == ':') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

char check_part(std::string_view p, std::string_view uri) {
    if (p.size() != 1 || (p[0] != 'a' && p[0] != 'o' && p[0] != 'h')) {
        throw CpeError("invalid CPE part '" + std::string(p) + "' in " + std::string(uri));
    }
    return p[0];
}

}  // namespace

CpeName parse_cpe_uri(std::string_view uri, bool allow_short) {
    if (uri.substr(0, kPrefix.size()) != kPrefix) throw CpeError("not a CPE 2.3 name: " + std::string(uri));
    auto comps = split_unescaped(uri.substr(kPrefix.size()));
    if (comps.size() != 11) {
        if (!allow_short || comps.size() < 3 || comps.size() > 11) {
            throw CpeError("expected 11 components, got " + std::to_string(comps.size()) + " in " + std::string(uri));
        }
        comps.resize(11, "*");
    }
    for (const auto& c : comps) {
        if (c.empty()) throw CpeError("empty component in " + std::string(uri));
    }
    CpeName n;
    n.part = check_part(comps[0], uri);
    n.vendor = comps[1];
    n.product = comps[2];
    n.version = comps[3];
    n.update = comps[4];
    n.edition = comps[5];
    n.language = comps[6];
    n.sw_edition = comps[7];
    n.target_sw = comps[8];
    n.target_hw = comps[9];
    n.other = comps[10];
    return n;
}

std::string format_cpe(const CpeName& n) {
    std::string s(kPrefix);
    s += n.part;
    for (const auto* c : {&n.vendor, &n.product, &n.version, &n.update, &n.edition, &n.language, &n.sw_edition,
                          &n.target_sw, &n.target_hw, &n.other}) {
        s += ':';
        s += *c;
    }
    return s;
}

std::string shorten_cpe(const CpeName& n) { return std::string(kPrefix) + n.part + ":" + n.vendor + ":" + n.product; }

CpeName parse_cpe22_uri(std::string_view uri) {
    constexpr std::string_view prefix = "cpe:/";
    if (uri.substr(0, prefix.size()) != prefix) throw CpeError("not a CPE 2.2 URI: " + std::string(uri));
    std::vector<std::string> comps(1);
    for (char c : uri.substr(prefix.size())) {
        if (c == ':') {
            comps.emplace_back();
        } else {
            comps.back() += c;
        }
    }
    auto bind = [](const std::string& raw) -> std::string {
        if (raw.empty()) return "*";
        std::string out;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            char c = raw[i];
            if (c == '%' && i + 2 < raw.size() + 0 && std::isxdigit(static_cast<unsigned char>(raw[i + 1])) &&
                std::isxdigit(static_cast<unsigned char>(raw[i + 2]))) {
                c = static_cast<char>(std::stoi(raw.substr(i + 1, 2), nullptr, 16));
                i += 2;
            }
            const bool plain = std::isalnum(static_cast<unsigned char>(c)) || c == '_';
            if (!plain) out += '\\';
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        return out;
    };
    if (comps.empty() || comps[0].empty()) throw CpeError("missing part in " + std::string(uri));
    CpeName n;
    n.part = check_part(comps[0], uri);
    if (comps.size() < 3) throw CpeError("CPE 2.2 URI lacks vendor/product: " + std::string(uri));
    std::array<std::string*, 6> slots{&n.vendor, &n.product, &n.version, &n.update, &n.edition, &n.language};
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = i + 1 < comps.size() ? bind(comps[i + 1]) : "*";
    return n;
}

}  // namespace vulnkg::ingest
