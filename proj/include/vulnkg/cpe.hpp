#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vulnkg::ingest {

struct CpeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A CPE 2.3 formatted-string name. Components keep their escapes
/// ("\:" etc.) verbatim so formatting reproduces the input.
struct CpeName {
    char part = 'a';  // a | o | h
    std::string vendor;
    std::string product;
    std::string version = "*";
    std::string update = "*";
    std::string edition = "*";
    std::string language = "*";
    std::string sw_edition = "*";
    std::string target_sw = "*";
    std::string target_hw = "*";
    std::string other = "*";

    friend bool operator==(const CpeName&, const CpeName&) = default;
};

/// Splits "cpe:2.3:..." on unescaped colons. With `allow_short`, a name
/// holding fewer than 11 components is padded with "*".
CpeName parse_cpe_uri(std::string_view uri, bool allow_short = false);
std::string format_cpe(const CpeName& name);
/// "cpe:2.3:<part>:<vendor>:<product>"
std::string shorten_cpe(const CpeName& name);
/// Converts a CPE 2.2 URI ("cpe:/o:redhat:enterprise_linux:8") to 2.3 form.
CpeName parse_cpe22_uri(std::string_view uri);

}  // namespace vulnkg::ingest
