#pragma once

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vulnkg {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Throws ConfigError naming the first key of `obj` not listed in `allowed`.
void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed, std::string_view where);

/// Reads obj[key] into out when present; a wrong type becomes a ConfigError naming the key.
template <typename T>
void read_optional(const nlohmann::json& obj, std::string_view key, T& out, std::string_view where) {
    const auto it = obj.find(std::string(key));
    if (it == obj.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(where) + "." + std::string(key) + ": " + e.what());
    }
}

}  // namespace vulnkg
