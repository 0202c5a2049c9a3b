#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qtun {

/// Ordered key=value document: one key per line, `#` starts a comment.
class KeyValues {
public:
    static KeyValues parse(std::string_view text);
    static KeyValues load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> find(const std::string& key) const;

    // Throws Errc::ConfigError when missing or malformed.
    const std::string& str(const std::string& key) const;
    double real(const std::string& key) const;
    std::int64_t integer(const std::string& key) const;
    std::uint64_t unsigned_integer(const std::string& key) const;

    double real_or(const std::string& key, double fallback) const;
    std::int64_t integer_or(const std::string& key, std::int64_t fallback) const;
    std::string str_or(const std::string& key, std::string fallback) const;

    void set(const std::string& key, std::string value);
    void set(const std::string& key, double value);
    void set(const std::string& key, std::int64_t value);
    void set(const std::string& key, std::uint64_t value);
    void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }

    const std::vector<std::string>& keys() const { return order_; }

    /// Serializes in insertion order, `key=value\n`.
    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// Round-trip exact decimal form of a double.
std::string format_real(double value);

double parse_real(std::string_view text);
std::uint64_t parse_unsigned(std::string_view text);
std::string_view trim(std::string_view text);

} // namespace qtun
