#include "qtun/kv.hpp"

#include "qtun/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace qtun {

std::string_view trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

double parse_real(std::string_view text) {
    text = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw Error(Errc::ConfigError, "not a number: '" + std::string(text) + "'");
    }
    return value;
}

std::uint64_t parse_unsigned(std::string_view text) {
    text = trim(text);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw Error(Errc::ConfigError, "not an unsigned integer: '" + std::string(text) + "'");
    }
    return value;
}

std::string format_real(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

KeyValues KeyValues::parse(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto eol = text.find('\n');
        auto line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(Errc::ConfigError, "line " + std::to_string(line_no) + ": expected key=value");
        }
        const auto key = std::string(trim(line.substr(0, eq)));
        if (key.empty()) {
            throw Error(Errc::ConfigError, "line " + std::to_string(line_no) + ": empty key");
        }
        kv.set(key, std::string(trim(line.substr(eq + 1))));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

const std::string& KeyValues::str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw Error(Errc::ConfigError, "missing key '" + key + "'");
    }
    return it->second;
}

double KeyValues::real(const std::string& key) const {
    try {
        return parse_real(str(key));
    } catch (const Error& e) {
        throw Error(Errc::ConfigError, "key '" + key + "': " + e.what());
    }
}

std::int64_t KeyValues::integer(const std::string& key) const {
    const auto& text = str(key);
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error(Errc::ConfigError, "key '" + key + "': not an integer");
    }
    return value;
}

std::uint64_t KeyValues::unsigned_integer(const std::string& key) const {
    try {
        return parse_unsigned(str(key));
    } catch (const Error& e) {
        throw Error(Errc::ConfigError, "key '" + key + "': " + e.what());
    }
}

double KeyValues::real_or(const std::string& key, double fallback) const {
    return contains(key) ? real(key) : fallback;
}

std::int64_t KeyValues::integer_or(const std::string& key, std::int64_t fallback) const {
    return contains(key) ? integer(key) : fallback;
}

std::string KeyValues::str_or(const std::string& key, std::string fallback) const {
    return contains(key) ? str(key) : std::move(fallback);
}

void KeyValues::set(const std::string& key, std::string value) {
    if (values_.count(key) == 0) {
        order_.push_back(key);
    }
    values_[key] = std::move(value);
}

void KeyValues::set(const std::string& key, double value) { set(key, format_real(value)); }
void KeyValues::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValues::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

std::string KeyValues::to_string() const {
    std::string out;
    for (const auto& key : order_) {
        out += key;
        out += '=';
        out += values_.at(key);
        out += '\n';
    }
    return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    out << to_string();
}

} // namespace qtun
