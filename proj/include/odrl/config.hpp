#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace odrl {

// Flat "key = value" config file. One pair per line; blank lines and lines
// starting with '#' are ignored. Values keep internal spaces, outer
// whitespace is trimmed. Duplicate keys: last one wins.
//
// Readers consume keys through the typed getters; finish() then rejects any
// key that was never consumed, so misspelled keys fail loudly instead of
// silently using a default.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text,
                                      const std::string& origin);

    // Override or add a pair ("--set key=value" on the CLI).
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    // Required variants throw ConfigError naming the missing key.
    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& fallback);
    std::int64_t get_int(const std::string& key);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);

    // Throws ConfigError listing every key no getter asked for.
    void finish() const;

    const std::string& origin() const { return origin_; }

private:
    std::string raw(const std::string& key);

    std::string origin_ = "<config>";
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

}  // namespace odrl
