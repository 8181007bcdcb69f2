#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>

namespace tcnbind {

inline constexpr std::string_view kVersion = "0.3.0";

/// 64-bit FNV-1a, used to fingerprint resolved configurations.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Provenance stamped at the top of every text artifact.
struct Provenance {
    std::string config_hash = hex64(0);
    std::uint64_t seed = 0;

    void write_header(std::ostream& os, char comment = '#') const {
        os << comment << " tcnbind " << kVersion << " config_hash=" << config_hash << " seed=" << seed << '\n';
    }
};

}  // namespace tcnbind
