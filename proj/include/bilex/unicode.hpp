#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bilex::uni {

struct CodepointRange {
    std::uint32_t lo;
    std::uint32_t hi;
};

struct CodepointPair {
    std::uint32_t from;
    std::uint32_t to;
};

#include "unicode_data.inc"

// Decodes one UTF-8 scalar starting at `pos`. Invalid bytes are returned as
// single-byte scalars with their raw value so that every byte string can be
// scanned; `len` is the number of bytes consumed (>= 1).
inline std::uint32_t decode_utf8(std::string_view s, size_t pos, size_t* len) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    size_t remaining = s.size() - pos;
    auto cont = [&](size_t k) {
        return k < remaining &&
               (static_cast<unsigned char>(s[pos + k]) & 0xC0) == 0x80;
    };
    if (b0 < 0x80) {
        *len = 1;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        std::uint32_t cp = (b0 & 0x1Fu) << 6 |
                           (static_cast<unsigned char>(s[pos + 1]) & 0x3Fu);
        if (cp >= 0x80) {
            *len = 2;
            return cp;
        }
    } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        std::uint32_t cp = (b0 & 0x0Fu) << 12 |
                           (static_cast<unsigned char>(s[pos + 1]) & 0x3Fu) << 6 |
                           (static_cast<unsigned char>(s[pos + 2]) & 0x3Fu);
        if (cp >= 0x800 && !(cp >= 0xD800 && cp <= 0xDFFF)) {
            *len = 3;
            return cp;
        }
    } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        std::uint32_t cp = (b0 & 0x07u) << 18 |
                           (static_cast<unsigned char>(s[pos + 1]) & 0x3Fu) << 12 |
                           (static_cast<unsigned char>(s[pos + 2]) & 0x3Fu) << 6 |
                           (static_cast<unsigned char>(s[pos + 3]) & 0x3Fu);
        if (cp >= 0x10000 && cp <= 0x10FFFF) {
            *len = 4;
            return cp;
        }
    }
    *len = 1;
    return b0;  // invalid sequence: treat the byte as an opaque scalar
}

inline void encode_utf8(std::uint32_t cp, std::string* out) {
    if (cp < 0x80) {
        out->push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out->push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out->push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out->push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out->push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out->push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out->push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// General category P* membership (binary search over the frozen ranges).
inline bool is_punct(std::uint32_t cp) {
    size_t lo = 0, hi = sizeof(kPunctRanges) / sizeof(kPunctRanges[0]);
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (cp < kPunctRanges[mid].lo) {
            hi = mid;
        } else if (cp > kPunctRanges[mid].hi) {
            lo = mid + 1;
        } else {
            return true;
        }
    }
    return false;
}

// Unicode White_Space property.
inline bool is_space(std::uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x20: case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

inline std::uint32_t to_lower(std::uint32_t cp) {
    size_t lo = 0, hi = sizeof(kLowerPairs) / sizeof(kLowerPairs[0]);
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (kLowerPairs[mid].from < cp) {
            lo = mid + 1;
        } else if (kLowerPairs[mid].from > cp) {
            hi = mid;
        } else {
            return kLowerPairs[mid].to;
        }
    }
    return cp;
}

inline std::string lowercase(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    size_t pos = 0;
    while (pos < s.size()) {
        size_t len = 0;
        std::uint32_t cp = decode_utf8(s, pos, &len);
        if (len == 1 && cp >= 0x80) {
            out.push_back(s[pos]);  // opaque byte, copy verbatim
        } else {
            encode_utf8(to_lower(cp), &out);
        }
        pos += len;
    }
    return out;
}

// True when every scalar in the string is punctuation (non-empty). An
// optional single leading ASCII space is ignored so that space-prefixed
// subword symbols classify the same as their bare forms.
inline bool is_punct_token(std::string_view s) {
    size_t pos = 0;
    if (!s.empty() && s[0] == ' ') pos = 1;
    if (pos >= s.size()) return false;
    while (pos < s.size()) {
        size_t len = 0;
        std::uint32_t cp = decode_utf8(s, pos, &len);
        if (!is_punct(cp)) return false;
        pos += len;
    }
    return true;
}

}  // namespace bilex::uni
