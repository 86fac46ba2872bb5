#include "uadbo/util.hpp"

#include <cmath>
#include <cstring>

namespace uadbo {

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
} // namespace

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        const unsigned v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back(kAlphabet[v & 63]);
    }
    const std::size_t rem = len - i;
    if (rem == 1) {
        const unsigned v = data[i] << 16;
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        const unsigned v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    int buffer = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = decode_char(c);
        if (v < 0) throw Error(msg("base64: invalid character '", c, "'"));
        buffer = (buffer << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buffer >> bits) & 0xff));
        }
    }
    return out;
}

std::string base64_encode_doubles(const std::vector<double>& values) {
    // Little-endian float64 is the on-disk layout; this code targets
    // little-endian hosts.
    static_assert(sizeof(double) == 8);
    return base64_encode(reinterpret_cast<const unsigned char*>(values.data()),
                         values.size() * sizeof(double));
}

std::vector<double> base64_decode_doubles(const std::string& text) {
    const std::vector<unsigned char> raw = base64_decode(text);
    if (raw.size() % sizeof(double) != 0)
        throw Error("base64: blob size is not a multiple of 8 bytes");
    std::vector<double> out(raw.size() / sizeof(double));
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

} // namespace uadbo
