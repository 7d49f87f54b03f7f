#ifndef ENGAGE_HASHING_HPP
#define ENGAGE_HASHING_HPP

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

#include "common.hpp"

namespace engage {

using Sha256Digest = std::array<unsigned char, 32>;

/**
 * Incremental SHA-256 over OpenSSL's EVP interface.
 */
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            throw Error("sha256: failed to initialise digest context");
        }
    }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    ~Sha256() { EVP_MD_CTX_free(ctx_); }

    Sha256& update(std::string_view bytes) {
        EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
        return *this;
    }

    Sha256Digest finish() {
        Sha256Digest out{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, out.data(), &len);
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string to_hex(const Sha256Digest& digest) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (unsigned char c : digest) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 0xF]);
    }
    return out;
}

inline std::string sha256_hex(std::string_view bytes) { return to_hex(Sha256().update(bytes).finish()); }

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "' for hashing");
    }
    Sha256 h;
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), buffer.size());
        h.update(std::string_view(buffer.data(), static_cast<std::size_t>(in.gcount())));
    }
    return to_hex(h.finish());
}

/// 64-bit FNV-1a; stable across platforms, used for feature hashing and checksums.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace engage

#endif
