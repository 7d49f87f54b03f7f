#ifndef ENGAGE_BINARY_IO_HPP
#define ENGAGE_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "common.hpp"
#include "hashing.hpp"

/**
 * @file binary_io.hpp
 *
 * @brief Versioned binary container shared by every `.bin` artifact.
 *
 * Layout (all integers little-endian):
 *
 * | bytes | field                                   |
 * |-------|-----------------------------------------|
 * | 8     | magic `ENGAGE\r\n`                      |
 * | 4     | format version (currently 1)            |
 * | 4     | payload kind (see `ContainerKind`)      |
 * | 8     | payload length N                        |
 * | N     | payload                                 |
 * | 8     | FNV-1a 64 checksum of the payload       |
 */

namespace engage {

class FormatError : public Error {
public:
    using Error::Error;
};

enum class ContainerKind : std::uint32_t { corpus = 1, embeddings = 2, reduced = 3, topics = 4 };

inline constexpr std::string_view container_magic{"ENGAGE\r\n", 8};
inline constexpr std::uint32_t container_version = 1;

inline const char* kind_name(ContainerKind k) {
    switch (k) {
        case ContainerKind::corpus: return "corpus";
        case ContainerKind::embeddings: return "embeddings";
        case ContainerKind::reduced: return "reduced";
        case ContainerKind::topics: return "topics";
    }
    return "unknown";
}

namespace detail {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&v, bytes, sizeof(T));
    }
    return v;
}

}  // namespace detail

class ByteWriter {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        v = detail::to_little(v);
        buffer_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    void put_string(std::string_view s) {
        put<std::uint64_t>(s.size());
        buffer_.append(s);
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    void put_vector(const std::vector<T>& values) {
        put<std::uint64_t>(values.size());
        for (T v : values) {
            put(v);
        }
    }

    const std::string& bytes() const { return buffer_; }

private:
    std::string buffer_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return detail::to_little(v);
    }

    std::string get_string() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::string out(bytes_.substr(pos_, n));
        pos_ += n;
        return out;
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_vector() {
        const auto n = get<std::uint64_t>();
        need(n * sizeof(T));
        std::vector<T> out(n);
        for (auto& v : out) {
            v = get<T>();
        }
        return out;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError("truncated payload");
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline std::string wrap_container(ContainerKind kind, const std::string& payload) {
    ByteWriter w;
    std::string out(container_magic);
    w.put<std::uint32_t>(container_version);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
    w.put<std::uint64_t>(payload.size());
    out += w.bytes();
    out += payload;
    ByteWriter tail;
    tail.put<std::uint64_t>(fnv1a64(payload));
    out += tail.bytes();
    return out;
}

/// Kind tag of a container without validating the rest of the envelope.
inline ContainerKind container_kind(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 8) != container_magic) {
        throw FormatError("not an engage container (bad magic)");
    }
    ByteReader r(bytes.substr(12, 4));
    return static_cast<ContainerKind>(r.get<std::uint32_t>());
}

/**
 * Validates the envelope and returns the payload. Throws `FormatError` on a bad magic,
 * unsupported version, kind mismatch, truncation or checksum failure.
 */
inline std::string unwrap_container(std::string_view bytes, ContainerKind expected) {
    constexpr std::size_t header = 8 + 4 + 4 + 8;
    if (bytes.size() < header + 8 || bytes.substr(0, 8) != container_magic) {
        throw FormatError("not an engage container (bad magic)");
    }
    ByteReader r(bytes.substr(8, header - 8));
    const auto version = r.get<std::uint32_t>();
    const auto kind = static_cast<ContainerKind>(r.get<std::uint32_t>());
    const auto length = r.get<std::uint64_t>();
    if (version != container_version) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    if (kind != expected) {
        throw FormatError(std::string("expected a ") + kind_name(expected) + " container, found " + kind_name(kind));
    }
    if (length != bytes.size() - header - 8) {
        throw FormatError("container length mismatch");
    }
    std::string payload(bytes.substr(header, length));
    ByteReader tail(bytes.substr(header + length));
    if (tail.get<std::uint64_t>() != fnv1a64(payload)) {
        throw FormatError("container checksum mismatch");
    }
    return payload;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("failed writing '" + path + "'");
    }
}

}  // namespace engage

#endif
