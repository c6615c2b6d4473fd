#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "detriever/errors.hpp"

namespace detriever::detail {

template <typename T>
T to_little_endian(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        return value;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }
}

// Append-only little-endian encoder into an in-memory buffer.
class ByteWriter {
public:
    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        value = to_little_endian(value);
        const auto* p = reinterpret_cast<const char*>(&value);
        buf_.append(p, sizeof(T));
    }

    void put_bytes(std::string_view bytes) { buf_.append(bytes); }

    // u32 length prefix followed by raw UTF-8 bytes.
    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    void put_floats(std::span<const float> values) {
        if constexpr (std::endian::native == std::endian::little) {
            buf_.append(reinterpret_cast<const char*>(values.data()),
                        values.size() * sizeof(float));
        } else {
            for (float v : values) put(v);
        }
    }

    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

// Bounds-checked little-endian decoder. Running off the end is a
// CorruptionError: every format here is self-sized, so a short read means
// truncation.
class ByteReader {
public:
    explicit ByteReader(std::string_view data, std::string context = {})
        : data_(data), context_(std::move(context)) {}

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        require(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little_endian(value);
    }

    std::string_view get_bytes(std::size_t n) {
        require(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::string get_string() {
        auto n = get<std::uint32_t>();
        return std::string(get_bytes(n));
    }

    void get_floats(std::span<float> out) {
        require(out.size() * sizeof(float));
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out.data(), data_.data() + pos_, out.size() * sizeof(float));
            pos_ += out.size() * sizeof(float);
        } else {
            for (auto& v : out) v = get<float>();
        }
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

private:
    void require(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw CorruptionError(context_ + ": truncated at byte " + std::to_string(pos_) +
                                  " (need " + std::to_string(n) + ", have " +
                                  std::to_string(data_.size() - pos_) + ")");
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string context_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    return data;
}

inline void write_file(const std::string& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw IoError("write failure on '" + path + "'");
}

// 64-bit FNV-1a; used for config digests and per-anchor seed derivation.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            hash_ ^= c;
            hash_ *= 0x100000001b3ULL;
        }
    }
    template <typename T>
    void update_value(T value) {
        static_assert(std::is_arithmetic_v<T>);
        value = to_little_endian(value);
        update(std::string_view(reinterpret_cast<const char*>(&value), sizeof(T)));
    }
    std::uint64_t digest() const noexcept { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

} // namespace detriever::detail
