#pragma once

// Little-endian primitive encoding shared by the checkpoint and datastore
// formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "trime/error.hpp"

namespace trime::binio {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    if (!is.read(bytes.data(), sizeof(T))) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) {
    os.write(magic, 4);
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4];
    if (!is.read(got, 4)) {
        throw FormatError("truncated file: missing magic");
    }
    if (std::memcmp(got, magic, 4) != 0) {
        throw FormatError(std::string("bad magic, expected ") + magic);
    }
}

}  // namespace trime::binio
