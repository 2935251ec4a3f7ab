#pragma once

// Little-endian scalar IO for the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "densal/error.hpp"

namespace densal::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename V>
    requires std::is_arithmetic_v<V>
void write(std::ostream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
    requires std::is_arithmetic_v<V>
void write_array(std::ostream& out, const V* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(V)));
}

inline void write_string(std::ostream& out, const std::string& s) {
    write<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename V>
    requires std::is_arithmetic_v<V>
V read(std::istream& in, const char* what) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(V));
    if (!in) throw FormatError(std::string("unexpected end of file while reading ") + what);
    return value;
}

template <typename V>
    requires std::is_arithmetic_v<V>
std::vector<V> read_array(std::istream& in, std::size_t count, const char* what) {
    std::vector<V> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(V)));
    if (!in) throw FormatError(std::string("unexpected end of file while reading ") + what);
    return data;
}

inline std::string read_string(std::istream& in, const char* what, std::size_t limit = 1 << 20) {
    const auto size = read<std::uint64_t>(in, what);
    if (size > limit) throw FormatError(std::string("implausible string length for ") + what);
    std::string s(size, '\0');
    in.read(s.data(), static_cast<std::streamsize>(size));
    if (!in) throw FormatError(std::string("unexpected end of file while reading ") + what);
    return s;
}

inline void expect_magic(std::istream& in, const std::string& magic) {
    std::string got(magic.size(), '\0');
    in.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in || got != magic) throw FormatError("bad magic: expected " + magic);
}

}  // namespace densal::io
