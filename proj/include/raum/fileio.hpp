// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "raum/error.hpp"

namespace raum::fileio {

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!os) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    write_bytes(path, text.data(), text.size());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& path) {
    const auto b = read_bytes(path);
    return {b.begin(), b.end()};
}

} // namespace raum::fileio
