#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace diffgepci::binary {

// Little-endian encoders independent of host byte order.

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_magic(std::vector<std::uint8_t>& out, std::string_view magic) {
    out.insert(out.end(), magic.begin(), magic.end());
}

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

    void expect_magic(std::string_view magic) {
        need(magic.size());
        if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
            throw IoError(source_ + ": bad magic, expected \"" + std::string(magic) + "\"");
        }
        pos_ += magic.size();
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    const std::string& source() const noexcept { return source_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError(source_ + ": truncated file");
    }

    std::vector<std::uint8_t> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace diffgepci::binary
