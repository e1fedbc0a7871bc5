#pragma once

#include <filesystem>

#include "binary_io.hpp"
#include "volume.hpp"

namespace diffgepci {

// GPCV layout: "GPCV", version byte, u32 dims (d0, d1, d2, Q), then
// Q * d0 * d1 * d2 float32 values in C order. Everything little-endian.

inline constexpr std::uint8_t kVolumeFormatVersion = 1;

inline std::vector<std::uint8_t> encode_volume(const Volume& v) {
    std::vector<std::uint8_t> out;
    out.reserve(9 + 16 + v.values().size() * 4);
    binary::put_magic(out, "GPCV");
    binary::put_u8(out, kVolumeFormatVersion);
    for (std::size_t d : v.dims()) binary::put_u32(out, static_cast<std::uint32_t>(d));
    binary::put_u32(out, static_cast<std::uint32_t>(v.channels()));
    for (float x : v.values()) binary::put_f32(out, x);
    return out;
}

inline Volume decode_volume(std::vector<std::uint8_t> bytes, std::string source = "<memory>") {
    binary::Reader in(std::move(bytes), std::move(source));
    in.expect_magic("GPCV");
    const auto version = in.u8();
    if (version != kVolumeFormatVersion) {
        throw IoError(in.source() + ": unsupported GPCV version " + std::to_string(version));
    }
    Volume::Dims dims{};
    for (auto& d : dims) d = in.u32();
    const std::size_t q = in.u32();
    if (q == 0) throw IoError(in.source() + ": zero channel count");
    const std::size_t count = dims[0] * dims[1] * dims[2] * q;
    if (in.remaining() != count * 4) throw IoError(in.source() + ": payload size does not match header");
    Volume v(dims, q);
    for (float& x : v.values()) x = in.f32();
    return v;
}

inline void save_volume(const std::filesystem::path& path, const Volume& v) { binary::write_file(path, encode_volume(v)); }

inline Volume load_volume(const std::filesystem::path& path) { return decode_volume(binary::read_file(path), path.string()); }

} // namespace diffgepci
