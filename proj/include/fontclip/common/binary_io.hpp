#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hash.hpp"

namespace fontclip {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian byte buffer used for every binary file we write.
///
/// Container layout shared by weight files, checkpoints and indexes:
///
///     offset 0   8 bytes   magic (file kind, ASCII, NUL padded)
///     offset 8   8 bytes   u64 LE header length H
///     offset 16  H bytes   UTF-8 JSON header
///     offset 16+H          payload (layout described by the header)
///
/// The header always carries "payload_bytes" and "payload_fnv1a" (hex) so a
/// truncated or corrupted payload is rejected at load time.
class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f32s(std::span<const float> vs) {
        bytes_.reserve(bytes_.size() + vs.size() * 4);
        for (float v : vs) f32(v);
    }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void f32s(std::span<float> out) {
        need(out.size() * 4);
        for (auto& v : out) v = f32();
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(u32()); }

    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("unexpected end of data");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::array<char, 8> make_magic(std::string_view tag) {
    std::array<char, 8> m{};
    std::memcpy(m.data(), tag.data(), std::min<std::size_t>(tag.size(), 8));
    return m;
}

/// Writes magic + header + payload. The header's payload fields are filled in here.
inline std::vector<std::uint8_t> pack_container(std::string_view magic, nlohmann::json header,
                                                std::span<const std::uint8_t> payload) {
    header["payload_bytes"] = payload.size();
    header["payload_fnv1a"] = hex_digest(Fnv1a{}.update(payload.data(), payload.size()).digest());
    const std::string text = header.dump();
    ByteWriter w;
    const auto m = make_magic(magic);
    w.raw(std::string_view(m.data(), m.size()));
    w.u64(text.size());
    w.raw(text);
    std::vector<std::uint8_t> out = w.bytes();
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

struct Container {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

inline Container unpack_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic) {
    ByteReader r(bytes);
    const std::string magic = r.raw(8);
    const auto want = make_magic(expected_magic);
    if (magic != std::string(want.data(), want.size()))
        throw FormatError("bad magic: not a " + std::string(expected_magic) + " file");
    const auto header_len = r.u64();
    if (header_len > r.remaining()) throw FormatError("header length exceeds file size");
    Container c;
    try {
        c.header = nlohmann::json::parse(r.raw(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt header: ") + e.what());
    }
    const std::size_t offset = 16 + header_len;
    c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    if (!c.header.contains("payload_bytes") || c.header["payload_bytes"].get<std::size_t>() != c.payload.size())
        throw FormatError("payload size mismatch (truncated file?)");
    const auto digest = hex_digest(Fnv1a{}.update(c.payload.data(), c.payload.size()).digest());
    if (c.header.value("payload_fnv1a", std::string{}) != digest) throw FormatError("payload checksum mismatch");
    return c;
}

}  // namespace fontclip
