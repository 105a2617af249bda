#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedcase/errors.hpp"

namespace fedcase {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), as used by zlib.
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::vector<std::uint8_t>& data, std::size_t from = 0) {
    return crc32(data.data() + from, data.size() - from);
}

// Little-endian byte sink for the binary file formats.
class ByteWriter {
public:
    void put_u8(std::uint8_t v) { buf_.push_back(v); }
    void put_u16(std::uint16_t v) { put_uint(v, 2); }
    void put_u32(std::uint32_t v) { put_uint(v, 4); }
    void put_u64(std::uint64_t v) { put_uint(v, 8); }
    void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }
    void put_bytes(const std::uint8_t* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void put_magic(const char (&m)[5]) { buf_.insert(buf_.end(), m, m + 4); }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    void put_uint(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader; truncation raises IoError.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string name)
        : data_(data), size_(size), name_(std::move(name)) {}
    explicit ByteReader(const std::vector<std::uint8_t>& data, std::string name = "<buffer>")
        : ByteReader(data.data(), data.size(), std::move(name)) {}

    std::uint8_t get_u8() { return static_cast<std::uint8_t>(get_uint(1)); }
    std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_uint(2)); }
    std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_uint(4)); }
    std::uint64_t get_u64() { return get_uint(8); }
    double get_f64() { return std::bit_cast<double>(get_u64()); }

    void get_bytes(std::uint8_t* out, std::size_t n) {
        need(n);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

    void expect_magic(const char (&m)[5]) {
        need(4);
        if (std::memcmp(data_ + pos_, m, 4) != 0)
            throw IoError(name_ + ": bad magic, expected \"" + std::string(m, 4) + "\"");
        pos_ += 4;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    const std::string& name() const { return name_; }

private:
    std::uint64_t get_uint(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    void need(std::size_t n) {
        if (size_ - pos_ < n)
            throw IoError(name_ + ": truncated file (need " + std::to_string(n) +
                          " bytes at offset " + std::to_string(pos_) + ")");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string name_;
};

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f) throw IoError("read failed: " + path.string());
    return bytes;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

} // namespace fedcase
