#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedcase/binio.hpp"
#include "fedcase/errors.hpp"

namespace fedcase {

// Grayscale labeled image. `severity` is generation-time ground truth in
// [0,1] used as the ranking oracle; it is 0 for negatives by construction.
struct LabeledImage {
    std::uint64_t id = 0;
    std::uint8_t label = 0; // 0 = negative, 1 = positive
    double severity = 0.0;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major, width*height

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    void validate() const {
        if (pixels.size() != pixel_count())
            throw ShapeError("image " + std::to_string(id) + ": pixel count " +
                             std::to_string(pixels.size()) + " != " + std::to_string(width) +
                             "x" + std::to_string(height));
        if (label > 1)
            throw StateError("image " + std::to_string(id) + ": label must be 0 or 1");
        if (!(severity >= 0.0 && severity <= 1.0) || !std::isfinite(severity))
            throw StateError("image " + std::to_string(id) + ": severity outside [0,1]");
        if (label == 0 && severity != 0.0)
            throw StateError("image " + std::to_string(id) + ": negative with nonzero severity");
    }
};

constexpr std::uint32_t kDatasetFormatVersion = 1;

// Dataset file layout ("FCDS"):
//   magic "FCDS" | version u32 | count u32 | width u16 | height u16
//   per image: id u64 | label u8 | severity f64 | pixels (width*height bytes)
//   crc32 u32 over everything after the magic
inline std::vector<std::uint8_t> serialize_dataset(const std::vector<LabeledImage>& images) {
    ByteWriter w;
    w.put_magic("FCDS");
    w.put_u32(kDatasetFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(images.size()));
    const std::uint16_t width = images.empty() ? 0 : images.front().width;
    const std::uint16_t height = images.empty() ? 0 : images.front().height;
    w.put_u16(width);
    w.put_u16(height);
    for (const auto& img : images) {
        img.validate();
        if (img.width != width || img.height != height)
            throw ShapeError("dataset images must share dimensions");
        w.put_u64(img.id);
        w.put_u8(img.label);
        w.put_f64(img.severity);
        w.put_bytes(img.pixels.data(), img.pixels.size());
    }
    const std::uint32_t crc = crc32(w.bytes(), 4);
    ByteWriter out;
    out.put_bytes(w.bytes().data(), w.size());
    out.put_u32(crc);
    return out.bytes();
}

inline std::vector<LabeledImage> deserialize_dataset(const std::vector<std::uint8_t>& bytes,
                                                     const std::string& name = "<buffer>") {
    if (bytes.size() < 8) throw IoError(name + ": too short for a dataset file");
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    const std::uint32_t actual = crc32(bytes.data() + 4, bytes.size() - 8);
    if (stored != actual)
        throw IoError(name + ": CRC mismatch, file corrupted");

    ByteReader r(bytes.data(), bytes.size() - 4, name);
    r.expect_magic("FCDS");
    const std::uint32_t version = r.get_u32();
    if (version != kDatasetFormatVersion)
        throw IoError(name + ": unsupported dataset version " + std::to_string(version));
    const std::uint32_t count = r.get_u32();
    const std::uint16_t width = r.get_u16();
    const std::uint16_t height = r.get_u16();
    std::vector<LabeledImage> images;
    images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        LabeledImage img;
        img.width = width;
        img.height = height;
        img.id = r.get_u64();
        img.label = r.get_u8();
        img.severity = r.get_f64();
        img.pixels.resize(img.pixel_count());
        r.get_bytes(img.pixels.data(), img.pixels.size());
        img.validate();
        images.push_back(std::move(img));
    }
    if (r.remaining() != 0)
        throw IoError(name + ": trailing bytes after image data");
    return images;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<LabeledImage>& images) {
    write_file(path, serialize_dataset(images));
}

inline std::vector<LabeledImage> load_dataset(const std::filesystem::path& path) {
    return deserialize_dataset(read_file(path), path.string());
}

} // namespace fedcase
