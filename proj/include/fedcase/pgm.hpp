#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedcase/binio.hpp"
#include "fedcase/errors.hpp"
#include "fedcase/image.hpp"

namespace fedcase {

// Binary PGM (P5), maxval 255.
inline std::vector<std::uint8_t> encode_pgm(const std::vector<std::uint8_t>& pixels, int width,
                                            int height) {
    if (pixels.size() != static_cast<std::size_t>(width) * height)
        throw ShapeError("encode_pgm: pixel buffer does not match dimensions");
    const std::string header =
        "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

// Lays out the query followed by the ranked cases in one row, separated by
// 2px gutters, for eyeballing a retrieval result.
inline std::vector<std::uint8_t> contact_sheet(const LabeledImage& query,
                                               const std::vector<LabeledImage>& cases) {
    const int w = query.width, h = query.height;
    const int gutter = 2;
    const int tiles = 1 + static_cast<int>(cases.size());
    const int sheet_w = tiles * w + (tiles - 1) * gutter;
    std::vector<std::uint8_t> sheet(static_cast<std::size_t>(sheet_w) * h, 255);

    auto blit = [&](const LabeledImage& img, int tile) {
        if (img.width != w || img.height != h)
            throw ShapeError("contact_sheet: tile dimensions differ from the query");
        const int x0 = tile * (w + gutter);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                sheet[static_cast<std::size_t>(y) * sheet_w + x0 + x] =
                    img.pixels[static_cast<std::size_t>(y) * w + x];
    };
    blit(query, 0);
    for (std::size_t i = 0; i < cases.size(); ++i) blit(cases[i], static_cast<int>(i) + 1);
    return encode_pgm(sheet, sheet_w, h);
}

inline void save_contact_sheet(const std::filesystem::path& path, const LabeledImage& query,
                               const std::vector<LabeledImage>& cases) {
    write_file(path, contact_sheet(query, cases));
}

} // namespace fedcase
