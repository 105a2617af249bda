#pragma once

#include <cstdint>
#include <vector>

#include "fedcase/federated.hpp"
#include "fedcase/image.hpp"
#include "fedcase/model.hpp"
#include "fedcase/rng.hpp"

namespace testutil {

inline fedcase::LabeledImage random_image(std::uint16_t w, std::uint16_t h, std::uint64_t id,
                                          std::uint8_t label, fedcase::RngStream& rng) {
    fedcase::LabeledImage img;
    img.id = id;
    img.label = label;
    img.severity = label == 1 ? 0.25 + 0.5 * rng.uniform() : 0.0;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_below(256));
    return img;
}

inline std::vector<fedcase::LabeledImage> random_images(std::uint16_t w, std::uint16_t h,
                                                        std::size_t n, std::uint64_t id_base,
                                                        fedcase::RngStream& rng) {
    std::vector<fedcase::LabeledImage> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(random_image(w, h, id_base + i, i % 2 == 0 ? 0 : 1, rng));
    return out;
}

inline fedcase::ClientDataset random_client(int id, std::uint16_t w, std::uint16_t h,
                                            std::size_t n_train, std::size_t n_val,
                                            fedcase::RngStream& rng) {
    fedcase::ClientDataset c;
    c.client_id = id;
    c.train = random_images(w, h, n_train, static_cast<std::uint64_t>(id) * 100000, rng);
    c.validation =
        random_images(w, h, n_val, static_cast<std::uint64_t>(id) * 100000 + 50000, rng);
    return c;
}

inline bool models_bitwise_equal(const fedcase::GlobalModel& a, const fedcase::GlobalModel& b) {
    return fedcase::serialize_checkpoint(a) == fedcase::serialize_checkpoint(b);
}

// Flattens a gradient in block order for norm/coordinate inspection.
inline std::vector<double> flatten(const fedcase::GradSet& g) {
    std::vector<double> out;
    fedcase::for_each_block(g, [&](const std::vector<double>& blk) {
        out.insert(out.end(), blk.begin(), blk.end());
    });
    return out;
}

inline std::vector<double> flatten(const fedcase::GlobalModel& m) {
    std::vector<double> out;
    fedcase::for_each_block(m, [&](const std::vector<double>& blk) {
        out.insert(out.end(), blk.begin(), blk.end());
    });
    return out;
}

} // namespace testutil
