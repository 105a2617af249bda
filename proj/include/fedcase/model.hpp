#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedcase/binio.hpp"
#include "fedcase/errors.hpp"
#include "fedcase/image.hpp"
#include "fedcase/rng.hpp"

namespace fedcase {

constexpr std::uint32_t kCheckpointFormatVersion = 1;
constexpr std::size_t kNumClasses = 2;

// One affine layer, weights row-major (out x in).
struct Affine {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;

    static Affine zeros(std::size_t in, std::size_t out) {
        Affine a;
        a.in = in;
        a.out = out;
        a.w.assign(in * out, 0.0);
        a.b.assign(out, 0.0);
        return a;
    }

    bool same_shape(const Affine& o) const { return in == o.in && out == o.out; }

    // y = W x + b
    void apply(const double* x, double* y) const {
        for (std::size_t r = 0; r < out; ++r) {
            double acc = b[r];
            const double* row = w.data() + r * in;
            for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
            y[r] = acc;
        }
    }
};

// The classifier: rectified affine backbone ending in the feature layer,
// plus a 2-logit head. Every parameter belongs to exactly one of
// {backbone, head}; the split drives the freeze schedule and retrieval
// reads the last backbone activation as the embedding.
struct GlobalModel {
    std::vector<Affine> backbone;
    Affine head;
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t feature_dim = 0;
    std::uint32_t version_tag = kCheckpointFormatVersion;

    std::size_t layer_count() const { return backbone.size() + 1; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : backbone) n += l.w.size() + l.b.size();
        return n + head.w.size() + head.b.size();
    }

    bool same_shape(const GlobalModel& o) const {
        if (backbone.size() != o.backbone.size() || !head.same_shape(o.head)) return false;
        for (std::size_t i = 0; i < backbone.size(); ++i)
            if (!backbone[i].same_shape(o.backbone[i])) return false;
        return true;
    }

    void validate() const {
        if (backbone.empty()) throw ShapeError("model: backbone must have at least one layer");
        std::size_t prev = input_dim;
        if (hidden_dims.size() != backbone.size())
            throw ShapeError("model: hidden_dims/backbone size mismatch");
        for (std::size_t i = 0; i < backbone.size(); ++i) {
            const auto& l = backbone[i];
            if (l.in != prev || l.out != hidden_dims[i] || l.w.size() != l.in * l.out ||
                l.b.size() != l.out)
                throw ShapeError("model: backbone layer " + std::to_string(i) +
                                 " does not chain (in=" + std::to_string(l.in) +
                                 ", expected " + std::to_string(prev) + ")");
            prev = l.out;
        }
        if (feature_dim != prev)
            throw ShapeError("model: feature_dim != last backbone width");
        if (head.in != feature_dim || head.out != kNumClasses)
            throw ShapeError("model: head must map feature_dim -> 2");
        auto finite = [](const std::vector<double>& v) {
            for (double x : v)
                if (!std::isfinite(x)) return false;
            return true;
        };
        for (const auto& l : backbone)
            if (!finite(l.w) || !finite(l.b)) throw NumericError("model: non-finite parameter");
        if (!finite(head.w) || !finite(head.b)) throw NumericError("model: non-finite parameter");
    }
};

// Gradient (or any parameter-shaped value) matching a model's layout.
struct GradSet {
    std::vector<Affine> backbone;
    Affine head;

    static GradSet zeros_like(const GlobalModel& m) {
        GradSet g;
        g.backbone.reserve(m.backbone.size());
        for (const auto& l : m.backbone) g.backbone.push_back(Affine::zeros(l.in, l.out));
        g.head = Affine::zeros(m.head.in, m.head.out);
        return g;
    }
};

// Visits every parameter block in layer order (backbone first, head last);
// serialization, aggregation and the optimizers all share this order.
template <typename Fn>
void for_each_block(GlobalModel& m, Fn&& fn) {
    for (auto& l : m.backbone) {
        fn(l.w);
        fn(l.b);
    }
    fn(m.head.w);
    fn(m.head.b);
}

template <typename Fn>
void for_each_block(const GlobalModel& m, Fn&& fn) {
    for (const auto& l : m.backbone) {
        fn(l.w);
        fn(l.b);
    }
    fn(m.head.w);
    fn(m.head.b);
}

template <typename Fn>
void for_each_block(GradSet& g, Fn&& fn) {
    for (auto& l : g.backbone) {
        fn(l.w);
        fn(l.b);
    }
    fn(g.head.w);
    fn(g.head.b);
}

template <typename Fn>
void for_each_block(const GradSet& g, Fn&& fn) {
    for (const auto& l : g.backbone) {
        fn(l.w);
        fn(l.b);
    }
    fn(g.head.w);
    fn(g.head.b);
}

// Scaled-uniform fan-in init: U(-1/sqrt(in), 1/sqrt(in)), seeded.
inline GlobalModel make_model(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                              std::uint64_t seed) {
    if (hidden_dims.empty()) throw ShapeError("make_model: need at least one hidden layer");
    GlobalModel m;
    m.input_dim = input_dim;
    m.hidden_dims = hidden_dims;
    m.feature_dim = hidden_dims.back();
    RngStream rng(derive_seed(seed, 0x6d6f64656cull)); // "model"
    auto init_layer = [&rng](std::size_t in, std::size_t out) {
        Affine l = Affine::zeros(in, out);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& v : l.w) v = (2.0 * rng.uniform() - 1.0) * bound;
        // biases start at zero
        return l;
    };
    std::size_t prev = input_dim;
    for (std::size_t h : hidden_dims) {
        m.backbone.push_back(init_layer(prev, h));
        prev = h;
    }
    m.head = init_layer(prev, kNumClasses);
    m.validate();
    return m;
}

// Default desk-scale architecture: 32x32 input, 128 -> 64 backbone, 2 logits.
inline GlobalModel make_default_model(std::uint64_t seed) {
    return make_model(1024, {128, 64}, seed);
}

inline std::vector<double> scale_pixels(const LabeledImage& img) {
    std::vector<double> x(img.pixels.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = img.pixels[i] / 255.0;
    return x;
}

struct ForwardResult {
    std::vector<double> feature;
    std::array<double, kNumClasses> logits{};
};

// All layer activations, kept for backprop. activations[0] is the scaled
// input; activations[i+1] is the post-rectifier output of backbone layer i.
struct ForwardTrace {
    std::vector<std::vector<double>> activations;
    std::array<double, kNumClasses> logits{};
};

inline ForwardTrace forward_trace(const GlobalModel& model, const std::vector<double>& x) {
    if (x.size() != model.input_dim)
        throw ShapeError("forward: input size " + std::to_string(x.size()) +
                         " != model input_dim " + std::to_string(model.input_dim));
    ForwardTrace t;
    t.activations.reserve(model.backbone.size() + 1);
    t.activations.push_back(x);
    for (const auto& layer : model.backbone) {
        std::vector<double> y(layer.out);
        layer.apply(t.activations.back().data(), y.data());
        for (auto& v : y) v = v > 0.0 ? v : 0.0;
        t.activations.push_back(std::move(y));
    }
    std::array<double, kNumClasses> logits{};
    model.head.apply(t.activations.back().data(), logits.data());
    t.logits = logits;
    return t;
}

// Feature embedding (post-rectifier output of the last backbone layer) and
// the two class logits for one image.
inline ForwardResult forward(const GlobalModel& model, const LabeledImage& img) {
    ForwardTrace t = forward_trace(model, scale_pixels(img));
    ForwardResult r;
    r.feature = std::move(t.activations.back());
    r.logits = t.logits;
    return r;
}

inline std::array<double, kNumClasses> softmax2(const std::array<double, kNumClasses>& logits) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

struct Prediction {
    int label = 0;
    double p_positive = 0.0;
};

inline Prediction predict(const GlobalModel& model, const LabeledImage& img) {
    const auto logits = forward(model, img).logits;
    const auto p = softmax2(logits);
    return {logits[1] > logits[0] ? 1 : 0, p[1]};
}

// Inverse class-frequency weights, w_c = N / (2 * N_c).
struct ClassWeights {
    double w0 = 1.0;
    double w1 = 1.0;

    double of(std::uint8_t label) const { return label == 0 ? w0 : w1; }
};

inline ClassWeights class_weights(const std::vector<LabeledImage>& data) {
    std::size_t n0 = 0, n1 = 0;
    for (const auto& img : data) (img.label == 0 ? n0 : n1)++;
    if (n0 == 0 || n1 == 0)
        throw StateError("class_weights: degenerate dataset, both classes required (n0=" +
                         std::to_string(n0) + ", n1=" + std::to_string(n1) + ")");
    const double n = static_cast<double>(n0 + n1);
    return {n / (2.0 * static_cast<double>(n0)), n / (2.0 * static_cast<double>(n1))};
}

enum class GradMode { batch_mean, per_example };

struct LossGrads {
    double loss = 0.0;               // (1/B) sum_i w_{y_i} * CE_i
    GradSet batch_mean;              // filled in batch_mean mode
    std::vector<GradSet> per_example; // filled in per_example mode
};

namespace detail {

// Backprop for one example. dlogits = w_y * (softmax - onehot(y)); the class
// weight rides inside the per-example gradient so DP clipping bounds the
// weighted contribution.
inline double example_loss_grad(const GlobalModel& model, const LabeledImage& img,
                                const ClassWeights& cw, GradSet& out) {
    const std::vector<double> x = scale_pixels(img);
    const ForwardTrace t = forward_trace(model, x);
    const auto p = softmax2(t.logits);
    const double w = cw.of(img.label);
    const double py = img.label == 0 ? p[0] : p[1];
    const double loss = -w * std::log(std::max(py, 1e-300));

    std::array<double, kNumClasses> dlogits = {w * (p[0] - (img.label == 0 ? 1.0 : 0.0)),
                                               w * (p[1] - (img.label == 1 ? 1.0 : 0.0))};

    // head
    const auto& feat = t.activations.back();
    for (std::size_t r = 0; r < model.head.out; ++r) {
        double* wrow = out.head.w.data() + r * model.head.in;
        for (std::size_t c = 0; c < model.head.in; ++c) wrow[c] = dlogits[r] * feat[c];
        out.head.b[r] = dlogits[r];
    }

    // delta on the feature layer
    std::vector<double> delta(model.feature_dim, 0.0);
    for (std::size_t c = 0; c < model.head.in; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < model.head.out; ++r) acc += model.head.w[r * model.head.in + c] * dlogits[r];
        delta[c] = acc;
    }

    // backbone, last to first
    for (std::size_t li = model.backbone.size(); li-- > 0;) {
        const Affine& layer = model.backbone[li];
        const auto& input = t.activations[li];
        const auto& output = t.activations[li + 1];
        // rectifier gate: outputs that were clamped pass no gradient
        for (std::size_t r = 0; r < layer.out; ++r)
            if (output[r] <= 0.0) delta[r] = 0.0;
        Affine& g = out.backbone[li];
        for (std::size_t r = 0; r < layer.out; ++r) {
            double* grow = g.w.data() + r * layer.in;
            for (std::size_t c = 0; c < layer.in; ++c) grow[c] = delta[r] * input[c];
            g.b[r] = delta[r];
        }
        if (li > 0) {
            std::vector<double> prev_delta(layer.in, 0.0);
            for (std::size_t c = 0; c < layer.in; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < layer.out; ++r) acc += layer.w[r * layer.in + c] * delta[r];
                prev_delta[c] = acc;
            }
            delta = std::move(prev_delta);
        }
    }
    return loss;
}

} // namespace detail

// Class-weighted softmax cross-entropy and its exact gradients. batch_mean
// accumulates per-example gradients in example order and scales by 1/B, so
// the DP path with sigma=0, C=inf reproduces it bit for bit.
inline LossGrads loss_and_grads(const GlobalModel& model, const std::vector<LabeledImage>& batch,
                                const ClassWeights& cw, GradMode mode) {
    if (batch.empty()) throw StateError("loss_and_grads: empty batch");
    if (!(cw.w0 > 0.0) || !(cw.w1 > 0.0))
        throw StateError("loss_and_grads: class weights must be positive");
    LossGrads out;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    if (mode == GradMode::per_example) {
        out.per_example.reserve(batch.size());
        for (const auto& img : batch) {
            GradSet g = GradSet::zeros_like(model);
            loss_sum += detail::example_loss_grad(model, img, cw, g);
            out.per_example.push_back(std::move(g));
        }
    } else {
        out.batch_mean = GradSet::zeros_like(model);
        GradSet g = GradSet::zeros_like(model);
        for (const auto& img : batch) {
            loss_sum += detail::example_loss_grad(model, img, cw, g);
            auto acc_it = [&](std::vector<double>& dst, const std::vector<double>& src) {
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            };
            for (std::size_t li = 0; li < g.backbone.size(); ++li) {
                acc_it(out.batch_mean.backbone[li].w, g.backbone[li].w);
                acc_it(out.batch_mean.backbone[li].b, g.backbone[li].b);
            }
            acc_it(out.batch_mean.head.w, g.head.w);
            acc_it(out.batch_mean.head.b, g.head.b);
        }
        for_each_block(out.batch_mean, [&](std::vector<double>& blk) {
            for (auto& v : blk) v *= inv_b;
        });
    }
    out.loss = loss_sum * inv_b;
    return out;
}

// Input-gradient-times-input attribution map for the positive-class logit,
// a stand-in for heavier saliency methods. Same shape as the input image.
inline std::vector<double> saliency(const GlobalModel& model, const LabeledImage& img) {
    const std::vector<double> x = scale_pixels(img);
    const ForwardTrace t = forward_trace(model, x);

    // d logit_1 / d feature
    std::vector<double> delta(model.feature_dim);
    for (std::size_t c = 0; c < model.head.in; ++c) delta[c] = model.head.w[1 * model.head.in + c];

    for (std::size_t li = model.backbone.size(); li-- > 0;) {
        const Affine& layer = model.backbone[li];
        const auto& output = t.activations[li + 1];
        for (std::size_t r = 0; r < layer.out; ++r)
            if (output[r] <= 0.0) delta[r] = 0.0;
        std::vector<double> prev_delta(layer.in, 0.0);
        for (std::size_t c = 0; c < layer.in; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < layer.out; ++r) acc += layer.w[r * layer.in + c] * delta[r];
            prev_delta[c] = acc;
        }
        delta = std::move(prev_delta);
    }

    std::vector<double> map(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) map[i] = delta[i] * x[i];
    return map;
}

// ---------------------------------------------------------------------------
// Checkpoint format ("FCKP"):
//   magic "FCKP" | version u32 | input_dim u32 | n_hidden u32 | hidden dims u32...
//   | feature_dim u32 | parameters f64 little-endian in layer order
//   (weights row-major, then bias; backbone layers first, head last)
//   | crc32 u32 over everything after the magic
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> serialize_checkpoint(const GlobalModel& model) {
    model.validate();
    ByteWriter w;
    w.put_magic("FCKP");
    w.put_u32(kCheckpointFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(model.input_dim));
    w.put_u32(static_cast<std::uint32_t>(model.hidden_dims.size()));
    for (std::size_t h : model.hidden_dims) w.put_u32(static_cast<std::uint32_t>(h));
    w.put_u32(static_cast<std::uint32_t>(model.feature_dim));
    for_each_block(model, [&](const std::vector<double>& blk) {
        for (double v : blk) w.put_f64(v);
    });
    const std::uint32_t crc = crc32(w.bytes(), 4);
    ByteWriter out;
    out.put_bytes(w.bytes().data(), w.size());
    out.put_u32(crc);
    return out.bytes();
}

inline GlobalModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                          const std::string& name = "<buffer>") {
    if (bytes.size() < 8) throw IoError(name + ": too short for a checkpoint");
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    if (stored != crc32(bytes.data() + 4, bytes.size() - 8))
        throw IoError(name + ": CRC mismatch, checkpoint corrupted");

    ByteReader r(bytes.data(), bytes.size() - 4, name);
    r.expect_magic("FCKP");
    GlobalModel m;
    m.version_tag = r.get_u32();
    if (m.version_tag != kCheckpointFormatVersion)
        throw IoError(name + ": unsupported checkpoint version " + std::to_string(m.version_tag));
    m.input_dim = r.get_u32();
    const std::uint32_t n_hidden = r.get_u32();
    if (n_hidden == 0 || n_hidden > 64) throw IoError(name + ": implausible hidden layer count");
    for (std::uint32_t i = 0; i < n_hidden; ++i) m.hidden_dims.push_back(r.get_u32());
    m.feature_dim = r.get_u32();

    std::size_t prev = m.input_dim;
    for (std::size_t h : m.hidden_dims) {
        m.backbone.push_back(Affine::zeros(prev, h));
        prev = h;
    }
    m.head = Affine::zeros(prev, kNumClasses);
    for_each_block(m, [&](std::vector<double>& blk) {
        for (auto& v : blk) v = r.get_f64();
    });
    if (r.remaining() != 0) throw IoError(name + ": trailing bytes after parameters");
    m.validate();
    return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const GlobalModel& model) {
    write_file(path, serialize_checkpoint(model));
}

inline GlobalModel load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path), path.string());
}

} // namespace fedcase
