#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/hash.hpp"
#include "../common/random.hpp"
#include "../dataset/glyph_stack.hpp"
#include "layers.hpp"

namespace fontclip {

/// Pre-projection image feature; not normalized.
struct ImageFeature {
    std::vector<float> values;
};

/// Architecture and optimisation settings for the glyph autoencoder.
///
/// Encoder: `stages` x [stride-2 3x3 conv, pre-activation residual pair of 3x3
/// convs] (3 stages = 9 conv layers), SiLU, fully connected -> latent_dim.
/// Decoder: fully connected -> top feature map, `stages` stride-2 4x4
/// transposed convs with SiLU between, linear output.
struct AutoencoderConfig {
    int input_channels = kLetterCount;
    int image_size = kGlyphSize;
    int base_width = 32;  ///< stage s has base_width * 2^s channels
    int stages = 3;
    int latent_dim = 512;
    double learning_rate = 1e-4;
    int batch_size = 16;
    int epochs = 100;
    int patience = 10;  ///< early stopping on validation L1
    std::uint64_t seed = 0;

    [[nodiscard]] int width(int stage) const { return base_width << stage; }
    [[nodiscard]] int bottleneck_size() const { return image_size >> stages; }
    [[nodiscard]] int bottleneck_features() const {
        return width(stages - 1) * bottleneck_size() * bottleneck_size();
    }

    void validate() const {
        if (input_channels < 1 || base_width < 1 || stages < 1 || latent_dim < 1)
            throw std::invalid_argument("autoencoder dimensions must be positive");
        if (image_size % (1 << stages) != 0 || bottleneck_size() < 1)
            throw std::invalid_argument("image_size must be divisible by 2^stages");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    }

    [[nodiscard]] nlohmann::json architecture_json() const {
        return {{"input_channels", input_channels},
                {"image_size", image_size},
                {"base_width", base_width},
                {"stages", stages},
                {"latent_dim", latent_dim},
                {"conv_kernel", 3},
                {"downsample", "stride-2 conv opening each stage"},
                {"residual", "pre-activation, around each non-downsampling conv pair"},
                {"deconv_kernel", 4},
                {"activation", "silu"},
                {"output", "linear"}};
    }

    static AutoencoderConfig from_architecture_json(const nlohmann::json& j) {
        AutoencoderConfig c;
        c.input_channels = j.at("input_channels").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.base_width = j.at("base_width").get<int>();
        c.stages = j.at("stages").get<int>();
        c.latent_dim = j.at("latent_dim").get<int>();
        c.validate();
        return c;
    }
};

namespace nn {

template <typename Scalar>
struct ResidualPair {
    Conv2d<Scalar> first;
    Conv2d<Scalar> second;
};

template <typename Scalar>
class GlyphEncoder {
public:
    struct Tape {
        FeatureMap<Scalar> input;
        std::vector<FeatureMap<Scalar>> stage_in;  // pre-activation input of each stage
        std::vector<FeatureMap<Scalar>> down_out;  // residual-pair input
        std::vector<FeatureMap<Scalar>> mid;       // output of the pair's first conv
        FeatureMap<Scalar> top;                    // last stage output, pre-activation
    };

    GlyphEncoder() = default;

    explicit GlyphEncoder(const AutoencoderConfig& config) : config_(config) {
        config_.validate();
        int c = config.input_channels;
        int size = config.image_size;
        for (int s = 0; s < config.stages; ++s) {
            const int w = config.width(s);
            downs_.emplace_back(c, w, 3, 2, 1, size, size);
            size /= 2;
            pairs_.push_back({Conv2d<Scalar>(w, w, 3, 1, 1, size, size), Conv2d<Scalar>(w, w, 3, 1, 1, size, size)});
            c = w;
        }
        fc_ = Linear<Scalar>(config.bottleneck_features(), config.latent_dim);
    }

    void init(Rng& rng) {
        for (int s = 0; s < config_.stages; ++s) {
            downs_[s].init(rng);
            pairs_[s].first.init(rng);
            pairs_[s].second.init(rng);
            // Residual branches start small so the stack begins near identity.
            pairs_[s].second.weight.value *= Scalar(0.25);
        }
        fc_.init(rng);
    }

    [[nodiscard]] const AutoencoderConfig& config() const { return config_; }

    /// latent_dim x B.
    [[nodiscard]] Matrix<Scalar> forward(const FeatureMap<Scalar>& x) const { return run(x, nullptr); }

    Matrix<Scalar> forward(const FeatureMap<Scalar>& x, Tape& tape) const { return run(x, &tape); }

    void backward(const Tape& tape, const Matrix<Scalar>& dz) {
        const FeatureMap<Scalar> act_top = silu(tape.top);
        Matrix<Scalar> dflat = fc_.backward(act_top.flat(), dz);
        FeatureMap<Scalar> dx = FeatureMap<Scalar>::from_flat(dflat, tape.top.channels, tape.top.height, tape.top.width);
        dx = silu_backward(tape.top, dx);
        for (int s = config_.stages - 1; s >= 0; --s) {
            auto& pair = pairs_[s];
            const auto& d = tape.down_out[s];
            const auto& mid = tape.mid[s];
            FeatureMap<Scalar> dd = dx;
            const FeatureMap<Scalar> dmid = silu_backward(mid, pair.second.backward(silu(mid), dx));
            dd.data += silu_backward(d, pair.first.backward(silu(d), dmid)).data;
            const FeatureMap<Scalar> a = s == 0 ? tape.stage_in[s] : silu(tape.stage_in[s]);
            FeatureMap<Scalar> da = downs_[s].backward(a, dd);
            if (s > 0) dx = silu_backward(tape.stage_in[s], da);
        }
    }

    std::vector<Param<Scalar>*> parameters() {
        std::vector<Param<Scalar>*> out;
        for (int s = 0; s < config_.stages; ++s) {
            for (auto* conv : {&downs_[s], &pairs_[s].first, &pairs_[s].second}) {
                out.push_back(&conv->weight);
                out.push_back(&conv->bias);
            }
        }
        out.push_back(&fc_.weight);
        out.push_back(&fc_.bias);
        return out;
    }

    std::vector<const Param<Scalar>*> parameters() const {
        std::vector<const Param<Scalar>*> out;
        for (auto* p : const_cast<GlyphEncoder*>(this)->parameters()) out.push_back(p);
        return out;
    }

private:
    Matrix<Scalar> run(const FeatureMap<Scalar>& input, Tape* tape) const {
        if (input.channels != config_.input_channels || input.height != config_.image_size ||
            input.width != config_.image_size)
            throw ShapeError("encoder input shape mismatch");
        if (tape) {
            tape->input = input;
            tape->stage_in.clear();
            tape->down_out.clear();
            tape->mid.clear();
        }
        FeatureMap<Scalar> x = input;
        for (int s = 0; s < config_.stages; ++s) {
            const auto& pair = pairs_[s];
            FeatureMap<Scalar> d = downs_[s].forward(s == 0 ? x : silu(x));
            FeatureMap<Scalar> mid = pair.first.forward(silu(d));
            FeatureMap<Scalar> h = pair.second.forward(silu(mid));
            if (tape) {
                tape->stage_in.push_back(std::move(x));
                tape->down_out.push_back(d);
                tape->mid.push_back(std::move(mid));
            }
            h.data += d.data;
            x = std::move(h);
        }
        const FeatureMap<Scalar> act = silu(x);
        Matrix<Scalar> z = fc_.forward(act.flat());
        if (tape) tape->top = std::move(x);
        return z;
    }

    AutoencoderConfig config_;
    std::vector<Conv2d<Scalar>> downs_;
    std::vector<ResidualPair<Scalar>> pairs_;
    Linear<Scalar> fc_;
};

template <typename Scalar>
class GlyphDecoder {
public:
    struct Tape {
        Matrix<Scalar> latent;
        std::vector<FeatureMap<Scalar>> pre;  // pre-activation input of each deconv
    };

    GlyphDecoder() = default;

    explicit GlyphDecoder(const AutoencoderConfig& config) : config_(config) {
        fc_ = Linear<Scalar>(config.latent_dim, config.bottleneck_features());
        int size = config.bottleneck_size();
        for (int s = config.stages - 1; s >= 0; --s) {
            const int out_c = s == 0 ? config.input_channels : config.width(s - 1);
            deconvs_.emplace_back(config.width(s), out_c, 4, 2, 1, size, size);
            size *= 2;
        }
    }

    void init(Rng& rng) {
        fc_.init(rng);
        for (auto& d : deconvs_) d.init(rng);
        // A random initial image is pure error under L1, and shrinking every
        // layer to remove it leaves activations too small to recover from.
        deconvs_.back().weight.value.setZero();
    }

    [[nodiscard]] FeatureMap<Scalar> forward(const Matrix<Scalar>& z) const { return run(z, nullptr); }
    FeatureMap<Scalar> forward(const Matrix<Scalar>& z, Tape& tape) const { return run(z, &tape); }

    /// dout is dL/d(output). Returns dL/dz.
    Matrix<Scalar> backward(const Tape& tape, const FeatureMap<Scalar>& dout) {
        FeatureMap<Scalar> dh = dout;
        for (int i = static_cast<int>(deconvs_.size()) - 1; i >= 0; --i) {
            const auto& pre = tape.pre[i];
            dh = silu_backward(pre, deconvs_[i].backward(silu(pre), dh));
        }
        return fc_.backward(tape.latent, dh.flat());
    }

    std::vector<Param<Scalar>*> parameters() {
        std::vector<Param<Scalar>*> out{&fc_.weight, &fc_.bias};
        for (auto& d : deconvs_) {
            out.push_back(&d.weight);
            out.push_back(&d.bias);
        }
        return out;
    }

private:
    FeatureMap<Scalar> run(const Matrix<Scalar>& z, Tape* tape) const {
        const int top = config_.width(config_.stages - 1);
        const int size = config_.bottleneck_size();
        FeatureMap<Scalar> h = FeatureMap<Scalar>::from_flat(fc_.forward(z), top, size, size);
        if (tape) {
            tape->latent = z;
            tape->pre.clear();
        }
        for (const auto& d : deconvs_) {
            FeatureMap<Scalar> next = d.forward(silu(h));
            if (tape) tape->pre.push_back(std::move(h));
            h = std::move(next);
        }
        return h;
    }

    AutoencoderConfig config_;
    Linear<Scalar> fc_;
    std::vector<ConvTranspose2d<Scalar>> deconvs_;
};

}  // namespace nn

/// Packs glyph stacks into an encoder input batch.
template <typename Scalar>
nn::FeatureMap<Scalar> to_feature_map(std::span<const GlyphStack* const> stacks) {
    nn::FeatureMap<Scalar> x(kLetterCount, kGlyphSize, kGlyphSize, static_cast<int>(stacks.size()));
    for (std::size_t b = 0; b < stacks.size(); ++b) {
        const auto values = stacks[b]->values();
        for (int c = 0; c < kLetterCount; ++c) {
            for (std::size_t p = 0; p < kGlyphPixels; ++p) {
                x.data(c, static_cast<Eigen::Index>(b * kGlyphPixels + p)) =
                    static_cast<Scalar>(values[c * kGlyphPixels + p]);
            }
        }
    }
    return x;
}

template <typename Scalar>
GlyphStack to_glyph_stack(const nn::FeatureMap<Scalar>& x, int sample) {
    if (x.channels != kLetterCount || x.height != kGlyphSize || x.width != kGlyphSize)
        throw ShapeError("feature map is not a glyph stack");
    std::vector<float> values(kStackValues);
    for (int c = 0; c < kLetterCount; ++c)
        for (std::size_t p = 0; p < kGlyphPixels; ++p)
            values[c * kGlyphPixels + p] = std::clamp(
                static_cast<float>(x.data(c, static_cast<Eigen::Index>(sample * kGlyphPixels + p))), 0.0f, 1.0f);
    return GlyphStack(std::move(values));
}

/// Mean absolute error over every value in the batch.
template <typename Scalar>
double l1_loss(const nn::FeatureMap<Scalar>& reconstruction, const nn::FeatureMap<Scalar>& target) {
    return static_cast<double>((reconstruction.data - target.data).cwiseAbs().sum()) /
           static_cast<double>(target.data.size());
}

template <typename Scalar>
nn::FeatureMap<Scalar> l1_loss_grad(const nn::FeatureMap<Scalar>& reconstruction, const nn::FeatureMap<Scalar>& target) {
    nn::FeatureMap<Scalar> g = reconstruction;
    const auto scale = Scalar(1) / static_cast<Scalar>(target.data.size());
    g.data = (reconstruction.data - target.data).unaryExpr([scale](Scalar d) {
        return d > 0 ? scale : (d < 0 ? -scale : Scalar(0));
    });
    return g;
}

template <typename Scalar = float>
class GlyphAutoencoder {
public:
    GlyphAutoencoder() = default;

    explicit GlyphAutoencoder(const AutoencoderConfig& config) : encoder(config), decoder(config) {
        Rng rng(mix_seed(config.seed, 11));
        encoder.init(rng);
        decoder.init(rng);
    }

    [[nodiscard]] const AutoencoderConfig& config() const { return encoder.config(); }

    [[nodiscard]] nn::FeatureMap<Scalar> reconstruct(const nn::FeatureMap<Scalar>& x) const {
        return decoder.forward(encoder.forward(x));
    }

    /// One forward/backward pass; gradients accumulate into the parameters.
    double accumulate_gradients(const nn::FeatureMap<Scalar>& x) {
        typename nn::GlyphEncoder<Scalar>::Tape etape;
        typename nn::GlyphDecoder<Scalar>::Tape dtape;
        const auto z = encoder.forward(x, etape);
        const auto out = decoder.forward(z, dtape);
        const double loss = l1_loss(out, x);
        const auto dz = decoder.backward(dtape, l1_loss_grad(out, x));
        encoder.backward(etape, dz);
        return loss;
    }

    std::vector<nn::Param<Scalar>*> parameters() {
        auto p = encoder.parameters();
        for (auto* q : decoder.parameters()) p.push_back(q);
        return p;
    }

    nn::GlyphEncoder<Scalar> encoder;
    nn::GlyphDecoder<Scalar> decoder;
};

/// Frozen image encoder E_img: GlyphStack -> ImageFeature.
class ImageEncoder {
public:
    ImageEncoder() = default;
    explicit ImageEncoder(nn::GlyphEncoder<float> net) : net_(std::move(net)) {}

    [[nodiscard]] const AutoencoderConfig& config() const { return net_.config(); }
    [[nodiscard]] int feature_dim() const { return net_.config().latent_dim; }

    [[nodiscard]] ImageFeature encode(const GlyphStack& stack) const {
        check_shape();
        const GlyphStack* one[] = {&stack};
        const auto z = net_.forward(to_feature_map<float>(one));
        return {std::vector<float>(z.data(), z.data() + z.size())};
    }

    /// Batched encoding; rows of the result follow `stacks`.
    [[nodiscard]] std::vector<ImageFeature> encode_all(std::span<const GlyphStack* const> stacks,
                                                      std::size_t chunk = 32) const {
        check_shape();
        std::vector<ImageFeature> out;
        out.reserve(stacks.size());
        for (std::size_t i = 0; i < stacks.size(); i += chunk) {
            const auto part = stacks.subspan(i, std::min(chunk, stacks.size() - i));
            const auto z = net_.forward(to_feature_map<float>(part));
            for (Eigen::Index b = 0; b < z.cols(); ++b)
                out.push_back({std::vector<float>(z.col(b).data(), z.col(b).data() + z.rows())});
        }
        return out;
    }

    /// Hash of the weights; used to assert the encoder stays frozen.
    [[nodiscard]] std::uint64_t checksum() const {
        Fnv1a h;
        for (const auto* p : net_.parameters())
            h.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(float));
        return h.digest();
    }

    [[nodiscard]] const nn::GlyphEncoder<float>& network() const { return net_; }

private:
    void check_shape() const {
        const auto& c = net_.config();
        if (c.input_channels != kLetterCount || c.image_size != kGlyphSize)
            throw ShapeError("encoder was built for " + std::to_string(c.input_channels) + "x" +
                             std::to_string(c.image_size) + " inputs, not 26x64x64 glyph stacks");
    }

    nn::GlyphEncoder<float> net_;
};

}  // namespace fontclip
