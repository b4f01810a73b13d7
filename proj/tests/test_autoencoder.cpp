#include <gtest/gtest.h>

#include <fontclip/autoencoder/pretrain.hpp>
#include <fontclip/autoencoder/weights_io.hpp>
#include <fontclip/dataset/synthetic.hpp>

#include <fstream>

#include "test_support.hpp"

using namespace fontclip;
using fontclip::testing::TempDir;

namespace {

template <typename S>
nn::FeatureMap<S> random_map(int c, int h, int w, int b, Rng& rng) {
    nn::FeatureMap<S> m(c, h, w, b);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = static_cast<S>(normal(rng));
    return m;
}

double at(const nn::FeatureMap<double>& m, int b, int c, int y, int x) {
    return m.data(c, static_cast<Eigen::Index>(b) * m.height * m.width + y * m.width + x);
}

AutoencoderConfig small_config(std::uint64_t seed = 0) {
    AutoencoderConfig c;
    c.base_width = 4;
    c.latent_dim = 32;
    c.seed = seed;
    return c;
}

std::vector<GlyphStack> synthetic_stacks(int n, std::uint64_t seed) {
    std::vector<GlyphStack> out;
    for (const auto& f : synthesize_fonts(n, seed, {})) out.push_back(render_font(f.attributes));
    return out;
}

std::vector<const GlyphStack*> pointers(const std::vector<GlyphStack>& v) {
    std::vector<const GlyphStack*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

// Central-difference check of every parameter entry against the analytic
// gradient of loss(params).
template <typename LossFn>
void check_gradients(std::vector<nn::Param<double>*> params, LossFn loss, const char* what) {
    constexpr double h = 1e-6;
    int checked = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double up = loss();
            p.value.data()[i] = saved - h;
            const double down = loss();
            p.value.data()[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p.grad.data()[i];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            ASSERT_LE(std::abs(numeric - analytic) / scale, 1e-3)
                << what << " param " << pi << " entry " << i << " numeric " << numeric << " analytic " << analytic;
            ++checked;
        }
    }
    EXPECT_GT(checked, 100);
}

}  // namespace

TEST(Layers, ConvMatchesDirectLoop) {
    Rng rng(1);
    for (auto [k, s, pad] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{4, 2, 1}}) {
        const int cin = 3;
        const int cout = 4;
        const int size = 8;
        nn::Conv2d<double> conv(cin, cout, k, s, pad, size, size);
        conv.init(rng);
        for (Eigen::Index i = 0; i < conv.bias.value.size(); ++i) conv.bias.value(i) = normal(rng);
        const auto x = random_map<double>(cin, size, size, 2, rng);
        const auto y = conv.forward(x);
        const int out = (size + 2 * pad - k) / s + 1;
        ASSERT_EQ(y.height, out);
        for (int b = 0; b < 2; ++b)
            for (int co = 0; co < cout; ++co)
                for (int oy = 0; oy < out; ++oy)
                    for (int ox = 0; ox < out; ++ox) {
                        double acc = conv.bias.value(co);
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                for (int ci = 0; ci < cin; ++ci) {
                                    const int iy = oy * s - pad + ky;
                                    const int ix = ox * s - pad + kx;
                                    if (iy < 0 || ix < 0 || iy >= size || ix >= size) continue;
                                    acc += conv.weight.value(co, (ky * k + kx) * cin + ci) * at(x, b, ci, iy, ix);
                                }
                        ASSERT_NEAR(at(y, b, co, oy, ox), acc, 1e-12);
                    }
    }
}

TEST(Layers, TransposedConvMatchesScatterLoop) {
    Rng rng(2);
    const int cin = 3;
    const int cout = 2;
    const int k = 4;
    const int s = 2;
    const int pad = 1;
    const int size = 4;
    nn::ConvTranspose2d<double> deconv(cin, cout, k, s, pad, size, size);
    deconv.init(rng);
    for (Eigen::Index i = 0; i < deconv.bias.value.size(); ++i) deconv.bias.value(i) = normal(rng);
    const auto x = random_map<double>(cin, size, size, 2, rng);
    const auto y = deconv.forward(x);
    const int out = (size - 1) * s - 2 * pad + k;
    ASSERT_EQ(y.height, out);
    ASSERT_EQ(y.channels, cout);
    std::vector<double> want(static_cast<std::size_t>(2 * cout * out * out));
    const auto idx = [&](int b, int c, int yy, int xx) { return ((b * cout + c) * out + yy) * out + xx; };
    for (int b = 0; b < 2; ++b) {
        for (int c = 0; c < cout; ++c)
            for (int yy = 0; yy < out; ++yy)
                for (int xx = 0; xx < out; ++xx) want[idx(b, c, yy, xx)] = deconv.bias.value(c);
        for (int ci = 0; ci < cin; ++ci)
            for (int iy = 0; iy < size; ++iy)
                for (int ix = 0; ix < size; ++ix)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            for (int co = 0; co < cout; ++co) {
                                const int oy = iy * s - pad + ky;
                                const int ox = ix * s - pad + kx;
                                if (oy < 0 || ox < 0 || oy >= out || ox >= out) continue;
                                want[idx(b, co, oy, ox)] +=
                                    deconv.weight.value(ci, (ky * k + kx) * cout + co) * at(x, b, ci, iy, ix);
                            }
    }
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < cout; ++c)
            for (int yy = 0; yy < out; ++yy)
                for (int xx = 0; xx < out; ++xx) ASSERT_NEAR(at(y, b, c, yy, xx), want[idx(b, c, yy, xx)], 1e-12);
}

TEST(Autoencoder, EncoderGradientsMatchFiniteDifferences) {
    AutoencoderConfig c;
    c.input_channels = 2;
    c.image_size = 8;
    c.base_width = 2;
    c.stages = 2;
    c.latent_dim = 5;
    GlyphAutoencoder<double> model(c);
    Rng rng(3);
    const auto x = random_map<double>(2, 8, 8, 2, rng);
    nn::Matrix<double> w(5, 2);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    for (auto* p : model.encoder.parameters()) p->zero_grad();
    typename nn::GlyphEncoder<double>::Tape tape;
    model.encoder.forward(x, tape);
    model.encoder.backward(tape, w);
    check_gradients(model.encoder.parameters(), [&] { return model.encoder.forward(x).cwiseProduct(w).sum(); },
                    "encoder");
}

TEST(Autoencoder, DecoderGradientsMatchFiniteDifferences) {
    AutoencoderConfig c;
    c.input_channels = 2;
    c.image_size = 8;
    c.base_width = 2;
    c.stages = 2;
    c.latent_dim = 5;
    GlyphAutoencoder<double> model(c);
    Rng rng(4);
    // The output layer starts at zero; randomize so every upstream gradient is non-trivial.
    for (auto* p : model.decoder.parameters()) nn::init_normal(*p, 0.5, rng);
    nn::Matrix<double> z(5, 2);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    const auto w = random_map<double>(2, 8, 8, 2, rng);
    for (auto* p : model.decoder.parameters()) p->zero_grad();
    typename nn::GlyphDecoder<double>::Tape tape;
    model.decoder.forward(z, tape);
    const auto dz = model.decoder.backward(tape, w);
    check_gradients(model.decoder.parameters(),
                    [&] { return model.decoder.forward(z).data.cwiseProduct(w.data).sum(); }, "decoder");
    constexpr double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        auto zp = z;
        auto zm = z;
        zp.data()[i] += h;
        zm.data()[i] -= h;
        const double numeric = (model.decoder.forward(zp).data.cwiseProduct(w.data).sum() -
                                model.decoder.forward(zm).data.cwiseProduct(w.data).sum()) /
                               (2 * h);
        EXPECT_NEAR(numeric, dz.data()[i], 1e-6 * std::max(1.0, std::abs(numeric)));
    }
}

TEST(Autoencoder, DefaultArchitectureHasNineConvsAndLatent512) {
    AutoencoderConfig c;
    const nn::GlyphEncoder<float> enc(c);
    // 9 convs + 1 fully connected, each with weight and bias
    EXPECT_EQ(enc.parameters().size(), 20u);
    EXPECT_EQ(c.bottleneck_size(), 8);
    EXPECT_EQ(c.latent_dim, 512);
}

TEST(Autoencoder, FitsTheZeroStack) {
    auto c = small_config(1);
    c.learning_rate = 1e-3;
    c.epochs = 300;
    c.batch_size = 1;
    const std::vector<GlyphStack> zero(1);
    const auto ptrs = pointers(zero);
    const auto result = pretrain_autoencoder(ptrs, c);
    EXPECT_LT(mean_l1(result.model, ptrs), 1e-3);
}

TEST(Autoencoder, TrainingReducesLossSmoothlyAndGeneralises) {
    const auto stacks = synthetic_stacks(200, 8);
    const auto held = synthetic_stacks(40, 9);
    const auto train = pointers(stacks);
    const auto test = pointers(held);
    auto c = small_config(2);
    c.learning_rate = 1e-3;
    c.epochs = 30;
    const GlyphAutoencoder<float> untrained(c);
    const auto result = pretrain_autoencoder(train, c);
    ASSERT_EQ(result.train_loss.size(), 30u);
    std::vector<double> smooth;
    for (std::size_t i = 1; i + 1 < result.train_loss.size(); ++i)
        smooth.push_back((result.train_loss[i - 1] + result.train_loss[i] + result.train_loss[i + 1]) / 3);
    for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1]) << "epoch " << i;
    EXPECT_LT(mean_l1(result.model, test), mean_l1(untrained, test));
}

TEST(Autoencoder, EarlyStoppingKeepsBestValidationWeights) {
    const auto stacks = synthetic_stacks(24, 10);
    const auto held = synthetic_stacks(8, 11);
    auto c = small_config(3);
    c.learning_rate = 1e-3;
    c.epochs = 6;
    const auto result = pretrain_autoencoder(pointers(stacks), c, pointers(held));
    ASSERT_GE(result.best_epoch, 0);
    const double best = *std::min_element(result.val_loss.begin(), result.val_loss.end());
    EXPECT_DOUBLE_EQ(result.val_loss[static_cast<std::size_t>(result.best_epoch)], best);
    EXPECT_NEAR(mean_l1(result.model, pointers(held)), best, 1e-9);
}

TEST(Autoencoder, DivergenceIsReportedWithEpoch) {
    auto c = small_config(4);
    c.learning_rate = std::numeric_limits<double>::quiet_NaN();
    c.epochs = 3;
    const auto stacks = synthetic_stacks(2, 1);
    try {
        pretrain_autoencoder(pointers(stacks), c);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 2"), std::string::npos) << e.what();
    }
}

TEST(ImageEncoderTest, DeterministicDistinctAndSensitive) {
    const GlyphAutoencoder<float> model(small_config(5));
    const ImageEncoder enc(model.encoder);
    const auto stacks = synthetic_stacks(20, 12);
    const auto a = enc.encode_all(pointers(stacks));
    const auto b = enc.encode_all(pointers(stacks), 7);
    ASSERT_EQ(a.size(), 20u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].values, b[i].values);
        EXPECT_EQ(a[i].values.size(), 32u);
    }
    // A single column takes a different GEMM path, so only near-equality holds.
    const auto single = enc.encode(stacks[3]).values;
    for (std::size_t k = 0; k < single.size(); ++k) EXPECT_NEAR(single[k], a[3].values[k], 1e-5);
    EXPECT_EQ(enc.encode(stacks[3]).values, single);
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        bool unique = true;
        for (std::size_t j = 0; j < a.size(); ++j) unique &= i == j || a[i].values != a[j].values;
        distinct += unique;
    }
    EXPECT_GE(static_cast<double>(distinct) / a.size(), 0.99);

    std::vector<float> v(stacks[0].values().begin(), stacks[0].values().end());
    for (auto& x : v) x = std::min(1.0f, x + 0.05f);
    EXPECT_NE(enc.encode(GlyphStack(std::move(v))).values, a[0].values);
}

TEST(ImageEncoderTest, FullSizeFeatureHas512Values) {
    AutoencoderConfig c;
    c.base_width = 4;
    const GlyphAutoencoder<float> model(c);
    const ImageEncoder enc(model.encoder);
    EXPECT_EQ(enc.encode(GlyphStack{}).values.size(), 512u);
}

TEST(ImageEncoderTest, RejectsNonGlyphArchitecture) {
    auto c = small_config();
    c.input_channels = 3;
    const GlyphAutoencoder<float> model(c);
    const ImageEncoder enc(model.encoder);
    EXPECT_THROW(enc.encode(GlyphStack{}), ShapeError);
}

TEST(WeightsIo, RoundTripIsBitIdentical) {
    TempDir dir;
    auto c = small_config(6);
    c.latent_dim = 64;
    GlyphAutoencoder<float> model(c);
    save_autoencoder(dir.path() / "ae.bin", model);
    auto loaded = load_autoencoder(dir.path() / "ae.bin");
    const auto stacks = synthetic_stacks(3, 13);
    const ImageEncoder e1(model.encoder);
    const ImageEncoder e2(loaded.encoder);
    EXPECT_EQ(e1.checksum(), e2.checksum());
    for (const auto& s : stacks) EXPECT_EQ(e1.encode(s).values, e2.encode(s).values);
    EXPECT_EQ(e2.feature_dim(), 64);

    save_encoder(dir.path() / "enc.bin", e1);
    EXPECT_EQ(load_encoder(dir.path() / "enc.bin").checksum(), e1.checksum());
    EXPECT_EQ(load_encoder(dir.path() / "ae.bin").checksum(), e1.checksum());
}

TEST(WeightsIo, CorruptionAndVersionMismatchAreErrors) {
    TempDir dir;
    GlyphAutoencoder<float> model(small_config(7));
    const auto path = dir.path() / "ae.bin";
    save_autoencoder(path, model);
    auto bytes = read_file_bytes(path);

    auto flipped = bytes;
    flipped[flipped.size() - 5] ^= 0x40;
    write_file_bytes(dir.path() / "bad.bin", flipped);
    EXPECT_THROW(load_autoencoder(dir.path() / "bad.bin"), FormatError);

    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    write_file_bytes(dir.path() / "short.bin", truncated);
    EXPECT_THROW(load_autoencoder(dir.path() / "short.bin"), FormatError);

    const std::string text(bytes.begin(), bytes.end());
    const auto pos = text.find("\"format_version\":1");
    ASSERT_NE(pos, std::string::npos);
    auto versioned = bytes;
    versioned[pos + 17] = '7';
    write_file_bytes(dir.path() / "v7.bin", versioned);
    try {
        load_autoencoder(dir.path() / "v7.bin");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 7"), std::string::npos) << e.what();
    }
}
