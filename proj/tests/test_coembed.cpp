#include <gtest/gtest.h>

#include <fontclip/coembed/trainer.hpp>
#include <fontclip/dataset/preprocess.hpp>
#include <fontclip/dataset/synthetic.hpp>

#include "test_support.hpp"

using namespace fontclip;
using fontclip::testing::TempDir;

namespace {

Eigen::MatrixXd random_matrix(int b, std::uint64_t seed, double scale = 3.0) {
    Rng rng(seed);
    Eigen::MatrixXd m(b, b);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2 * uniform01(rng) - 1);
    return m;
}

// Direct evaluation from the displayed formula with raw exponentials.
double oracle_sce(const Eigen::MatrixXd& s) {
    const auto b = s.rows();
    double l_img = 0, l_tag = 0;
    for (Eigen::Index n = 0; n < b; ++n) {
        double row = 0, col = 0;
        for (Eigen::Index k = 0; k < b; ++k) {
            row += std::exp(s(n, k));
            col += std::exp(s(k, n));
        }
        l_img += -std::log(std::exp(s(n, n)) / row);
        l_tag += -std::log(std::exp(s(n, n)) / col);
    }
    return (l_img + l_tag) / 2;
}

struct Fixture {
    std::vector<FontRecord> records;
    TagVocabulary vocab;
    ImageEncoder encoder;
    StubTextEncoder text{7};
};

Fixture synthetic_fixture(int n, std::uint64_t seed) {
    Fixture f;
    for (const auto& s : synthesize_fonts(2 * n, seed, {})) {
        if (s.tags.empty()) continue;
        f.records.push_back({s.font_id, render_font(s.attributes), s.tags});
        if (f.records.size() == static_cast<std::size_t>(n)) break;
    }
    f.vocab = TagVocabulary::from_tag_lists([&] {
        std::vector<std::vector<std::string>> t;
        for (const auto& r : f.records) t.push_back(r.tags);
        return t;
    }());
    AutoencoderConfig c;
    c.base_width = 4;
    c.seed = seed;
    f.encoder = ImageEncoder(GlyphAutoencoder<float>(c).encoder);
    return f;
}

}  // namespace

TEST(Sce, ReferenceValues) {
    for (double v : {-3.0, 0.0, 42.0}) EXPECT_EQ(sce_loss(Eigen::MatrixXd::Constant(1, 1, v)), 0.0);
    EXPECT_NEAR(sce_loss(Eigen::MatrixXd::Constant(2, 2, 0.3)), 2 * std::log(2.0), 1e-9);
    Eigen::MatrixXd sat = Eigen::MatrixXd::Constant(3, 3, -10.0);
    sat.diagonal().setConstant(10.0);
    EXPECT_LT(sce_loss(sat), 1e-6);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = random_matrix(4, seed);
        EXPECT_NEAR(sce_loss(m), oracle_sce(m), 1e-10);
    }
}

TEST(Sce, RejectsNonFiniteInput) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
    m(1, 2) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(sce_loss(m), std::domain_error);
    m(1, 2) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sce_loss_gradient(m), std::domain_error);
}

TEST(Sce, NonNegativeAndJointPermutationInvariant) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = random_matrix(6, seed + 100, 10.0);
        EXPECT_GE(sce_loss(m), 0.0);
        std::vector<int> perm(6);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(seed);
        shuffle(perm, rng);
        Eigen::MatrixXd p(6, 6);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) p(i, j) = m(perm[i], perm[j]);
        EXPECT_NEAR(sce_loss(p), sce_loss(m), 1e-12);
    }
}

TEST(Sce, SaturatedInputsAreStable) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(4, 4, -100.0);
    m.diagonal().setConstant(100.0);
    EXPECT_TRUE(std::isfinite(sce_loss(m)));
    EXPECT_LT(sce_loss_gradient(m).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SceGradient, UniformTwoByTwo) {
    const auto g = sce_loss_gradient(Eigen::MatrixXd::Constant(2, 2, 1.5));
    Eigen::MatrixXd want(2, 2);
    want << -0.5, 0.5, 0.5, -0.5;
    EXPECT_LT((g - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SceGradient, MatchesFiniteDifferences) {
    constexpr double h = 1e-5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = random_matrix(5, seed + 7);
        const auto g = sce_loss_gradient(m);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            auto up = m;
            auto down = m;
            up.data()[i] += h;
            down.data()[i] -= h;
            const double numeric = (sce_loss(up) - sce_loss(down)) / (2 * h);
            const double scale = std::max({std::abs(numeric), std::abs(g.data()[i]), 1e-8});
            EXPECT_LE(std::abs(numeric - g.data()[i]) / scale, 1e-4) << "seed " << seed << " entry " << i;
        }
    }
}

TEST(ProjectionHead, OutputsAreUnitNorm) {
    nn::ProjectionHead<float> head(ProjectionHeadConfig{});
    Rng rng(1);
    head.init(rng);
    Eigen::MatrixXf x(512, 1000);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(normal(rng) * (1 + i % 7));
    const Eigen::MatrixXf y = head.forward(x);
    for (Eigen::Index b = 0; b < y.cols(); ++b) EXPECT_NEAR(y.col(b).cast<double>().norm(), 1.0, 1e-6);
    const auto p = head.project(std::span<const float>(x.col(3).data(), 512));
    const auto q = head.project(std::span<const float>(x.col(3).data(), 512));
    EXPECT_EQ(p, q);
}

TEST(ProjectionHead, LinearHeadIsScaleInvariant) {
    nn::ProjectionHead<double> head(ProjectionHeadConfig{.in_dim = 16, .hidden_dim = 16, .hidden_layers = 0, .out_dim = 8});
    Rng rng(2);
    head.init(rng);
    Eigen::MatrixXd x(16, 1);
    for (int i = 0; i < 16; ++i) x(i, 0) = normal(rng);
    EXPECT_LT((head.forward(x) - head.forward(2 * x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProjectionHead, ZeroPreNormalizationVectorIsPerturbed) {
    nn::ProjectionHead<float> head(ProjectionHeadConfig{.in_dim = 4, .hidden_dim = 4, .hidden_layers = 1, .out_dim = 4});
    std::vector<std::string> warnings;
    log::set_sink([&](log::Level, std::string_view m) { warnings.emplace_back(m); });
    const auto y = head.project(std::vector<float>{1, 2, 3, 4});
    log::set_sink(nullptr);
    ASSERT_EQ(warnings.size(), 1u);
    double n = 0;
    for (float v : y) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-6);
}

TEST(ProjectionHead, GradientsMatchFiniteDifferences) {
    nn::ProjectionHead<double> head(ProjectionHeadConfig{.in_dim = 6, .hidden_dim = 5, .hidden_layers = 2, .out_dim = 4});
    Rng rng(3);
    head.init(rng);
    Eigen::MatrixXd x(6, 3);
    Eigen::MatrixXd w(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    nn::ProjectionHead<double>::Tape tape;
    head.forward(x, tape);
    for (auto* p : head.parameters()) p->zero_grad();
    const Eigen::MatrixXd dx = head.backward(tape, w);
    const auto loss = [&] { return head.forward(x).cwiseProduct(w).sum(); };
    constexpr double h = 1e-6;
    for (auto* p : head.parameters()) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + h;
            const double up = loss();
            p->value.data()[i] = saved - h;
            const double down = loss();
            p->value.data()[i] = saved;
            EXPECT_NEAR((up - down) / (2 * h), p->grad.data()[i], 1e-6);
        }
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = loss();
        x.data()[i] = saved - h;
        const double down = loss();
        x.data()[i] = saved;
        EXPECT_NEAR((up - down) / (2 * h), dx.data()[i], 1e-6);
    }
}

TEST(Temperature, InitAndClamp) {
    const Temperature t;
    EXPECT_NEAR(t.scale(), 1.0 / 0.07, 1e-9);
    Temperature hot{std::log(1000.0), 100.0};
    EXPECT_EQ(hot.scale(), 100.0);
    hot.clamp();
    EXPECT_NEAR(std::exp(hot.log_scale), 100.0, 1e-9);
}

TEST(Coembed, DuplicatedFontBatchSitsAtUniformBound) {
    auto f = synthetic_fixture(4, 3);
    CoembeddingModel model(ProjectionHeadConfig{}, ProjectionHeadConfig{}, 1);
    const auto fs = compute_features(std::span(f.records).first(1), f.encoder, f.text, f.vocab);
    const Eigen::MatrixXf img = fs.image.replicate(1, 8);
    const Eigen::MatrixXf tag = fs.tag.replicate(1, 8);
    float dtau = 0;
    const double loss = coembed_batch_gradients(model, img, tag, &dtau);
    EXPECT_NEAR(loss, 8 * std::log(8.0), 1e-4);
}

TEST(Coembed, TrainingHalvesTheLossAndKeepsEncoderFrozen) {
    auto f = synthetic_fixture(200, 11);
    CoembedConfig cfg;
    cfg.steps = 500;
    cfg.seed = 4;
    const auto run = train_coembedding(f.records, f.encoder, f.text, f.vocab, cfg);
    EXPECT_EQ(run.encoder_checksum_before, run.encoder_checksum_after);
    EXPECT_EQ(run.encoder_checksum_after, f.encoder.checksum());
    const auto& h = run.result.loss_history;
    ASSERT_EQ(h.size(), 500u);
    const double tail = std::accumulate(h.end() - 10, h.end(), 0.0) / 10;
    EXPECT_LT(tail, 0.5 * h.front()) << "first " << h.front() << " tail " << tail;
    const double scale = run.result.model.temperature.scale();
    EXPECT_GT(scale, 0.0);
    EXPECT_LE(scale, 100.0);
}

TEST(Coembed, HeldOutDiagonalBeatsOffDiagonal) {
    auto f = synthetic_fixture(260, 12);
    std::vector<std::size_t> train_idx(200);
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::vector<std::size_t> test_idx(60);
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{200});
    const auto all = compute_features(f.records, f.encoder, f.text, f.vocab);
    CoembedConfig cfg;
    cfg.steps = 400;
    const auto result = train_heads(all.subset(train_idx), cfg);
    const auto test = all.subset(test_idx);
    const Eigen::MatrixXf s = result.model.project_images(test.image).transpose() * result.model.project_tags(test.tag);
    const double diag = s.diagonal().mean();
    const double off = (s.sum() - s.diagonal().sum()) / (s.size() - s.rows());
    EXPECT_GT(diag, off);
}

TEST(Coembed, BatchLargerThanTrainSetIsClipped) {
    auto f = synthetic_fixture(10, 13);
    const auto fs = compute_features(f.records, f.encoder, f.text, f.vocab);
    CoembedConfig cfg;
    cfg.steps = 3;
    const auto r = train_heads(fs, cfg);
    EXPECT_EQ(r.batch_size, 10);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_EQ(r.loss_history.size(), 3u);
}

TEST(Coembed, NonFiniteLossAborts) {
    auto f = synthetic_fixture(6, 14);
    auto fs = compute_features(f.records, f.encoder, f.text, f.vocab);
    fs.image.col(2).setConstant(std::numeric_limits<float>::quiet_NaN());
    CoembedConfig cfg;
    cfg.steps = 2;
    EXPECT_THROW(train_heads(fs, cfg), DivergenceError);
}

TEST(Coembed, GradientAccumulationAndDeterminism) {
    auto f = synthetic_fixture(40, 15);
    const auto fs = compute_features(f.records, f.encoder, f.text, f.vocab);
    CoembedConfig cfg;
    cfg.steps = 5;
    cfg.batch_size = 8;
    cfg.grad_accumulation = 3;
    const auto a = train_heads(fs, cfg);
    const auto b = train_heads(fs, cfg);
    EXPECT_EQ(a.loss_history, b.loss_history);
    EXPECT_EQ(a.loss_history.size(), 5u);
}

TEST(Checkpoint, RoundTripReproducesProjections) {
    TempDir dir;
    auto f = synthetic_fixture(20, 16);
    const auto fs = compute_features(f.records, f.encoder, f.text, f.vocab);
    CoembedConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 8;
    auto r = train_heads(fs, cfg);
    save_checkpoint(dir.path() / "ck.bin", r.model, 4, cfg);
    const auto ck = load_checkpoint(dir.path() / "ck.bin");
    EXPECT_EQ(ck.header["config_hash"], cfg.hash());
    EXPECT_EQ(ck.header["step"], 4);
    EXPECT_EQ(ck.model.temperature.log_scale, r.model.temperature.log_scale);
    EXPECT_EQ(ck.model.project_images(fs.image), r.model.project_images(fs.image));
    EXPECT_EQ(ck.model.project_tags(fs.tag), r.model.project_tags(fs.tag));

    auto bytes = read_file_bytes(dir.path() / "ck.bin");
    bytes[bytes.size() / 2 + 40] ^= 1;
    write_file_bytes(dir.path() / "bad.bin", bytes);
    EXPECT_THROW(load_checkpoint(dir.path() / "bad.bin"), FormatError);
}

TEST(Coembed, MeanBatchLossAveragesFullBatchesOnly) {
    auto f = synthetic_fixture(11, 17);
    const auto fs = compute_features(f.records, f.encoder, f.text, f.vocab);
    const auto model = initial_model(CoembedConfig{}, static_cast<int>(fs.image.rows()), static_cast<int>(fs.tag.rows()));
    const Eigen::MatrixXd s = (model.project_images(fs.image).transpose() * model.project_tags(fs.tag)).cast<double>() *
                              model.temperature.scale();
    const double want = (oracle_sce(s.block(0, 0, 5, 5)) + oracle_sce(s.block(5, 5, 5, 5))) / 2;
    // Float latents: products formed per chunk differ in rounding.
    EXPECT_NEAR(mean_batch_loss(model, fs, 5), want, 1e-5);
    EXPECT_NEAR(mean_batch_loss(model, fs, 11), validation_loss(model, fs) * 11, 1e-5);
    EXPECT_NEAR(mean_batch_loss(model, fs, 40), mean_batch_loss(model, fs, 11), 1e-12);
}
