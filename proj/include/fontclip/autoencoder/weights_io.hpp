#pragma once

#include <filesystem>
#include <vector>

#include "../common/binary_io.hpp"
#include "autoencoder.hpp"

namespace fontclip {

// Weight file: container (see binary_io.hpp) with magic "FCAEWGT".
// Header: {"format_version", "architecture", "latent_dim", "seed",
//          "encoder_params", "decoder_params"}.
// Payload: float32 LE values of every encoder parameter then every decoder
// parameter, each column-major, in parameters() order.

inline constexpr int kWeightFormatVersion = 1;
inline constexpr const char* kWeightMagic = "FCAEWGT";

namespace detail {

inline void append_params(ByteWriter& w, const std::vector<nn::Param<float>*>& params, std::size_t& count) {
    for (const auto* p : params) {
        w.f32s(std::span<const float>(p->value.data(), static_cast<std::size_t>(p->value.size())));
        count += static_cast<std::size_t>(p->value.size());
    }
}

inline void read_params(ByteReader& r, const std::vector<nn::Param<float>*>& params) {
    for (auto* p : params) r.f32s(std::span<float>(p->value.data(), static_cast<std::size_t>(p->value.size())));
}

inline std::size_t param_count(const std::vector<nn::Param<float>*>& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
    return n;
}

inline AutoencoderConfig check_weight_header(const nlohmann::json& h) {
    const int version = h.value("format_version", -1);
    if (version != kWeightFormatVersion)
        throw FormatError("weight file format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kWeightFormatVersion) + ")");
    auto config = AutoencoderConfig::from_architecture_json(h.at("architecture"));
    config.seed = h.value("seed", std::uint64_t{0});
    if (h.value("latent_dim", -1) != config.latent_dim) throw FormatError("latent_dim disagrees with architecture");
    return config;
}

}  // namespace detail

inline void save_autoencoder(const std::filesystem::path& path, GlyphAutoencoder<float>& model) {
    ByteWriter w;
    std::size_t enc = 0;
    std::size_t dec = 0;
    detail::append_params(w, model.encoder.parameters(), enc);
    detail::append_params(w, model.decoder.parameters(), dec);
    const auto& c = model.config();
    nlohmann::json header = {{"format_version", kWeightFormatVersion},
                             {"architecture", c.architecture_json()},
                             {"latent_dim", c.latent_dim},
                             {"seed", c.seed},
                             {"encoder_params", enc},
                             {"decoder_params", dec}};
    write_file_bytes(path, pack_container(kWeightMagic, header, w.bytes()));
}

inline GlyphAutoencoder<float> load_autoencoder(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const auto container = unpack_container(bytes, kWeightMagic);
    const auto config = detail::check_weight_header(container.header);
    GlyphAutoencoder<float> model(config);
    const auto enc = model.encoder.parameters();
    const auto dec = model.decoder.parameters();
    if (container.payload.size() != 4 * (detail::param_count(enc) + detail::param_count(dec)))
        throw FormatError("weight payload does not match the architecture");
    ByteReader r(container.payload);
    detail::read_params(r, enc);
    detail::read_params(r, dec);
    return model;
}

/// Writes an encoder-only weight file (decoder_params = 0).
inline void save_encoder(const std::filesystem::path& path, const ImageEncoder& encoder) {
    auto net = encoder.network();
    ByteWriter w;
    std::size_t enc = 0;
    detail::append_params(w, net.parameters(), enc);
    const auto& c = net.config();
    nlohmann::json header = {{"format_version", kWeightFormatVersion},
                             {"architecture", c.architecture_json()},
                             {"latent_dim", c.latent_dim},
                             {"seed", c.seed},
                             {"encoder_params", enc},
                             {"decoder_params", 0}};
    write_file_bytes(path, pack_container(kWeightMagic, header, w.bytes()));
}

/// Loads only E_img; accepts full autoencoder files and encoder-only files.
inline ImageEncoder load_encoder(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const auto container = unpack_container(bytes, kWeightMagic);
    const auto config = detail::check_weight_header(container.header);
    nn::GlyphEncoder<float> net(config);
    const auto params = net.parameters();
    const auto enc = detail::param_count(params);
    const auto dec = container.header.value("decoder_params", std::size_t{0});
    if (container.header.value("encoder_params", std::size_t{0}) != enc || container.payload.size() != 4 * (enc + dec))
        throw FormatError("weight payload does not match the architecture");
    ByteReader r(container.payload);
    detail::read_params(r, params);
    return ImageEncoder(std::move(net));
}

}  // namespace fontclip
