#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fontclip {

inline constexpr int kLetterCount = 26;
inline constexpr int kGlyphSize = 64;
inline constexpr std::size_t kGlyphPixels = static_cast<std::size_t>(kGlyphSize) * kGlyphSize;
inline constexpr std::size_t kStackValues = kLetterCount * kGlyphPixels;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline char letter_of(int channel) { return static_cast<char>('A' + channel); }

/// 26 x 64 x 64 grayscale stack, one channel per capital letter A..Z.
/// Intensities are in [0, 1] with 1 = ink.
class GlyphStack {
public:
    GlyphStack() : pixels_(kStackValues, 0.0f) {}

    /// Validates shape and range.
    explicit GlyphStack(std::vector<float> pixels) : pixels_(std::move(pixels)) {
        if (pixels_.size() != kStackValues)
            throw ShapeError("glyph stack must hold 26x64x64 values, got " + std::to_string(pixels_.size()));
        for (float v : pixels_) {
            if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
                throw std::invalid_argument("glyph intensities must be finite and within [0,1]");
        }
    }

    [[nodiscard]] float at(int channel, int y, int x) const { return pixels_[index(channel, y, x)]; }

    void set(int channel, int y, int x, float v) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("glyph intensity out of [0,1]");
        pixels_[index(channel, y, x)] = v;
    }

    [[nodiscard]] std::span<const float> channel(int c) const {
        return std::span<const float>(pixels_).subspan(static_cast<std::size_t>(c) * kGlyphPixels, kGlyphPixels);
    }
    [[nodiscard]] std::span<float> channel_mut(int c) {
        return std::span<float>(pixels_).subspan(static_cast<std::size_t>(c) * kGlyphPixels, kGlyphPixels);
    }

    [[nodiscard]] std::span<const float> values() const { return pixels_; }

    friend bool operator==(const GlyphStack&, const GlyphStack&) = default;

private:
    static std::size_t index(int c, int y, int x) {
        return (static_cast<std::size_t>(c) * kGlyphSize + y) * kGlyphSize + x;
    }

    std::vector<float> pixels_;
};

}  // namespace fontclip
