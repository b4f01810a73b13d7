#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "glyph_stack.hpp"

namespace fontclip {

/// Shape parameters of a procedurally drawn font.
struct FontAttributes {
    double stroke = 0.08;     ///< stroke width as a fraction of cap height
    double serif_size = 0.0;  ///< serif half-length as a fraction of cap height; 0 = sans
    double slant = 0.0;       ///< horizontal shear (positive leans right)
    double roundness = 0.5;   ///< 1 = round stroke ends and joins, 0 = square
    double aspect = 1.0;      ///< glyph box width / height

    [[nodiscard]] bool serif() const { return serif_size > 0.0; }
};

namespace render {

struct Point {
    double x;
    double y;
};

using Polyline = std::vector<Point>;
using Skeleton = std::vector<Polyline>;

// Angles in degrees, 0 = +x, 90 = +y (downwards).
inline Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int steps = 20) {
    Polyline p;
    for (int i = 0; i <= steps; ++i) {
        const double a = (a0 + (a1 - a0) * i / steps) * std::numbers::pi / 180.0;
        p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return p;
}

inline Polyline join(Polyline a, const Polyline& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Stroke skeletons for A..Z in a unit box, y down.
inline Skeleton letter_skeleton(char letter) {
    switch (letter) {
        case 'A': return {{{0, 1}, {0.5, 0}, {1, 1}}, {{0.22, 0.62}, {0.78, 0.62}}};
        case 'B':
            return {{{0, 0}, {0, 1}},
                    join(join({{0, 0}}, arc(0.55, 0.25, 0.35, 0.25, -90, 90)), {{0, 0.5}}),
                    join(join({{0, 0.5}}, arc(0.6, 0.75, 0.4, 0.25, -90, 90)), {{0, 1}})};
        case 'C': return {arc(0.55, 0.5, 0.5, 0.5, -40, -320, 32)};
        case 'D': return {{{0, 0}, {0, 1}}, join(join({{0, 0}}, arc(0.4, 0.5, 0.6, 0.5, -90, 90, 24)), {{0, 1}})};
        case 'E': return {{{1, 0}, {0, 0}, {0, 1}, {1, 1}}, {{0, 0.5}, {0.8, 0.5}}};
        case 'F': return {{{1, 0}, {0, 0}, {0, 1}}, {{0, 0.5}, {0.8, 0.5}}};
        case 'G': return {arc(0.55, 0.5, 0.5, 0.5, -40, -315, 32), {{0.6, 0.55}, {1.0, 0.55}, {1.0, 0.9}}};
        case 'H': return {{{0, 0}, {0, 1}}, {{1, 0}, {1, 1}}, {{0, 0.5}, {1, 0.5}}};
        case 'I': return {{{0.5, 0}, {0.5, 1}}};
        case 'J': return {join({{0.8, 0}}, arc(0.45, 0.68, 0.35, 0.32, 0, 180, 16))};
        case 'K': return {{{0, 0}, {0, 1}}, {{1, 0}, {0, 0.62}}, {{0.32, 0.42}, {1, 1}}};
        case 'L': return {{{0, 0}, {0, 1}, {1, 1}}};
        case 'M': return {{{0, 1}, {0, 0}, {0.5, 0.62}, {1, 0}, {1, 1}}};
        case 'N': return {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}};
        case 'O': return {arc(0.5, 0.5, 0.5, 0.5, 0, 360, 36)};
        case 'P': return {{{0, 0}, {0, 1}}, join(join({{0, 0}}, arc(0.55, 0.27, 0.42, 0.27, -90, 90)), {{0, 0.54}})};
        case 'Q': return {arc(0.5, 0.5, 0.5, 0.5, 0, 360, 36), {{0.6, 0.7}, {1.0, 1.0}}};
        case 'R':
            return {{{0, 0}, {0, 1}},
                    join(join({{0, 0}}, arc(0.55, 0.27, 0.42, 0.27, -90, 90)), {{0, 0.54}}),
                    {{0.45, 0.54}, {1, 1}}};
        case 'S':
            return {join(arc(0.5, 0.27, 0.45, 0.27, -25, -270, 18), arc(0.5, 0.77, 0.48, 0.23, -90, 155, 18))};
        case 'T': return {{{0, 0}, {1, 0}}, {{0.5, 0}, {0.5, 1}}};
        case 'U': return {join(join({{0, 0}}, arc(0.5, 0.62, 0.5, 0.38, 180, 0, 18)), {{1, 0}})};
        case 'V': return {{{0, 0}, {0.5, 1}, {1, 0}}};
        case 'W': return {{{0, 0}, {0.25, 1}, {0.5, 0.35}, {0.75, 1}, {1, 0}}};
        case 'X': return {{{0, 0}, {1, 1}}, {{1, 0}, {0, 1}}};
        case 'Y': return {{{0, 0}, {0.5, 0.5}, {1, 0}}, {{0.5, 0.5}, {0.5, 1}}};
        case 'Z': return {{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};
        default: return {};
    }
}

struct Segment {
    Point a;
    Point b;
    double half_width;
};

/// Rasterizes segments into one 64x64 channel. Offsets from the nearest point
/// on a segment are measured in an L_p norm so low `roundness` squares off
/// stroke ends and joins.
inline void rasterize(std::span<float> out, const std::vector<Segment>& segments, double p_norm) {
    for (const auto& s : segments) {
        const double r = s.half_width + 1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.x, s.b.x) - r)));
        const int x1 = std::min(kGlyphSize - 1, static_cast<int>(std::ceil(std::max(s.a.x, s.b.x) + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.y, s.b.y) - r)));
        const int y1 = std::min(kGlyphSize - 1, static_cast<int>(std::ceil(std::max(s.a.y, s.b.y) + r)));
        const double dx = s.b.x - s.a.x;
        const double dy = s.b.y - s.a.y;
        const double len2 = dx * dx + dy * dy;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                double t = len2 > 0 ? ((px - s.a.x) * dx + (py - s.a.y) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ox = std::abs(px - (s.a.x + t * dx));
                const double oy = std::abs(py - (s.a.y + t * dy));
                const double d = std::pow(std::pow(ox, p_norm) + std::pow(oy, p_norm), 1.0 / p_norm);
                const double ink = std::clamp(s.half_width + 0.5 - d, 0.0, 1.0);
                auto& v = out[static_cast<std::size_t>(y) * kGlyphSize + x];
                v = std::max(v, static_cast<float>(ink));
            }
        }
    }
}

}  // namespace render

/// Draws all 26 capitals for a font.
inline GlyphStack render_font(const FontAttributes& attrs) {
    using namespace render;
    constexpr double kCapHeight = 44.0;
    constexpr double kTop = 10.0;
    const double box_w = std::clamp(38.0 * attrs.aspect, 14.0, 54.0);
    const double left = (kGlyphSize - box_w) / 2.0 - attrs.slant * kCapHeight / 2.0;
    const double half_width = std::max(0.45, attrs.stroke * kCapHeight / 2.0);
    const double serif_half = std::max(0.4, 0.55 * half_width);
    const double p_norm = 2.0 + 6.0 * (1.0 - std::clamp(attrs.roundness, 0.0, 1.0));

    const auto to_px = [&](Point q) {
        const double y = kTop + q.y * kCapHeight;
        const double x = left + q.x * box_w + attrs.slant * (kTop + kCapHeight - y);
        return Point{x, y};
    };

    GlyphStack stack;
    for (int c = 0; c < kLetterCount; ++c) {
        std::vector<Segment> segments;
        for (const auto& line : letter_skeleton(letter_of(c))) {
            for (std::size_t i = 1; i < line.size(); ++i)
                segments.push_back({to_px(line[i - 1]), to_px(line[i]), half_width});
            if (attrs.serif() && line.size() >= 2) {
                for (const Point& end : {line.front(), line.back()}) {
                    if (end.y > 0.04 && end.y < 0.96) continue;
                    const double reach = attrs.serif_size * kCapHeight / box_w;
                    segments.push_back({to_px({end.x - reach, end.y}), to_px({end.x + reach, end.y}), serif_half});
                }
            }
        }
        rasterize(stack.channel_mut(c), segments, p_norm);
    }
    return stack;
}

}  // namespace fontclip
