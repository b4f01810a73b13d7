#pragma once

#include <string>
#include <vector>

#include "glyph_stack.hpp"

namespace fontclip {

struct FontRecord {
    std::string font_id;
    GlyphStack glyphs;
    std::vector<std::string> tags;
};

/// Font metadata without pixels; what the service keeps resident.
struct FontMeta {
    std::string font_id;
    std::vector<std::string> tags;
};

}  // namespace fontclip
