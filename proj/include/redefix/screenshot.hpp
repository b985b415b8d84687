#pragma once

#include <string>

#include "redefix/layout_model.hpp"

namespace redefix {

/// PNG crop of a page region at one viewport width.
struct Screenshot {
    std::string png_bytes;  // raw bytes, not base64
    int viewport_width = 0;
    layout::BoundingBox region;
};

/// True when the bytes start with the PNG signature and an IHDR chunk.
bool looks_like_png(const std::string& bytes);

}  // namespace redefix
