#include "redefix/screenshot.hpp"

namespace redefix {

bool looks_like_png(const std::string& bytes) {
    static const std::string sig("\x89PNG\r\n\x1a\n", 8);
    return bytes.size() >= 33 && bytes.compare(0, 8, sig) == 0 && bytes.compare(12, 4, "IHDR") == 0;
}

}  // namespace redefix
