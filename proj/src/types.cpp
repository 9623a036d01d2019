#include "megenum/types.hpp"

namespace megenum {

std::string_view to_string(OrientationMode mode) {
    return mode == OrientationMode::fixed ? "fixed" : "free";
}

OrientationMode parse_orientation_mode(std::string_view text) {
    if (text == "fixed") return OrientationMode::fixed;
    if (text == "free") return OrientationMode::free;
    throw InvalidInput("orientation mode must be 'fixed' or 'free', got '" + std::string(text) + "'");
}

}  // namespace megenum
