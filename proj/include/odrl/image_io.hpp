#pragma once

#include <string>

#include "odrl/image.hpp"

namespace odrl {

// Binary PPM (P6) and PGM (P5), maxval fixed at 255.
//
// Writer emits the canonical header "P6\n<w> <h>\n255\n" (or P5) followed by
// raw pixel data. The reader is strict: exact magic, single spaces/newlines
// as written, maxval 255, and exactly height*width*(3|1) payload bytes.
// Anything else raises IoError. Round-trips are bit-exact.

void write_ppm(const std::string& path, const Frame& frame);
Frame read_ppm(const std::string& path);

void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);

}  // namespace odrl
