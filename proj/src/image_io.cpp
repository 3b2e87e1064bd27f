#include "odrl/image_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace odrl {
namespace {

void write_binary(const std::string& path, const std::string& header,
                  const std::vector<std::uint8_t>& payload) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed: " + path);
}

std::vector<char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

// Parses "P<n>\n<w> <h>\n255\n" at the start of `bytes`. Returns the payload
// offset. Strict: exact separators, no comments, maxval must be 255.
std::size_t parse_header(const std::vector<char>& bytes, char magic_digit,
                         const std::string& path, int& width, int& height) {
    std::size_t i = 0;
    auto fail = [&](const std::string& why) -> std::size_t {
        throw IoError(path + ": " + why);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != magic_digit)
        fail(std::string("expected magic P") + magic_digit);
    i = 2;
    if (i >= bytes.size() || bytes[i] != '\n') fail("expected newline after magic");
    ++i;

    auto parse_int = [&](char terminator, const char* what) -> int {
        std::size_t start = i;
        long value = 0;
        while (i < bytes.size() && bytes[i] >= '0' && bytes[i] <= '9') {
            value = value * 10 + (bytes[i] - '0');
            if (value > 1000000000L) fail(std::string(what) + " out of range");
            ++i;
        }
        if (i == start) fail(std::string("expected ") + what);
        if (i >= bytes.size() || bytes[i] != terminator)
            fail(std::string("expected separator after ") + what);
        ++i;
        return static_cast<int>(value);
    };

    width = parse_int(' ', "width");
    height = parse_int('\n', "height");
    const int maxval = parse_int('\n', "maxval");
    if (maxval != 255) fail("maxval must be 255");
    if (width <= 0 || height <= 0) fail("dimensions must be positive");
    return i;
}

}  // namespace

void write_ppm(const std::string& path, const Frame& frame) {
    if (frame.height <= 0 || frame.width <= 0)
        throw UsageError("write_ppm: empty frame");
    char header[64];
    std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", frame.width,
                  frame.height);
    write_binary(path, header, frame.pixels);
}

Frame read_ppm(const std::string& path) {
    const std::vector<char> bytes = read_all(path);
    int width = 0, height = 0;
    const std::size_t offset = parse_header(bytes, '6', path, width, height);
    const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - offset != expected)
        throw IoError(path + ": payload size mismatch");
    Frame frame(height, width);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end(),
              reinterpret_cast<char*>(frame.pixels.data()));
    return frame;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    if (img.height <= 0 || img.width <= 0)
        throw UsageError("write_pgm: empty image");
    char header[64];
    std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", img.width,
                  img.height);
    write_binary(path, header, img.pixels);
}

GrayImage read_pgm(const std::string& path) {
    const std::vector<char> bytes = read_all(path);
    int width = 0, height = 0;
    const std::size_t offset = parse_header(bytes, '5', path, width, height);
    const std::size_t expected = static_cast<std::size_t>(width) * height;
    if (bytes.size() - offset != expected)
        throw IoError(path + ": payload size mismatch");
    GrayImage img(height, width);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end(),
              reinterpret_cast<char*>(img.pixels.data()));
    return img;
}

}  // namespace odrl
