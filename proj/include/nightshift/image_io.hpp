#pragma once

// Binary PPM (P6, maxval 255) codec. Pixel values map [-1, 1] <-> [0, 255] by
// byte = round((v + 1) * 127.5), v = byte / 127.5 - 1.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "nightshift/tensor.hpp"

namespace nightshift {

inline std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("encode_ppm: expected [3xHxW], got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + 3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(image[c * plane + p], -1.0, 1.0);
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
        }
    }
    return out;
}

namespace detail {

class PpmHeaderReader {
   public:
    explicit PpmHeaderReader(std::string_view bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            const std::size_t digit = static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (SIZE_MAX - digit) / 10) throw FormatError(std::string("PPM ") + what + " overflows", start);
            value = value * 10 + digit;
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("PPM header: expected ") + what, start);
        return value;
    }

    std::size_t pos_ = 0;
    std::string_view bytes_;
};

}  // namespace detail

inline Tensor decode_ppm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("bad PPM magic (expected P6)", 0);
    detail::PpmHeaderReader r(bytes);
    r.pos_ = 2;
    r.skip_space_and_comments();
    const std::size_t dims_at = r.pos_;
    const std::size_t w = r.number("width");
    const std::size_t h = r.number("height");
    r.skip_space_and_comments();
    const std::size_t maxval_at = r.pos_;
    const std::size_t maxval = r.number("maxval");
    if (w == 0 || h == 0) throw FormatError("PPM dimensions must be positive", dims_at);
    if (maxval != 255) throw FormatError("PPM maxval must be 255, got " + std::to_string(maxval), maxval_at);
    if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
        throw FormatError("PPM header must end with a single whitespace byte", r.pos_);
    }
    const std::size_t data_at = r.pos_ + 1;
    const std::size_t available = bytes.size() - data_at;
    if (w > available / 3 / h) {
        throw FormatError("PPM payload truncated or dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                              " exceed file size",
                          bytes.size());
    }
    const std::size_t plane = w * h;
    if (available != 3 * plane) throw FormatError("PPM has trailing bytes after payload", data_at + 3 * plane);
    std::vector<double> data(3 * plane);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            data[c * plane + p] = static_cast<unsigned char>(bytes[data_at + 3 * p + c]) / 127.5 - 1.0;
        }
    return Tensor({3, h, w}, std::move(data));
}

inline void write_ppm(const Tensor& image, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image " + path.string());
    const auto bytes = encode_ppm(image);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing image " + path.string());
}

inline Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read image " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace nightshift
