#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "nightshift/rng.hpp"
#include "nightshift/tensor.hpp"

namespace nightshift {

struct AugmentParams {
    double crop_scale_min = 1.0;  // side length of the crop as a fraction of the image
    double crop_scale_max = 1.0;
    double flip_prob = 0.5;
    double brightness = 0.1;  // additive shift drawn from [-b, b]
    double contrast = 0.1;    // gain around the image mean drawn from [1-c, 1+c]

    void validate() const {
        if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
            throw ContractError("augment: need 0 < crop_scale_min <= crop_scale_max <= 1");
        }
        if (flip_prob < 0 || flip_prob > 1 || brightness < 0 || contrast < 0 || contrast >= 1) {
            throw ContractError("augment: flip_prob in [0,1], brightness >= 0, contrast in [0,1)");
        }
    }

    bool operator==(const AugmentParams&) const = default;
};

enum class AugmentStrength { Strong, Weak };

struct AugmentConfig {
    AugmentParams strong{0.6, 1.0, 0.5, 0.3, 0.3};
    AugmentParams weak{1.0, 1.0, 0.5, 0.1, 0.1};

    const AugmentParams& of(AugmentStrength s) const { return s == AugmentStrength::Strong ? strong : weak; }
    bool operator==(const AugmentConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentParams, crop_scale_min, crop_scale_max, flip_prob, brightness,
                                                contrast)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, strong, weak)

/// Crop-resize (bilinear), horizontal flip, then brightness/contrast jitter.
/// Always consumes the same number of draws from rng. Output clipped to [-1,1].
inline Tensor augment(const Tensor& image, const AugmentParams& p, Rng& rng) {
    p.validate();
    if (image.rank() != 3) throw ShapeError("augment: expected [C x H x W], got " + shape_str(image.shape()));
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;
    const double scale = rng.uniform(p.crop_scale_min, p.crop_scale_max);
    const double u_y = rng.uniform(), u_x = rng.uniform();
    const bool flip = rng.uniform() < p.flip_prob;
    const double shift = rng.uniform(-p.brightness, p.brightness);
    const double gain = rng.uniform(1.0 - p.contrast, 1.0 + p.contrast);

    const auto& src = image.data();
    std::vector<double> out(src.begin(), src.end());
    if (p.crop_scale_min < 1.0) {
        const double ch_h = scale * static_cast<double>(h), ch_w = scale * static_cast<double>(w);
        const double y0 = u_y * (static_cast<double>(h) - ch_h), x0 = u_x * (static_cast<double>(w) - ch_w);
        auto sample = [&](std::size_t c, double y, double x) {
            y = std::clamp(y, 0.0, static_cast<double>(h - 1));
            x = std::clamp(x, 0.0, static_cast<double>(w - 1));
            const std::size_t y_lo = static_cast<std::size_t>(y), x_lo = static_cast<std::size_t>(x);
            const std::size_t y_hi = std::min(y_lo + 1, h - 1), x_hi = std::min(x_lo + 1, w - 1);
            const double fy = y - static_cast<double>(y_lo), fx = x - static_cast<double>(x_lo);
            const double* s = src.data() + c * plane;
            return (1 - fy) * ((1 - fx) * s[y_lo * w + x_lo] + fx * s[y_lo * w + x_hi]) +
                   fy * ((1 - fx) * s[y_hi * w + x_lo] + fx * s[y_hi * w + x_hi]);
        };
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double y = y0 + (static_cast<double>(i) + 0.5) * ch_h / static_cast<double>(h) - 0.5;
                    const double x = x0 + (static_cast<double>(j) + 0.5) * ch_w / static_cast<double>(w) - 0.5;
                    out[c * plane + i * w + j] = sample(c, y, x);
                }
    }
    if (flip) {
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t i = 0; i < h; ++i) {
                auto row = out.begin() + static_cast<std::ptrdiff_t>(c * plane + i * w);
                std::reverse(row, row + static_cast<std::ptrdiff_t>(w));
            }
    }
    if (p.brightness == 0.0 && p.contrast == 0.0) return Tensor(image.shape(), std::move(out));
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= static_cast<double>(out.size());
    for (double& v : out) v = std::clamp((v - mean) * gain + mean + shift, -1.0, 1.0);
    return Tensor(image.shape(), std::move(out));
}

inline Tensor augment(const Tensor& image, AugmentStrength s, Rng& rng, const AugmentConfig& cfg = {}) {
    return augment(image, cfg.of(s), rng);
}

}  // namespace nightshift
