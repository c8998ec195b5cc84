#pragma once

// Procedural traffic scenes: sky gradient, grass, a road receding to the
// horizon with lane dashes and a few vehicles. Weather and lighting are
// layered on top of that base.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nightshift/labels.hpp"
#include "nightshift/rng.hpp"
#include "nightshift/tensor.hpp"

namespace nightshift {

struct SceneSpec {
    WeatherClass weather = WeatherClass::NoPrecipitation;
    Domain domain = Domain::Day;
    std::uint64_t seed = 0;
    std::size_t size = 32;
};

inline constexpr double kNightScale = 0.25;
inline constexpr double kNightNoiseSigma = 0.05;

namespace detail {

using Rgb = std::array<double, 3>;

// Working canvas in [0, 1] intensity units.
class Canvas {
   public:
    explicit Canvas(std::size_t n) : n_(n), px_(n * n) {}

    std::size_t size() const { return n_; }
    Rgb& at(std::size_t y, std::size_t x) { return px_[y * n_ + x]; }
    const Rgb& at(std::size_t y, std::size_t x) const { return px_[y * n_ + x]; }

    void blend(std::size_t y, std::size_t x, const Rgb& c, double alpha) {
        auto& p = at(y, x);
        for (int k = 0; k < 3; ++k) p[k] = (1.0 - alpha) * p[k] + alpha * c[k];
    }

   private:
    std::size_t n_;
    std::vector<Rgb> px_;
};

inline Rgb jitter(const Rgb& base, double amount, Rng& rng) {
    Rgb out;
    const double common = rng.uniform(-amount, amount);
    for (int k = 0; k < 3; ++k) out[k] = std::clamp(base[k] + common + rng.uniform(-amount, amount) * 0.5, 0.0, 1.0);
    return out;
}

inline void paint_base(Canvas& cv, WeatherClass weather, Rng& rng) {
    const std::size_t n = cv.size();
    const double nd = static_cast<double>(n);
    const bool overcast = weather != WeatherClass::NoPrecipitation;

    Rgb sky_top = overcast ? jitter({0.55, 0.57, 0.62}, 0.06, rng) : jitter({0.35, 0.55, 0.90}, 0.06, rng);
    Rgb sky_low = overcast ? jitter({0.68, 0.69, 0.72}, 0.05, rng) : jitter({0.70, 0.80, 0.95}, 0.05, rng);
    Rgb grass = jitter({0.30, 0.52, 0.24}, 0.06, rng);
    Rgb road = jitter({0.40, 0.40, 0.42}, 0.05, rng);
    if (overcast) {
        // flat light: ground desaturated toward the road grey
        for (int k = 0; k < 3; ++k) {
            grass[k] = 0.5 * grass[k] + 0.5 * road[k];
            road[k] *= 0.95;
        }
    }
    if (weather == WeatherClass::Rain) {
        // heavy cloud, wet road
        for (int k = 0; k < 3; ++k) {
            sky_top[k] *= 0.7;
            sky_low[k] *= 0.75;
            grass[k] *= 0.7;
            road[k] *= 0.65;
        }
    }
    const double horizon = nd * rng.uniform(0.35, 0.50);
    const double vanish_x = nd * rng.uniform(0.35, 0.65);
    const double bottom_half = nd * rng.uniform(0.40, 0.55);
    const double top_half = nd * 0.04;
    const double dash_phase = rng.uniform(0.0, 4.0);

    for (std::size_t y = 0; y < n; ++y) {
        const double yc = static_cast<double>(y) + 0.5;
        for (std::size_t x = 0; x < n; ++x) {
            const double xc = static_cast<double>(x) + 0.5;
            auto& p = cv.at(y, x);
            if (yc < horizon) {
                const double t = yc / horizon;
                for (int k = 0; k < 3; ++k) p[k] = (1.0 - t) * sky_top[k] + t * sky_low[k];
                continue;
            }
            const double depth = (yc - horizon) / (nd - horizon);  // 0 at horizon, 1 at bottom
            const double half = top_half + depth * (bottom_half - top_half);
            const double cx = vanish_x + depth * (nd * 0.5 - vanish_x);
            const double shade = 0.85 + 0.15 * depth;
            const Rgb& base = std::abs(xc - cx) <= half ? road : grass;
            for (int k = 0; k < 3; ++k) p[k] = base[k] * shade;
            const double lane_w = std::max(0.5, 0.04 * half);
            if (std::abs(xc - cx) <= lane_w && std::fmod(yc + dash_phase, 4.0) < 2.0) {
                p = {0.92, 0.90, 0.75};
            }
        }
    }

    // vehicles: small boxes on the road below the horizon
    const std::size_t cars = rng.below(3);
    for (std::size_t c = 0; c < cars; ++c) {
        const Rgb body = jitter({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}, 0.05, rng);
        const double depth = rng.uniform(0.2, 0.9);
        const double yc = horizon + depth * (nd - horizon);
        const double half = top_half + depth * (bottom_half - top_half);
        const double cx = vanish_x + depth * (nd * 0.5 - vanish_x) + rng.uniform(-0.6, 0.6) * half;
        const double w = std::max(1.0, 0.5 * half);
        const double h = std::max(1.0, 0.35 * half);
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double dy = static_cast<double>(y) + 0.5 - yc;
                if (std::abs(dx) <= w * 0.5 && dy <= 0.0 && dy >= -h) cv.at(y, x) = body;
            }
        }
    }
}

inline void paint_rain(Canvas& cv, Rng& rng) {
    const std::size_t n = cv.size();
    const Rgb drop{0.90, 0.92, 0.97};
    const std::size_t streaks = n * n / 10;
    for (std::size_t s = 0; s < streaks; ++s) {
        long x = static_cast<long>(rng.below(n));
        long y = static_cast<long>(rng.below(n));
        const std::size_t len = 3 + rng.below(4);
        const double alpha = rng.uniform(0.50, 0.70);
        for (std::size_t t = 0; t < len; ++t) {
            if (x >= 0 && y >= 0 && x < static_cast<long>(n) && y < static_cast<long>(n)) {
                cv.blend(static_cast<std::size_t>(y), static_cast<std::size_t>(x), drop, alpha);
            }
            // slope: two rows down, one column right
            y += 1;
            if (t % 2 == 1) x += 1;
        }
    }
}

inline void paint_snow(Canvas& cv, Rng& rng) {
    const std::size_t n = cv.size();
    const Rgb white{0.97, 0.97, 1.0};
    // settled snow whitens the ground a little
    for (std::size_t y = n / 2; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) cv.blend(y, x, white, 0.40);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            if (rng.bernoulli(0.30)) cv.blend(y, x, white, rng.uniform(0.85, 1.0));
        }
    }
}

}  // namespace detail

/// Day scene as a [0,1] canvas; the night variant is derived from it.
inline detail::Canvas render_day_canvas(WeatherClass weather, std::uint64_t seed, std::size_t size) {
    detail::Canvas cv(size);
    Rng rng(derive_seed(seed, 0));
    detail::paint_base(cv, weather, rng);
    Rng weather_rng(derive_seed(seed, 1));
    if (weather == WeatherClass::Rain) detail::paint_rain(cv, weather_rng);
    if (weather == WeatherClass::Snow) detail::paint_snow(cv, weather_rng);
    return cv;
}

/// Deterministic in (weather, domain, seed, size). Night renders the same scene as day (same
/// seed), scaled to 25% brightness, colour-cast toward amber, plus gaussian
/// sensor noise in [-1,1] units.
inline Tensor render_scene(const SceneSpec& spec) {
    if (spec.size < 8) throw ContractError("render_scene: size must be >= 8, got " + std::to_string(spec.size));
    const std::size_t n = spec.size, plane = n * n;
    auto cv = render_day_canvas(spec.weather, spec.seed, n);
    std::vector<double> data(3 * plane);
    if (spec.domain == Domain::Day) {
        for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t c = 0; c < 3; ++c) data[c * plane + p] = 2.0 * cv.at(p / n, p % n)[c] - 1.0;
        return Tensor({3, n, n}, std::move(data));
    }
    Rng rng(derive_seed(spec.seed, 2));
    const std::array<double, 3> cast{1.15 + rng.uniform(-0.05, 0.05), 0.95 + rng.uniform(-0.05, 0.05),
                                     0.70 + rng.uniform(-0.05, 0.05)};
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < plane; ++p) {
            const double b = std::min(1.0, cv.at(p / n, p % n)[c] * kNightScale * cast[c]);
            const double v = 2.0 * b - 1.0 + rng.normal() * kNightNoiseSigma;
            data[c * plane + p] = std::clamp(v, -1.0, 1.0);
        }
    }
    return Tensor({3, n, n}, std::move(data));
}

}  // namespace nightshift
