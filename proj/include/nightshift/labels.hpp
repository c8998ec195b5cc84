#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace nightshift {

enum class WeatherClass : std::size_t { NoPrecipitation = 0, Rain = 1, Snow = 2 };
enum class Domain : std::size_t { Day = 0, Night = 1 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<WeatherClass, kNumClasses> kAllClasses{WeatherClass::NoPrecipitation, WeatherClass::Rain,
                                                                   WeatherClass::Snow};
inline constexpr std::array<Domain, 2> kAllDomains{Domain::Day, Domain::Night};

constexpr std::size_t index_of(WeatherClass c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index_of(Domain d) { return static_cast<std::size_t>(d); }

constexpr std::string_view to_string(WeatherClass c) {
    switch (c) {
        case WeatherClass::NoPrecipitation:
            return "no_precip";
        case WeatherClass::Rain:
            return "rain";
        case WeatherClass::Snow:
            return "snow";
    }
    return "?";
}

constexpr std::string_view to_string(Domain d) { return d == Domain::Day ? "day" : "night"; }

inline std::optional<WeatherClass> parse_class(std::string_view s) {
    for (auto c : kAllClasses) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

inline std::optional<Domain> parse_domain(std::string_view s) {
    for (auto d : kAllDomains) {
        if (to_string(d) == s) return d;
    }
    return std::nullopt;
}

}  // namespace nightshift
