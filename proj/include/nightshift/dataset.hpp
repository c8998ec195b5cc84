#pragma once

// Synthetic dataset generation and manifest ingestion.
//
// Layout under out_dir:
//   manifest.csv
//   images/<split>/<class>_<domain>_<nnnn>.ppm
//
// Seed of image k (k counts rows in manifest order) is derive_seed(master, k).
// A night image and a day image with the same seed show the same scene.

#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nightshift/image_io.hpp"
#include "nightshift/scene.hpp"

namespace nightshift {

enum class Split : std::size_t { Train = 0, Val = 1, Test = 2 };
inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

constexpr std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train:
            return "train";
        case Split::Val:
            return "val";
        case Split::Test:
            return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    for (auto v : kAllSplits) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}

/// Images per (class, domain) cell, for each split.
struct SplitCounts {
    std::size_t train = 6;
    std::size_t val = 2;
    std::size_t test = 2;

    std::size_t of(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
    std::size_t total() const { return train + val + test; }

    /// Splits `per_cell` images by fractions (default 60/20/20); train takes the remainder.
    static SplitCounts from_total(std::size_t per_cell, double val_fraction = 0.2, double test_fraction = 0.2) {
        if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction > 1.0) {
            throw ContractError("split fractions must be non-negative and sum to at most 1");
        }
        SplitCounts c;
        c.val = static_cast<std::size_t>(std::llround(static_cast<double>(per_cell) * val_fraction));
        c.test = static_cast<std::size_t>(std::llround(static_cast<double>(per_cell) * test_fraction));
        c.train = per_cell - c.val - c.test;
        return c;
    }

    bool operator==(const SplitCounts&) const = default;
};

struct DatasetSpec {
    SplitCounts counts;
    std::size_t image_size = 32;
    std::uint64_t master_seed = 0;

    bool operator==(const DatasetSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitCounts, train, val, test)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSpec, counts, image_size, master_seed)

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    WeatherClass label = WeatherClass::NoPrecipitation;
    Domain domain = Domain::Day;
    Split split = Split::Train;
    std::uint64_t seed = 0;

    bool operator==(const ManifestRecord&) const = default;
};

inline constexpr std::string_view kManifestHeader = "path,class,domain,split,seed";

/// Renders every image and writes the manifest. Returns the manifest path.
inline std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::ostringstream manifest;
    manifest << kManifestHeader << '\n';
    std::uint64_t k = 0;
    for (auto split : kAllSplits) {
        const fs::path dir = out_dir / "images" / std::string(to_string(split));
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        for (auto cls : kAllClasses) {
            for (auto dom : kAllDomains) {
                for (std::size_t i = 0; i < spec.counts.of(split); ++i, ++k) {
                    const std::uint64_t seed = derive_seed(spec.master_seed, k);
                    char name[64];
                    std::snprintf(name, sizeof name, "%s_%s_%04zu.ppm", std::string(to_string(cls)).c_str(),
                                  std::string(to_string(dom)).c_str(), i);
                    const std::string rel = "images/" + std::string(to_string(split)) + "/" + name;
                    write_ppm(render_scene({cls, dom, seed, spec.image_size}), out_dir / rel);
                    manifest << rel << ',' << to_string(cls) << ',' << to_string(dom) << ',' << to_string(split) << ','
                             << seed << '\n';
                }
            }
        }
    }
    const fs::path path = out_dir / "manifest.csv";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << manifest.str();
    if (!f) throw IoError("failed writing manifest " + path.string());
    return path;
}

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRecord> train, val, test;

    const std::vector<ManifestRecord>& of(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
    std::vector<ManifestRecord>& of(Split s) { return s == Split::Train ? train : s == Split::Val ? val : test; }
    std::size_t size() const { return train.size() + val.size() + test.size(); }
    std::filesystem::path resolve(const ManifestRecord& r) const { return base_dir / r.path; }
};

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("manifest not found: " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    auto strip_cr = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    if (!std::getline(f, line)) throw ParseError("manifest is empty (expected header)", 1);
    ++line_no;
    strip_cr(line);
    if (line != kManifestHeader) throw ParseError("manifest header must be '" + std::string(kManifestHeader) + "'", 1);
    while (std::getline(f, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
        if (cols.size() != 5) throw ParseError("expected 5 columns, got " + std::to_string(cols.size()), line_no);
        ManifestRecord r;
        r.path = cols[0];
        const auto cls = parse_class(cols[1]);
        if (!cls) throw ParseError("unknown class '" + cols[1] + "'", line_no);
        const auto dom = parse_domain(cols[2]);
        if (!dom) throw ParseError("unknown domain '" + cols[2] + "'", line_no);
        const auto split = parse_split(cols[3]);
        if (!split) throw ParseError("unknown split '" + cols[3] + "'", line_no);
        try {
            std::size_t used = 0;
            r.seed = std::stoull(cols[4], &used);
            if (used != cols[4].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ParseError("bad seed '" + cols[4] + "'", line_no);
        }
        r.label = *cls;
        r.domain = *dom;
        r.split = *split;
        if (!std::filesystem::exists(m.resolve(r))) {
            throw DataError("line " + std::to_string(line_no) + ": missing image file " + m.resolve(r).string());
        }
        m.of(r.split).push_back(std::move(r));
    }
    return m;
}

struct LabeledImage {
    Tensor image;
    WeatherClass label = WeatherClass::NoPrecipitation;
    Domain domain = Domain::Day;
    ManifestRecord source;
};

/// Decodes every record of `split`; each image must be [3 x size x size].
inline std::vector<LabeledImage> load_split(const Manifest& m, Split split, std::size_t image_size) {
    std::vector<LabeledImage> out;
    out.reserve(m.of(split).size());
    for (const auto& r : m.of(split)) {
        Tensor img = read_ppm(m.resolve(r));
        if (img.shape() != Shape{3, image_size, image_size}) {
            throw DataError(m.resolve(r).string() + ": expected " + shape_str({3, image_size, image_size}) + ", got " +
                            shape_str(img.shape()));
        }
        out.push_back({std::move(img), r.label, r.domain, r});
    }
    return out;
}

}  // namespace nightshift
