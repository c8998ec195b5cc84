#pragma once

// Confusion-matrix metrics stratified by domain and class, and their
// markdown/json rendering. All metric values are percentages.
//
// Precision and F1 are macro averages over the classes that occur in the
// stratum (as a true label or as a prediction). 0/0 counts as 0.

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nightshift/errors.hpp"
#include "nightshift/labels.hpp"

namespace nightshift {

struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};  // [true][predicted]

    void add(WeatherClass truth, WeatherClass predicted) { ++counts[index_of(truth)][index_of(predicted)]; }
    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (const auto& row : counts)
            for (auto v : row) n += v;
        return n;
    }
    std::uint64_t trace() const {
        std::uint64_t n = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) n += counts[c][c];
        return n;
    }
    std::uint64_t row_sum(std::size_t c) const {
        std::uint64_t n = 0;
        for (auto v : counts[c]) n += v;
        return n;
    }
    std::uint64_t col_sum(std::size_t c) const {
        std::uint64_t n = 0;
        for (const auto& row : counts) n += row[c];
        return n;
    }
    bool operator==(const ConfusionMatrix&) const = default;
};

struct Scores {
    double accuracy = 0;
    double precision = 0;
    double f1 = 0;
    bool operator==(const Scores&) const = default;
};

namespace detail {

inline double ratio_pct(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline double class_precision(const ConfusionMatrix& m, std::size_t c) { return ratio_pct(m.counts[c][c], m.col_sum(c)); }
inline double class_recall(const ConfusionMatrix& m, std::size_t c) { return ratio_pct(m.counts[c][c], m.row_sum(c)); }

}  // namespace detail

/// Overall scores of one stratum; nullopt when it holds no samples.
inline std::optional<Scores> stratum_scores(const ConfusionMatrix& m) {
    if (m.total() == 0) return std::nullopt;
    Scores s;
    s.accuracy = detail::ratio_pct(m.trace(), m.total());
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (m.row_sum(c) == 0 && m.col_sum(c) == 0) continue;
        ++present;
        const double p = detail::class_precision(m, c);
        s.precision += p;
        s.f1 += detail::harmonic(p, detail::class_recall(m, c));
    }
    s.precision /= static_cast<double>(present);
    s.f1 /= static_cast<double>(present);
    return s;
}

/// Per-class scores: accuracy is the class recall. nullopt when the class has no true samples.
inline std::optional<Scores> class_scores(const ConfusionMatrix& m, WeatherClass cls) {
    const std::size_t c = index_of(cls);
    if (m.row_sum(c) == 0) return std::nullopt;
    const double p = detail::class_precision(m, c), r = detail::class_recall(m, c);
    return Scores{r, p, detail::harmonic(p, r)};
}

struct MetricsReport {
    Scores overall;
    std::array<std::optional<Scores>, 2> by_domain;            // indexed by Domain
    std::array<std::optional<Scores>, kNumClasses> by_class;  // indexed by WeatherClass
    std::uint64_t total = 0;
    std::array<std::uint64_t, 2> domain_counts{};
    std::array<std::uint64_t, kNumClasses> class_counts{};
    ConfusionMatrix confusion;
    std::array<ConfusionMatrix, 2> domain_confusion;

    const std::optional<Scores>& domain(Domain d) const { return by_domain[index_of(d)]; }
    const std::optional<Scores>& cls(WeatherClass c) const { return by_class[index_of(c)]; }
    bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport compute_metrics(std::span<const WeatherClass> predictions, std::span<const WeatherClass> labels,
                                     std::span<const Domain> domains) {
    if (predictions.size() != labels.size() || labels.size() != domains.size()) {
        throw ContractError("compute_metrics: predictions, labels and domains must have equal length (" +
                            std::to_string(predictions.size()) + ", " + std::to_string(labels.size()) + ", " +
                            std::to_string(domains.size()) + ")");
    }
    if (labels.empty()) throw ContractError("compute_metrics: no samples");
    MetricsReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        r.confusion.add(labels[i], predictions[i]);
        r.domain_confusion[index_of(domains[i])].add(labels[i], predictions[i]);
    }
    r.total = r.confusion.total();
    r.overall = *stratum_scores(r.confusion);
    for (auto d : kAllDomains) {
        r.domain_counts[index_of(d)] = r.domain_confusion[index_of(d)].total();
        r.by_domain[index_of(d)] = stratum_scores(r.domain_confusion[index_of(d)]);
    }
    for (auto c : kAllClasses) {
        r.class_counts[index_of(c)] = r.confusion.row_sum(index_of(c));
        r.by_class[index_of(c)] = class_scores(r.confusion, c);
    }
    return r;
}

// ---- formatting ----

/// Value in hundredths, rounded half away from zero. The small slack absorbs
/// binary representation error (96.545 is stored as 96.54499...).
inline std::int64_t to_hundredths(double v) {
    const double scaled = std::abs(v) * 100.0;
    const auto mag = static_cast<std::int64_t>(std::floor(scaled + 0.5 + 1e-7));
    return v < 0 ? -mag : mag;
}

inline std::string format_hundredths(std::int64_t h, bool explicit_sign = false) {
    const std::int64_t mag = h < 0 ? -h : h;
    std::string s = std::to_string(mag / 100) + "." + (mag % 100 < 10 ? "0" : "") + std::to_string(mag % 100);
    if (h < 0) return "-" + s;
    if (explicit_sign && h > 0) return "+" + s;
    return s;
}

/// "96.55"; absent values render as "—".
inline std::string format_percent(const std::optional<double>& v) {
    return v ? format_hundredths(to_hundredths(*v)) : std::string("—");
}

/// Signed difference after - before of the rounded values: "+19.05", "-2.12", "0.00".
inline std::string format_diff(double before, double after) {
    return format_hundredths(to_hundredths(after) - to_hundredths(before), true);
}

// ---- json ----

inline nlohmann::json scores_json(const std::optional<Scores>& s) {
    if (!s) return nullptr;
    return {{"accuracy", s->accuracy}, {"precision", s->precision}, {"f1", s->f1}};
}

inline std::optional<Scores> scores_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return Scores{j.at("accuracy").get<double>(), j.at("precision").get<double>(), j.at("f1").get<double>()};
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["overall"] = scores_json(r.overall);
    j["sample_counts"]["overall"] = r.total;
    for (auto d : kAllDomains) {
        const std::string k(to_string(d));
        j["by_domain"][k] = scores_json(r.domain(d));
        j["sample_counts"][k] = r.domain_counts[index_of(d)];
        j["confusion"][k] = r.domain_confusion[index_of(d)].counts;
    }
    for (auto c : kAllClasses) {
        const std::string k(to_string(c));
        j["by_class"][k] = scores_json(r.cls(c));
        j["sample_counts"][k] = r.class_counts[index_of(c)];
    }
    j["confusion"]["overall"] = r.confusion.counts;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    try {
        MetricsReport r;
        r.overall = *scores_from_json(j.at("overall"));
        r.total = j.at("sample_counts").at("overall").get<std::uint64_t>();
        r.confusion.counts = j.at("confusion").at("overall").get<decltype(r.confusion.counts)>();
        for (auto d : kAllDomains) {
            const std::string k(to_string(d));
            r.by_domain[index_of(d)] = scores_from_json(j.at("by_domain").at(k));
            r.domain_counts[index_of(d)] = j.at("sample_counts").at(k).get<std::uint64_t>();
            r.domain_confusion[index_of(d)].counts = j.at("confusion").at(k).get<decltype(r.confusion.counts)>();
        }
        for (auto c : kAllClasses) {
            const std::string k(to_string(c));
            r.by_class[index_of(c)] = scores_from_json(j.at("by_class").at(k));
            r.class_counts[index_of(c)] = j.at("sample_counts").at(k).get<std::uint64_t>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("metrics report: ") + e.what(), 0);
    }
}

inline MetricsReport parse_report(const std::string& text) {
    try {
        return report_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("metrics report: ") + e.what(), 0);
    }
}

// ---- markdown ----

struct LabeledReport {
    std::string label;
    MetricsReport report;
};

namespace detail {

inline std::string md_row(const std::vector<std::string>& cells) {
    std::string s = "|";
    for (const auto& c : cells) s += " " + c + " |";
    return s + "\n";
}

inline std::string md_rule(std::size_t n) {
    std::string s = "|---|";
    for (std::size_t i = 1; i < n; ++i) s += "---:|";
    return s + "\n";
}

inline std::optional<double> pick(const std::optional<Scores>& s, double Scores::*m) {
    return s ? std::optional<double>((*s).*m) : std::nullopt;
}

inline constexpr std::array<std::pair<const char*, double Scores::*>, 3> kMetricColumns{
    {{"Accuracy", &Scores::accuracy}, {"Precision", &Scores::precision}, {"F1", &Scores::f1}}};

}  // namespace detail

/// Rows = runs; columns = {Accuracy, Precision, F1} x {Overall, Day, Night}.
inline std::string render_domain_table(std::span<const LabeledReport> rows) {
    std::vector<std::string> head{"Model"};
    for (const auto& [name, _] : detail::kMetricColumns)
        for (const char* s : {"Overall", "Day", "Night"}) head.push_back(std::string(name) + " " + s);
    std::string out = detail::md_row(head) + detail::md_rule(head.size());
    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label};
        for (const auto& [_, m] : detail::kMetricColumns) {
            cells.push_back(format_percent(row.report.overall.*m));
            for (auto d : kAllDomains) cells.push_back(format_percent(detail::pick(row.report.domain(d), m)));
        }
        out += detail::md_row(cells);
    }
    return out;
}

/// Rows = runs; columns = {Accuracy, Precision, F1} x {Overall, No Precip., Rain, Snow}.
inline std::string render_class_table(std::span<const LabeledReport> rows) {
    std::vector<std::string> head{"Model"};
    for (const auto& [name, _] : detail::kMetricColumns)
        for (const char* s : {"Overall", "No Precip.", "Rain", "Snow"}) head.push_back(std::string(name) + " " + s);
    std::string out = detail::md_row(head) + detail::md_rule(head.size());
    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label};
        for (const auto& [_, m] : detail::kMetricColumns) {
            cells.push_back(format_percent(row.report.overall.*m));
            for (auto c : kAllClasses) cells.push_back(format_percent(detail::pick(row.report.cls(c), m)));
        }
        out += detail::md_row(cells);
    }
    return out;
}

enum class ReportFormat { Markdown, Json };

inline std::string render_report(std::span<const LabeledReport> rows, ReportFormat format) {
    if (format == ReportFormat::Json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) j.push_back({{"label", r.label}, {"report", to_json(r.report)}});
        return j.dump(2) + "\n";
    }
    return "### By domain\n\n" + render_domain_table(rows) + "\n### By class\n\n" + render_class_table(rows);
}

/// Single report: json is the report object itself.
inline std::string render_report(const MetricsReport& report, ReportFormat format, const std::string& label = "run") {
    if (format == ReportFormat::Json) return to_json(report).dump(2) + "\n";
    const LabeledReport row{label, report};
    return render_report(std::span<const LabeledReport>(&row, 1), format);
}

// ---- before/after ----

struct DiffRow {
    std::string label;
    Scores before;
    Scores after;
};

/// One row per stratum present in both reports (Overall, Day, Night).
inline std::vector<DiffRow> diff_reports(const MetricsReport& before, const MetricsReport& after) {
    std::vector<DiffRow> rows{{"Overall", before.overall, after.overall}};
    for (auto d : kAllDomains) {
        const auto& b = before.domain(d);
        const auto& a = after.domain(d);
        if (b.has_value() != a.has_value()) {
            throw ContractError("diff_reports: stratum '" + std::string(to_string(d)) + "' present in only one report");
        }
        if (b) rows.push_back({d == Domain::Day ? "Day" : "Night", *b, *a});
    }
    return rows;
}

/// Columns = {Accuracy, Precision, F1} x {Base, w/ CycleGAN, Diff}.
inline std::string render_diff_table(std::span<const DiffRow> rows) {
    std::vector<std::string> head{"Model"};
    for (const auto& [name, _] : detail::kMetricColumns)
        for (const char* s : {"Base", "w/ CycleGAN", "Diff"}) head.push_back(std::string(name) + " " + s);
    std::string out = detail::md_row(head) + detail::md_rule(head.size());
    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label};
        for (const auto& [_, m] : detail::kMetricColumns) {
            cells.push_back(format_percent(row.before.*m));
            cells.push_back(format_percent(row.after.*m));
            cells.push_back(format_diff(row.before.*m, row.after.*m));
        }
        out += detail::md_row(cells);
    }
    return out;
}

}  // namespace nightshift
