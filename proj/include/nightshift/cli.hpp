#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime failure.
//
//   gen-data  --out DIR [--config FILE] [--seed N]
//   train     --manifest FILE [--config FILE] [--seed N] [--out DIR] [--run-id ID]
//   enhance   --checkpoint FILE --input DIR [--config FILE] [--out DIR]
//   eval      --checkpoint FILE --manifest FILE [--config FILE] [--split S] [--enhance-night]
//             [--format markdown|json] [--label L] [--out FILE]
//   report    FILE... [--diff] [--label L]... [--format markdown|json] [--out FILE]

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nightshift/pipeline.hpp"

namespace nightshift {

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << text;
    } else {
        write_text(out_path, text);
    }
}

inline ModelBundle bundle_from_checkpoint(const PipelineConfig& cfg, const std::filesystem::path& checkpoint) {
    ModelBundle b(cfg.model, 0);
    auto params = b.parameters();
    assign_checkpoint(params, load_checkpoint(checkpoint));
    return b;
}

}  // namespace detail

inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Night-to-day enhancement and weather classification pipeline", "nightshift"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_path;

    auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset and its manifest");
    gen->add_option("--config", config_path, "pipeline config JSON (dataset block)")->check(CLI::ExistingFile);
    gen->add_option("--seed", seed, "master seed override");
    gen->add_option("--out", out_path, "output directory")->required();

    std::string manifest_path, run_id;
    auto* train = app.add_subcommand("train", "run every pipeline stage");
    train->add_option("--config", config_path, "pipeline config JSON")->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "seed override");
    train->add_option("--manifest", manifest_path, "dataset manifest.csv")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_path, "runs root (default: runs)");
    train->add_option("--run-id", run_id, "run directory name");

    std::string checkpoint_path, input_dir;
    auto* enh = app.add_subcommand("enhance", "apply the night-to-day generator to every .ppm in a directory");
    enh->add_option("--config", config_path, "pipeline config JSON (model block)")->check(CLI::ExistingFile);
    enh->add_option("--checkpoint", checkpoint_path, "bundle checkpoint")->required()->check(CLI::ExistingFile);
    enh->add_option("--input", input_dir, "directory of night images")->required()->check(CLI::ExistingDirectory);
    enh->add_option("--out", out_path, "output directory (default: beside the inputs)");

    std::string split_name = "test", format_name = "markdown";
    std::vector<std::string> labels;
    bool enhance_night = false;
    auto* ev = app.add_subcommand("eval", "zero-shot metrics for a checkpoint on one split");
    ev->add_option("--config", config_path, "pipeline config JSON (model block)")->check(CLI::ExistingFile);
    ev->add_option("--checkpoint", checkpoint_path, "bundle checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", manifest_path, "dataset manifest.csv")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_flag("--enhance-night", enhance_night, "translate night images before classifying");
    ev->add_option("--format", format_name)->check(CLI::IsMember({"markdown", "json"}));
    ev->add_option("--label", labels, "row label")->expected(1);
    ev->add_option("--out", out_path, "write here instead of stdout");

    std::vector<std::string> report_files;
    bool diff = false;
    auto* rep = app.add_subcommand("report", "render stored metrics.json files, or diff two of them");
    rep->add_option("files", report_files, "metrics.json files")->required()->check(CLI::ExistingFile);
    rep->add_flag("--diff", diff, "before/after table for exactly two files");
    rep->add_option("--label", labels, "row labels, one per file");
    rep->add_option("--format", format_name)->check(CLI::IsMember({"markdown", "json"}));
    rep->add_option("--out", out_path, "write here instead of stdout");

    std::vector<const char*> argv{"nightshift"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    const auto format = format_name == "json" ? ReportFormat::Json : ReportFormat::Markdown;
    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_pipeline_config(config_path);

        if (gen->parsed()) {
            if (seed) cfg.dataset.master_seed = *seed;
            const auto manifest = generate_dataset(cfg.dataset, out_path);
            out << manifest.string() << "\n";
        } else if (train->parsed()) {
            if (seed) cfg.seed = *seed;
            if (!run_id.empty()) cfg.run_id = run_id;
            const auto result = run_pipeline(cfg, manifest_path, out_path.empty() ? "runs" : out_path, &err);
            out << detail::read_text(result.run_dir / "report.md");
        } else if (enh->parsed()) {
            namespace fs = std::filesystem;
            const auto b = detail::bundle_from_checkpoint(cfg, checkpoint_path);
            std::vector<fs::path> inputs;
            for (const auto& e : fs::directory_iterator(input_dir)) {
                const auto name = e.path().filename().string();
                if (e.is_regular_file() && e.path().extension() == ".ppm" && !name.ends_with(".enhanced.ppm")) {
                    inputs.push_back(e.path());
                }
            }
            std::sort(inputs.begin(), inputs.end());
            if (!out_path.empty()) fs::create_directories(out_path);
            NoGradScope no_grad;
            for (const auto& p : inputs) {
                const fs::path dst = enhanced_path(out_path.empty() ? p : fs::path(out_path) / p.filename());
                write_ppm(generate(b.gen_night_to_day, read_ppm(p)), dst);
                out << dst.string() << "\n";
            }
        } else if (ev->parsed()) {
            const auto b = detail::bundle_from_checkpoint(cfg, checkpoint_path);
            auto set = load_split(load_manifest(manifest_path), *parse_split(split_name), cfg.model.encoder.image_size);
            if (enhance_night) {
                const auto enhanced = enhance(b, set);
                for (std::size_t i = 0; i < set.size(); ++i) set[i].image = enhanced[i];
            }
            const auto report = initial_classification(b, set).report;
            detail::emit(render_report(report, format, labels.empty() ? split_name : labels.front()), out_path, out);
        } else if (rep->parsed()) {
            std::vector<MetricsReport> reports;
            for (const auto& f : report_files) reports.push_back(parse_report(detail::read_text(f)));
            if (diff) {
                if (reports.size() != 2) {
                    err << "error: report --diff takes exactly two files\n";
                    return 1;
                }
                auto rows = diff_reports(reports[0], reports[1]);
                if (format == ReportFormat::Json) {
                    nlohmann::json j = nlohmann::json::array();
                    auto scores = [](const Scores& s) {
                        return nlohmann::json{{"accuracy", s.accuracy}, {"precision", s.precision}, {"f1", s.f1}};
                    };
                    for (const auto& r : rows) {
                        j.push_back({{"stratum", r.label}, {"before", scores(r.before)}, {"after", scores(r.after)}});
                    }
                    detail::emit(j.dump(2) + "\n", out_path, out);
                } else {
                    detail::emit(render_diff_table(rows), out_path, out);
                }
            } else {
                if (!labels.empty() && labels.size() != reports.size()) {
                    err << "error: give one --label per file\n";
                    return 1;
                }
                std::vector<LabeledReport> rows;
                for (std::size_t i = 0; i < reports.size(); ++i) {
                    rows.push_back({labels.empty() ? std::filesystem::path(report_files[i]).parent_path().filename().string()
                                                   : labels[i],
                                    reports[i]});
                }
                detail::emit(render_report(rows, format), out_path, out);
            }
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_dispatch(args, out, err);
}

}  // namespace nightshift
