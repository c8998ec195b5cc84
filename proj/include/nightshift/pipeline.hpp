#pragma once

// The staged protocol, in order:
//   pretrain          encoders + heads on day training images
//   initial_classify  zero-shot predictions (train for mining, test for the "before" report)
//   mine              misclassified training samples -> ErrorSet
//   cyclegan          night<->day translation with the weather term on the ErrorSet
//   finetune          encoders + heads on all training images plus translated error members
//   enhance           G applied to night test images, written beside the originals
//   reclassify        zero-shot on day test images and enhanced night test images
//
// Outputs land in <runs_root>/<run_id>/<stage>/.

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "nightshift/adam.hpp"
#include "nightshift/augment.hpp"
#include "nightshift/dataset.hpp"
#include "nightshift/losses.hpp"
#include "nightshift/metrics.hpp"

namespace nightshift {

struct OptimizerSettings {
    double base_lr = 1e-3;
    std::size_t total_steps = 0;  // 0: epochs x batches per epoch

    bool operator==(const OptimizerSettings&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerSettings, base_lr, total_steps)

struct OptimizerBlock {
    OptimizerSettings pretrain{1e-3, 0};
    OptimizerSettings finetune{5e-4, 0};
    OptimizerSettings generator{2e-4, 0};
    OptimizerSettings discriminator{2e-4, 0};

    bool operator==(const OptimizerBlock&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerBlock, pretrain, finetune, generator, discriminator)

inline void to_json(nlohmann::json& j, IdentityMode m) {
    j = m == IdentityMode::SourceDomain ? "source_domain" : "target_domain";
}

inline void from_json(const nlohmann::json& j, IdentityMode& m) {
    const auto s = j.get<std::string>();
    if (s == "source_domain") {
        m = IdentityMode::SourceDomain;
    } else if (s == "target_domain") {
        m = IdentityMode::TargetDomain;
    } else {
        throw ParseError("identity_mode must be 'source_domain' or 'target_domain', got '" + s + "'", 0);
    }
}

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::string run_id;  // empty: "seed-<seed>"
    ModelConfig model;
    std::size_t pretrain_epochs = 12;
    std::size_t cyclegan_epochs = 8;
    std::size_t finetune_epochs = 6;
    std::size_t batch_size = 16;     // source images per classifier batch (two views each)
    std::size_t gan_batch_size = 4;  // night and day images per CycleGAN step
    OptimizerBlock optimizers;
    LossWeights loss_weights;
    AugmentConfig augmentation;
    IdentityMode identity_mode = IdentityMode::SourceDomain;
    bool alternate_finetune = false;  // also step the generators during finetune
    DatasetSpec dataset;              // read by gen-data only

    void validate() const {
        if (pretrain_epochs < 1 || cyclegan_epochs < 1 || finetune_epochs < 1) {
            throw ContractError("pipeline config: epoch counts must be >= 1");
        }
        if (batch_size < 2) throw ContractError("pipeline config: batch_size must be >= 2");
        if (gan_batch_size < 1) throw ContractError("pipeline config: gan_batch_size must be >= 1");
        for (const auto* o : {&optimizers.pretrain, &optimizers.finetune, &optimizers.generator,
                              &optimizers.discriminator}) {
            if (!(o->base_lr > 0)) throw ContractError("pipeline config: base_lr must be positive");
        }
        model.encoder.validate();
        if (dataset.image_size != model.encoder.image_size) {
            throw ContractError("pipeline config: dataset.image_size " + std::to_string(dataset.image_size) +
                                " differs from model.encoder.image_size " + std::to_string(model.encoder.image_size));
        }
        loss_weights.validate();
        augmentation.strong.validate();
        augmentation.weak.validate();
    }

    std::string resolved_run_id() const { return run_id.empty() ? "seed-" + std::to_string(seed) : run_id; }

    bool operator==(const PipelineConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"run_id", c.run_id},
                       {"model", c.model},
                       {"pretrain_epochs", c.pretrain_epochs},
                       {"cyclegan_epochs", c.cyclegan_epochs},
                       {"finetune_epochs", c.finetune_epochs},
                       {"batch_size", c.batch_size},
                       {"gan_batch_size", c.gan_batch_size},
                       {"optimizers", c.optimizers},
                       {"loss_weights", c.loss_weights},
                       {"augmentation", c.augmentation},
                       {"identity_mode", c.identity_mode},
                       {"alternate_finetune", c.alternate_finetune},
                       {"dataset", c.dataset}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    static const std::set<std::string> kFields{"seed",          "run_id",         "model",        "pretrain_epochs",
                                               "cyclegan_epochs", "finetune_epochs", "batch_size", "gan_batch_size",
                                               "optimizers",    "loss_weights",   "augmentation", "identity_mode",
                                               "alternate_finetune", "dataset"};
    if (!j.is_object()) throw ParseError("pipeline config must be a JSON object", 0);
    for (const auto& [key, _] : j.items()) {
        if (!kFields.contains(key)) throw ParseError("unknown pipeline config field '" + key + "'", 0);
    }
    const PipelineConfig d;
    c.seed = j.value("seed", d.seed);
    c.run_id = j.value("run_id", d.run_id);
    c.model = j.value("model", d.model);
    c.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
    c.cyclegan_epochs = j.value("cyclegan_epochs", d.cyclegan_epochs);
    c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.gan_batch_size = j.value("gan_batch_size", d.gan_batch_size);
    c.optimizers = j.value("optimizers", d.optimizers);
    c.loss_weights = j.value("loss_weights", d.loss_weights);
    c.augmentation = j.value("augmentation", d.augmentation);
    c.identity_mode = j.value("identity_mode", d.identity_mode);
    c.alternate_finetune = j.value("alternate_finetune", d.alternate_finetune);
    c.dataset = j.value("dataset", d.dataset);
}

/// Reads and validates a config document. Type errors and unknown fields become ParseError.
inline PipelineConfig parse_pipeline_config(std::string_view text) {
    PipelineConfig c;
    try {
        c = nlohmann::json::parse(text).get<PipelineConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("pipeline config: ") + e.what(), 0);
    }
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return parse_pipeline_config(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.line());
    }
}

/// Failure inside a named stage; wraps the original message.
class StageError : public std::runtime_error {
   public:
    StageError(std::string stage, const std::string& cause)
        : std::runtime_error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

   private:
    std::string stage_;
};

/// Per-epoch scalar series, one row per epoch.
struct LossCurves {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> epochs;

    std::vector<double> column(std::string_view name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw ContractError("no loss column '" + std::string(name) + "'");
        const auto k = static_cast<std::size_t>(it - columns.begin());
        std::vector<double> out;
        for (const auto& row : epochs) out.push_back(row[k]);
        return out;
    }

    bool all_finite() const {
        for (const auto& row : epochs)
            for (double v : row)
                if (!std::isfinite(v)) return false;
        return true;
    }

    std::string to_csv() const {
        std::string out = "epoch";
        for (const auto& c : columns) out += "," + c;
        out += '\n';
        char buf[32];
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            out += std::to_string(e + 1);
            for (double v : epochs[e]) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                out += buf;
            }
            out += '\n';
        }
        return out;
    }
};

namespace detail {

/// Accumulates per-step values into an epoch mean.
class EpochMeans {
   public:
    explicit EpochMeans(std::size_t n) : sums_(n, 0.0) {}
    void add(std::initializer_list<double> values) {
        std::size_t k = 0;
        for (double v : values) sums_[k++] += v;
        ++count_;
    }
    std::vector<double> means() const {
        std::vector<double> out(sums_);
        for (auto& v : out) v /= static_cast<double>(std::max<std::size_t>(count_, 1));
        return out;
    }

   private:
    std::vector<double> sums_;
    std::size_t count_ = 0;
};

/// Restores requires_grad on scope exit.
class TrainableGuard {
   public:
    TrainableGuard(std::vector<NamedTensor> params, bool trainable) : params_(std::move(params)) {
        for (const auto& p : params_) saved_.push_back(p.tensor.requires_grad());
        set_trainable(params_, trainable);
    }
    ~TrainableGuard() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.set_requires_grad(saved_[i]);
    }
    TrainableGuard(const TrainableGuard&) = delete;
    TrainableGuard& operator=(const TrainableGuard&) = delete;

   private:
    std::vector<NamedTensor> params_;
    std::vector<bool> saved_;
};

inline std::size_t auto_steps(const OptimizerSettings& o, std::size_t epochs, std::size_t per_epoch) {
    return o.total_steps ? o.total_steps : std::max<std::size_t>(1, epochs * per_epoch);
}

inline std::size_t distinct_classes(std::span<const WeatherClass> labels, std::span<const std::size_t> idx) {
    std::array<bool, kNumClasses> seen{};
    for (auto i : idx) seen[index_of(labels[i])] = true;
    return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

}  // namespace detail

/// Shuffles within (class, domain) cells, alternates domains inside each class,
/// then deals the classes round-robin and cuts into batches. Any batch left with a
/// single class (only possible once other classes run out) is folded into its
/// predecessor.
inline std::vector<std::vector<std::size_t>> stratified_batches(std::span<const LabeledImage> set,
                                                                std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ContractError("stratified_batches: batch_size must be positive");
    std::array<std::array<std::vector<std::size_t>, 2>, kNumClasses> cells;
    std::vector<WeatherClass> labels;
    for (std::size_t i = 0; i < set.size(); ++i) {
        cells[index_of(set[i].label)][static_cast<std::size_t>(set[i].domain)].push_back(i);
        labels.push_back(set[i].label);
    }
    std::array<std::vector<std::size_t>, kNumClasses> per_class;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        for (auto& d : cells[c]) rng.shuffle(std::span<std::size_t>(d));
        for (std::size_t r = 0; per_class[c].size() < cells[c][0].size() + cells[c][1].size(); ++r)
            for (const auto& d : cells[c])
                if (r < d.size()) per_class[c].push_back(d[r]);
    }
    std::vector<std::size_t> order;
    for (std::size_t r = 0; order.size() < set.size(); ++r)
        for (const auto& c : per_class)
            if (r < c.size()) order.push_back(c[r]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += batch_size) {
        std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch_size, order.size())));
        if (!batches.empty() && detail::distinct_classes(labels, b) < 2) {
            batches.back().insert(batches.back().end(), b.begin(), b.end());
        } else {
            batches.push_back(std::move(b));
        }
    }
    return batches;
}

struct ClassifierLosses {
    Tensor total;
    Tensor contrastive;
    Tensor classification;
    bool empty_pair_set = false;
};

/// Contrastive loss over [views, class prompts, translated] with the pair set of
/// same-class pairs plus (view, translation) pairs, and the smoothed classification
/// loss over views and translations. `translated_of[k]` is the view paired with
/// translated[k].
inline ClassifierLosses classifier_objective(const ModelBundle& b, std::span<const Tensor> views,
                                             std::span<const WeatherClass> view_labels,
                                             std::span<const Tensor> translated,
                                             std::span<const std::size_t> translated_of, const LossWeights& w) {
    if (views.size() != view_labels.size() || translated.size() != translated_of.size()) {
        throw ContractError("classifier_objective: misaligned inputs");
    }
    std::vector<WeatherClass> con_labels(view_labels.begin(), view_labels.end());
    for (const auto& p : b.prompts) con_labels.push_back(p.class_id);
    const PairSet pairs = build_pair_set(con_labels, translated_of);
    std::vector<WeatherClass> cls_labels(view_labels.begin(), view_labels.end());
    for (auto k : translated_of) {
        con_labels.push_back(view_labels[k]);
        cls_labels.push_back(view_labels[k]);
    }

    Tensor feats = b.image_encoder.forward(views);
    std::vector<Tensor> emb_parts{b.projection_head.forward(feats), b.text_embeddings()};
    if (!translated.empty()) {
        const Tensor tf = b.image_encoder.forward(translated);
        emb_parts.push_back(b.projection_head.forward(tf));
        feats = concat_rows({feats, tf});
    }
    const auto con = contrastive_loss(concat_rows(std::span<const Tensor>(emb_parts)), con_labels, pairs, w.tau);
    const Tensor cls = classification_loss(b.classification_head.forward(feats), cls_labels, w.epsilon);
    return {total_loss(con.value, cls, w), con.value, cls, con.empty_pair_set};
}

namespace detail {

/// One generator step on whatever night/day images the batch happens to hold.
inline std::optional<GeneratorTerms> generator_step(ModelBundle& b, Adam& opt, const CycleGanBatch& batch,
                                                    std::span<const ErrorMember> members, const PipelineConfig& cfg) {
    if (batch.night.empty() || batch.day.empty()) return std::nullopt;
    auto all = b.parameters();
    TrainableGuard freeze_d(b.discriminator_parameters(), false);
    TrainableGuard freeze_cls(b.classifier_parameters(), false);
    Tape tape;
    GeneratorTerms t;
    {
        TapeScope scope(tape);
        t = generator_terms(b, batch, cfg.loss_weights, members, cfg.identity_mode);
    }
    zero_grads(all);
    backward(t.objective, tape);
    opt.step();
    return t;
}

}  // namespace detail

/// Shared loop for pretrain and finetune. Generators stay frozen unless
/// `alternate` is set, in which case each classifier step is followed by a
/// generator step on the batch's night/day images.
inline LossCurves train_classifier(ModelBundle& b, std::span<const LabeledImage> set, const ErrorSet& errors,
                                   std::size_t epochs, const OptimizerSettings& settings, const PipelineConfig& cfg,
                                   Rng& rng, bool alternate = false) {
    if (set.empty()) throw DataError("training set is empty");
    std::map<std::size_t, const ErrorMember*> member_of;
    for (const auto& m : errors.members) {
        if (m.index >= set.size()) throw ContractError("error member index outside the training set");
        member_of[m.index] = &m;
    }
    const auto per_epoch = stratified_batches(set, cfg.batch_size, rng).size();
    Adam opt(b.classifier_parameters(), AdamConfig{settings.base_lr, 0.9, 0.999, 1e-8,
                                                   detail::auto_steps(settings, epochs, per_epoch)});
    std::optional<Adam> gen_opt;
    if (alternate) {
        gen_opt.emplace(b.generator_parameters(),
                        AdamConfig{cfg.optimizers.generator.base_lr, 0.5, 0.999, 1e-8, epochs * per_epoch});
    }
    auto all = b.parameters();

    LossCurves curves;
    curves.columns = {"total", "contrastive", "classification", "translated_pairs"};
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        detail::EpochMeans means(4);
        for (const auto& batch : stratified_batches(set, cfg.batch_size, rng)) {
            std::vector<Tensor> views, translated;
            std::vector<WeatherClass> labels;
            std::vector<std::size_t> translated_of;
            CycleGanBatch gan_batch;
            std::vector<ErrorMember> batch_members;
            for (auto idx : batch) {
                const auto& item = set[idx];
                views.push_back(augment(item.image, AugmentStrength::Strong, rng, cfg.augmentation));
                views.push_back(augment(item.image, AugmentStrength::Weak, rng, cfg.augmentation));
                labels.insert(labels.end(), 2, item.label);
                if (const auto it = member_of.find(idx); it != member_of.end()) {
                    NoGradScope no_grad;
                    translated_of.push_back(views.size() - 2);
                    translated.push_back(generate(b.gen_night_to_day, it->second->image));
                    batch_members.push_back(*it->second);
                }
                (item.domain == Domain::Night ? gan_batch.night : gan_batch.day).push_back(item.image);
            }
            ClassifierLosses parts;
            Tape tape;
            {
                detail::TrainableGuard freeze_g(b.generator_parameters(), false);
                detail::TrainableGuard freeze_d(b.discriminator_parameters(), false);
                TapeScope scope(tape);
                parts = classifier_objective(b, views, labels, translated, translated_of, cfg.loss_weights);
            }
            zero_grads(all);
            backward(parts.total, tape);
            opt.step();
            means.add({parts.total.item(), parts.contrastive.item(), parts.classification.item(),
                       static_cast<double>(translated.size())});
            if (gen_opt) detail::generator_step(b, *gen_opt, gan_batch, batch_members, cfg);
        }
        curves.epochs.push_back(means.means());
    }
    zero_grads(all);
    return curves;
}

/// Supervised + contrastive training on day images; every class must be present.
inline LossCurves pretrain(ModelBundle& b, std::span<const LabeledImage> day_set, const PipelineConfig& cfg, Rng& rng) {
    std::array<bool, kNumClasses> seen{};
    for (const auto& x : day_set) seen[index_of(x.label)] = true;
    for (auto c : kAllClasses) {
        if (!seen[index_of(c)]) throw DataError("pretrain: class '" + std::string(to_string(c)) + "' missing");
    }
    return train_classifier(b, day_set, ErrorSet{}, cfg.pretrain_epochs, cfg.optimizers.pretrain, cfg, rng);
}

struct Classification {
    std::vector<WeatherClass> predictions;
    MetricsReport report;
};

/// Zero-shot prediction for each image and the stratified report.
inline Classification initial_classification(const ModelBundle& b, std::span<const LabeledImage> set) {
    if (set.empty()) throw ContractError("initial_classification: empty evaluation set");
    std::vector<Tensor> images;
    std::vector<WeatherClass> labels;
    std::vector<Domain> domains;
    for (const auto& x : set) {
        images.push_back(x.image);
        labels.push_back(x.label);
        domains.push_back(x.domain);
    }
    Classification out;
    out.predictions = zero_shot_classify(b, images);
    out.report = compute_metrics(out.predictions, labels, domains);
    return out;
}

/// Indices where prediction and label differ.
inline std::vector<std::size_t> mine_error_indices(std::span<const WeatherClass> predictions,
                                                   std::span<const WeatherClass> labels) {
    if (predictions.size() != labels.size()) {
        throw ContractError("mine_error_set: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] != labels[i]) out.push_back(i);
    return out;
}

inline ErrorSet mine_error_set(std::span<const WeatherClass> predictions, std::span<const LabeledImage> set,
                               std::uint64_t snapshot) {
    std::vector<WeatherClass> labels;
    for (const auto& x : set) labels.push_back(x.label);
    ErrorSet out;
    out.snapshot_id = snapshot;
    for (auto i : mine_error_indices(predictions, labels)) out.members.push_back({i, set[i].label, set[i].image});
    return out;
}

/// Alternating generator / discriminator Adam steps over unpaired night and day
/// sets. The weather term walks the ErrorSet in slices of gan_batch_size.
inline LossCurves train_cyclegan(ModelBundle& b, std::span<const LabeledImage> night, std::span<const LabeledImage> day,
                                 const ErrorSet& errors, const PipelineConfig& cfg, Rng& rng) {
    if (night.empty() || day.empty()) throw DataError("train_cyclegan: night and day sets must both be nonempty");
    const std::size_t bs = cfg.gan_batch_size;
    const std::size_t steps = (std::max(night.size(), day.size()) + bs - 1) / bs;
    const auto total = [&](const OptimizerSettings& o) { return detail::auto_steps(o, cfg.cyclegan_epochs, steps); };
    // beta1 = 0.5 is the usual CycleGAN setting
    Adam gen_opt(b.generator_parameters(), AdamConfig{cfg.optimizers.generator.base_lr, 0.5, 0.999, 1e-8,
                                                      total(cfg.optimizers.generator)});
    Adam disc_opt(b.discriminator_parameters(), AdamConfig{cfg.optimizers.discriminator.base_lr, 0.5, 0.999, 1e-8,
                                                           total(cfg.optimizers.discriminator)});
    auto all = b.parameters();
    detail::TrainableGuard freeze_cls(b.classifier_parameters(), false);

    std::vector<std::size_t> night_order(night.size()), day_order(day.size());
    std::iota(night_order.begin(), night_order.end(), 0);
    std::iota(day_order.begin(), day_order.end(), 0);
    std::size_t member_cursor = 0;

    LossCurves curves;
    curves.columns = {"generator", "discriminator", "combined", "adversarial", "cycle", "identity", "weather"};
    for (std::size_t epoch = 0; epoch < cfg.cyclegan_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(night_order));
        rng.shuffle(std::span<std::size_t>(day_order));
        detail::EpochMeans means(7);
        for (std::size_t s = 0; s < steps; ++s) {
            CycleGanBatch batch;
            for (std::size_t k = 0; k < bs; ++k) {
                batch.night.push_back(night[night_order[(s * bs + k) % night.size()]].image);
                batch.day.push_back(day[day_order[(s * bs + k) % day.size()]].image);
            }
            std::vector<ErrorMember> slice;
            for (std::size_t k = 0; k < std::min(bs, errors.size()); ++k) {
                slice.push_back(errors.members[member_cursor++ % errors.size()]);
            }
            const auto g = detail::generator_step(b, gen_opt, batch, slice, cfg);

            // discriminator step on the fakes produced before the generator update
            Tape tape;
            DiscriminatorTerms d;
            {
                detail::TrainableGuard freeze_g(b.generator_parameters(), false);
                TapeScope scope(tape);
                d = discriminator_terms(b, batch, g->fake_day, g->fake_night);
            }
            zero_grads(all);
            backward(d.objective, tape);
            disc_opt.step();

            const double gen = g->objective.item(), disc = d.objective.item();
            means.add({gen, disc, gen + disc, g->adv_night_to_day.item() + g->adv_day_to_night.item(),
                       g->cycle.item(), g->identity.item(), g->weather.item()});
        }
        curves.epochs.push_back(means.means());
    }
    zero_grads(all);
    return curves;
}

/// Encoders and heads on the full training set, with translated error members.
inline LossCurves finetune(ModelBundle& b, std::span<const LabeledImage> train_set, const ErrorSet& errors,
                           const PipelineConfig& cfg, Rng& rng) {
    return train_classifier(b, train_set, errors, cfg.finetune_epochs, cfg.optimizers.finetune, cfg, rng,
                            cfg.alternate_finetune);
}

/// G applied to night images; day images pass through unchanged.
inline std::vector<Tensor> enhance(const ModelBundle& b, std::span<const LabeledImage> images) {
    NoGradScope no_grad;
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& x : images) out.push_back(x.domain == Domain::Night ? generate(b.gen_night_to_day, x.image) : x.image);
    return out;
}

/// Source path with ".ppm" replaced by ".enhanced.ppm".
inline std::filesystem::path enhanced_path(const std::filesystem::path& source) {
    auto p = source;
    p.replace_extension();
    p += ".enhanced.ppm";
    return p;
}

struct StageResult {
    std::string name;
    std::optional<MetricsReport> metrics;
    double wall_time_seconds = 0.0;
    LossCurves losses;
    std::uint64_t input_snapshot = 0;
    std::uint64_t output_snapshot = 0;
};

inline constexpr std::array<std::string_view, 7> kStageNames{
    "pretrain", "initial_classify", "mine", "cyclegan", "finetune", "enhance", "reclassify"};

struct PipelineResult {
    std::filesystem::path run_dir;
    std::vector<StageResult> stages;
    MetricsReport before;                     // pretrained bundle, raw test images
    MetricsReport after;                      // finetuned bundle, night test images enhanced
    MetricsReport after_without_enhancement;  // finetuned bundle, raw test images
    std::vector<WeatherClass> after_predictions;
    std::size_t error_set_size = 0;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("failed writing " + path.string());
}

inline std::string hex_id(std::uint64_t id) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id));
    return buf;
}

inline std::vector<LabeledImage> filter_domain(std::span<const LabeledImage> set, Domain d) {
    std::vector<LabeledImage> out;
    for (const auto& x : set)
        if (x.domain == d) out.push_back(x);
    return out;
}

}  // namespace detail

/// Runs every stage against the manifest's splits and writes outputs under
/// runs_root/<run_id>/. Any stage failure is rethrown as StageError.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                                   const std::filesystem::path& runs_root, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    cfg.validate();
    const Manifest manifest = load_manifest(manifest_path);
    const std::size_t n = cfg.model.encoder.image_size;
    const auto train = load_split(manifest, Split::Train, n);
    const auto val = load_split(manifest, Split::Val, n);
    const auto test = load_split(manifest, Split::Test, n);
    if (train.empty() || test.empty()) throw DataError("manifest needs nonempty train and test splits");
    const auto train_day = detail::filter_domain(train, Domain::Day);
    const auto train_night = detail::filter_domain(train, Domain::Night);

    PipelineResult result;
    result.run_dir = runs_root / cfg.resolved_run_id();
    fs::create_directories(result.run_dir);
    detail::write_text(result.run_dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");

    ModelBundle bundle(cfg.model, derive_seed(cfg.seed, 100));
    Classification initial_train, initial_test;
    ErrorSet errors;
    std::vector<Tensor> enhanced;

    auto run_stage = [&](std::size_t index, auto&& body) {
        const std::string name(kStageNames[index]);
        StageResult stage;
        stage.name = name;
        stage.input_snapshot = bundle.snapshot();
        const fs::path dir = result.run_dir / name;
        Rng rng(derive_seed(cfg.seed, index));
        const auto t0 = clock::now();
        try {
            fs::create_directories(dir);
            body(stage, dir, rng);
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        stage.wall_time_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        stage.output_snapshot = bundle.snapshot();
        if (!stage.losses.columns.empty()) detail::write_text(dir / "losses.csv", stage.losses.to_csv());
        if (stage.metrics) detail::write_text(dir / "metrics.json", render_report(*stage.metrics, ReportFormat::Json) + "\n");
        if (stage.output_snapshot != stage.input_snapshot) save_checkpoint(dir / "checkpoint.nsck", bundle.parameters());
        if (log) {
            *log << "[" << name << "] " << std::fixed << std::setprecision(1) << stage.wall_time_seconds << " s";
            if (stage.metrics) *log << ", accuracy " << format_percent(stage.metrics->overall.accuracy);
            *log << std::endl;
        }
        result.stages.push_back(std::move(stage));
    };

    run_stage(0, [&](StageResult& s, const fs::path&, Rng& rng) {
        s.losses = pretrain(bundle, train_day, cfg, rng);
        if (!val.empty()) s.metrics = initial_classification(bundle, val).report;
    });
    run_stage(1, [&](StageResult& s, const fs::path& dir, Rng&) {
        initial_train = initial_classification(bundle, train);
        initial_test = initial_classification(bundle, test);
        s.metrics = initial_test.report;
        detail::write_text(dir / "metrics_train.json", render_report(initial_train.report, ReportFormat::Json) + "\n");
    });
    run_stage(2, [&](StageResult& s, const fs::path& dir, Rng&) {
        errors = mine_error_set(initial_train.predictions, train, bundle.snapshot());
        s.metrics = initial_train.report;
        std::string csv = "index,path,class,domain,predicted\n";
        for (const auto& m : errors.members) {
            const auto& src = train[m.index].source;
            csv += std::to_string(m.index) + "," + src.path + "," + std::string(to_string(src.label)) + "," +
                   std::string(to_string(src.domain)) + "," + std::string(to_string(initial_train.predictions[m.index])) +
                   "\n";
        }
        detail::write_text(dir / "error_set.csv", csv);
        result.error_set_size = errors.size();
    });
    run_stage(3, [&](StageResult& s, const fs::path&, Rng& rng) {
        s.losses = train_cyclegan(bundle, train_night, train_day, errors, cfg, rng);
    });
    run_stage(4, [&](StageResult& s, const fs::path&, Rng& rng) {
        s.losses = finetune(bundle, train, errors, cfg, rng);
        if (!val.empty()) s.metrics = initial_classification(bundle, val).report;
    });
    run_stage(5, [&](StageResult&, const fs::path& dir, Rng&) {
        enhanced = enhance(bundle, test);
        const std::string gen_id = detail::hex_id(snapshot_id(bundle.generator_parameters()));
        std::string csv = "enhanced,source,generator_snapshot\n";
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (test[i].domain != Domain::Night) continue;
            const fs::path src = manifest.resolve(test[i].source);
            const fs::path dst = enhanced_path(src);
            write_ppm(enhanced[i], dst);
            csv += dst.lexically_relative(manifest.base_dir).generic_string() + "," + test[i].source.path + "," + gen_id +
                   "\n";
        }
        detail::write_text(dir / "provenance.csv", csv);
    });
    run_stage(6, [&](StageResult& s, const fs::path& dir, Rng&) {
        std::vector<LabeledImage> revisited(test.begin(), test.end());
        for (std::size_t i = 0; i < revisited.size(); ++i) revisited[i].image = enhanced[i];
        const auto after = initial_classification(bundle, revisited);
        result.after = after.report;
        result.after_predictions = after.predictions;
        result.after_without_enhancement = initial_classification(bundle, test).report;
        s.metrics = result.after;
        detail::write_text(dir / "metrics_unenhanced.json",
                           render_report(result.after_without_enhancement, ReportFormat::Json) + "\n");
    });
    result.before = initial_test.report;

    const std::vector<LabeledReport> rows{{"before", result.before},
                                          {"finetuned", result.after_without_enhancement},
                                          {"after", result.after}};
    std::string md = "# Run " + cfg.resolved_run_id() + "\n\n" + render_report(rows, ReportFormat::Markdown) + "\n";
    try {
        md += "### Before vs after\n\n" + render_diff_table(diff_reports(result.before, result.after));
    } catch (const ContractError&) {
        // strata differ between the two reports; no diff table
    }
    detail::write_text(result.run_dir / "report.md", md);

    nlohmann::json timing = nlohmann::json::object();
    for (const auto& s : result.stages) timing[s.name] = s.wall_time_seconds;
    detail::write_text(result.run_dir / "timing.json", timing.dump(2) + "\n");
    return result;
}

}  // namespace nightshift
