#pragma once

// Training objectives: smoothed classification, pairwise sigmoid contrastive,
// the CycleGAN terms (adversarial, cycle, identity, weather-preserving) and the
// weighted composites.

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nightshift/bundle.hpp"

namespace nightshift {

struct LossWeights {
    double lambda_cyc = 10.0;
    double lambda_id = 5.0;
    double lambda_weather = 1.0;
    double lambda_con = 1.0;
    double lambda_cls = 0.5;
    double epsilon = 0.1;
    double tau = 0.1;

    void validate() const {
        if (lambda_cyc < 0 || lambda_id < 0 || lambda_weather < 0 || lambda_con < 0 || lambda_cls < 0) {
            throw ContractError("loss weights must be non-negative");
        }
        if (!(tau > 0)) throw ContractError("tau must be positive");
        if (epsilon < 0 || epsilon >= 1) throw ContractError("epsilon must lie in [0, 1)");
    }

    bool operator==(const LossWeights&) const = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"lambda_cyc", w.lambda_cyc},       {"lambda_id", w.lambda_id},   {"lambda_weather", w.lambda_weather},
                       {"lambda_con", w.lambda_con},       {"lambda_cls", w.lambda_cls}, {"epsilon", w.epsilon},
                       {"tau", w.tau}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
    LossWeights d;
    w.lambda_cyc = j.value("lambda_cyc", d.lambda_cyc);
    w.lambda_id = j.value("lambda_id", d.lambda_id);
    w.lambda_weather = j.value("lambda_weather", d.lambda_weather);
    w.lambda_con = j.value("lambda_con", d.lambda_con);
    w.lambda_cls = j.value("lambda_cls", d.lambda_cls);
    w.epsilon = j.value("epsilon", d.epsilon);
    w.tau = j.value("tau", d.tau);
    w.validate();
}

struct ErrorMember {
    std::size_t index;  // position in the mined dataset
    WeatherClass label;
    Tensor image;
};

/// Samples misclassified by the bundle snapshot that mined them.
struct ErrorSet {
    std::vector<ErrorMember> members;
    std::uint64_t snapshot_id = 0;

    bool empty() const { return members.empty(); }
    std::size_t size() const { return members.size(); }
};

enum class PairKind { SameClass, Translated };

struct IndexPair {
    std::size_t i;
    std::size_t j;
    PairKind kind;

    bool operator==(const IndexPair&) const = default;
};

/// Positive pairs over an extended batch: indices [0, B) are the originals,
/// B + r is the translation of the r-th error member of the batch.
struct PairSet {
    std::vector<IndexPair> pairs;

    bool empty() const { return pairs.empty(); }
    std::size_t size() const { return pairs.size(); }
};

/// All unordered same-class pairs (i < j) of the batch, then one
/// (original, translated) pair per error member.
inline PairSet build_pair_set(std::span<const WeatherClass> batch_labels,
                              std::span<const std::size_t> error_members_in_batch) {
    if (batch_labels.empty()) throw ContractError("build_pair_set: empty batch");
    PairSet out;
    const std::size_t b = batch_labels.size();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j)
            if (batch_labels[i] == batch_labels[j]) out.pairs.push_back({i, j, PairKind::SameClass});
    for (std::size_t r = 0; r < error_members_in_batch.size(); ++r) {
        const std::size_t m = error_members_in_batch[r];
        if (m >= b) throw ContractError("build_pair_set: error member " + std::to_string(m) + " outside batch");
        out.pairs.push_back({m, b + r, PairKind::Translated});
    }
    return out;
}

// ---------------------------------------------------------------------------

/// -(1/B) sum_x sum_c [(1-eps) 1(y_x = c) + eps/3] log p_c(x), probabilities clamped.
inline Tensor classification_loss(const Tensor& probs, std::span<const WeatherClass> labels, double epsilon) {
    if (labels.empty()) throw ContractError("classification_loss: empty batch");
    if (probs.rank() != 2 || probs.dim(1) != kNumClasses || probs.dim(0) != labels.size()) {
        throw ShapeError("classification_loss: probabilities " + shape_str(probs.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    const double b = static_cast<double>(labels.size());
    std::vector<double> weights(probs.numel());
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double target = (1.0 - epsilon) * (index_of(labels[i]) == c ? 1.0 : 0.0) + epsilon / kNumClasses;
            weights[i * kNumClasses + c] = -target / b;
        }
    return weighted_sum(log_clamped(probs), std::move(weights));
}

struct ContrastiveLoss {
    Tensor value;
    bool empty_pair_set = false;  // value is 0 and carries no gradient
};

/// (1/|P|) sum_{(i,j) in P} [ -log s(e_i.e_j/tau) - sum_{k: y_k != y_i} log(1 - s(e_i.e_k/tau)) ]
/// Negatives are every row of `embeddings` whose label differs from the anchor i.
inline ContrastiveLoss contrastive_loss(const Tensor& embeddings, std::span<const WeatherClass> labels,
                                        const PairSet& pair_set, double tau) {
    if (!(tau > 0)) throw ContractError("contrastive_loss: tau must be positive");
    if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
        throw ShapeError("contrastive_loss: embeddings " + shape_str(embeddings.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    if (pair_set.empty()) return {Tensor::scalar(0.0), true};
    const std::size_t n = labels.size();
    std::vector<double> pos(n * n, 0.0), neg(n * n, 0.0);
    const double inv = 1.0 / static_cast<double>(pair_set.size());
    for (const auto& p : pair_set.pairs) {
        if (p.i >= n || p.j >= n) {
            throw ContractError("contrastive_loss: pair (" + std::to_string(p.i) + ", " + std::to_string(p.j) +
                                ") outside batch of " + std::to_string(n));
        }
        pos[p.i * n + p.j] -= inv;
        for (std::size_t k = 0; k < n; ++k)
            if (labels[k] != labels[p.i]) neg[p.i * n + k] -= inv;
    }
    const Tensor logits = affine(matmul(embeddings, transpose(embeddings)), 1.0 / tau);
    const Tensor s = sigmoid(logits);
    const Tensor positive = weighted_sum(log_clamped(s), std::move(pos));
    const Tensor negative = weighted_sum(log_clamped(affine(s, -1.0, 1.0)), std::move(neg));
    return {add(positive, negative), false};
}

// ---------------------------------------------------------------------------
// CycleGAN terms

namespace detail {
/// mean over the batch of mean(log(transform(D(x)))) over score cells
inline Tensor mean_log_score(const Discriminator& d, std::span<const Tensor> images, bool complement) {
    std::vector<Tensor> per_image;
    for (const auto& img : images) {
        Tensor s = discriminate(d, img);
        if (complement) s = affine(s, -1.0, 1.0);
        per_image.push_back(mean(log_clamped(s)));
    }
    return mean(concat_rows(per_image));
}

inline Tensor batch_l1(std::span<const Tensor> produced, std::span<const Tensor> targets) {
    std::vector<Tensor> per_image;
    for (std::size_t i = 0; i < produced.size(); ++i) per_image.push_back(l1_mean(produced[i], targets[i]));
    return mean(concat_rows(per_image));
}

inline void require_nonempty(std::span<const Tensor> batch, const char* what) {
    if (batch.empty()) throw ContractError(std::string(what) + ": empty batch");
}

inline std::vector<Tensor> apply(const Generator& g, std::span<const Tensor> images) {
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(generate(g, img));
    return out;
}

inline std::vector<Tensor> detached(std::span<const Tensor> images) {
    std::vector<Tensor> out;
    for (const auto& img : images) out.push_back(img.detach());
    return out;
}
}  // namespace detail

/// Non-saturating generator term: -mean log D(fake).
inline Tensor generator_adversarial_loss(const Discriminator& d, std::span<const Tensor> fake_batch) {
    detail::require_nonempty(fake_batch, "generator_adversarial_loss");
    return affine(detail::mean_log_score(d, fake_batch, false), -1.0);
}

/// -mean log D(real) - mean log(1 - D(fake)), fakes detached from their generator.
inline Tensor discriminator_loss(const Discriminator& d, std::span<const Tensor> real_batch,
                                 std::span<const Tensor> fake_batch) {
    detail::require_nonempty(real_batch, "discriminator_loss");
    detail::require_nonempty(fake_batch, "discriminator_loss");
    const auto fakes = detail::detached(fake_batch);
    return affine(add(detail::mean_log_score(d, real_batch, false), detail::mean_log_score(d, fakes, true)), -1.0);
}

struct AdversarialLoss {
    Tensor gen_loss;
    Tensor disc_loss;
};

inline AdversarialLoss adversarial_loss(const Discriminator& d, std::span<const Tensor> real_batch,
                                        std::span<const Tensor> fake_batch) {
    return {generator_adversarial_loss(d, fake_batch), discriminator_loss(d, real_batch, fake_batch)};
}

/// mean_x |F(G(x)) - x|_1 / n + mean_y |G(F(y)) - y|_1 / n
inline Tensor cycle_loss(const Generator& g, const Generator& f, std::span<const Tensor> batch_x,
                         std::span<const Tensor> batch_y) {
    detail::require_nonempty(batch_x, "cycle_loss");
    detail::require_nonempty(batch_y, "cycle_loss");
    const auto rec_x = detail::apply(f, detail::apply(g, batch_x));
    const auto rec_y = detail::apply(g, detail::apply(f, batch_y));
    return add(detail::batch_l1(rec_x, batch_x), detail::batch_l1(rec_y, batch_y));
}

/// mean_x |G(x) - x|_1 / n + mean_y |F(y) - y|_1 / n
inline Tensor identity_loss(const Generator& g, const Generator& f, std::span<const Tensor> batch_x,
                            std::span<const Tensor> batch_y) {
    detail::require_nonempty(batch_x, "identity_loss");
    detail::require_nonempty(batch_y, "identity_loss");
    return add(detail::batch_l1(detail::apply(g, batch_x), batch_x), detail::batch_l1(detail::apply(f, batch_y), batch_y));
}

/// (1/M) sum -log p_y for class probabilities [M x 3] of translated error members.
inline Tensor weather_loss_from_probs(const Tensor& probs, std::span<const WeatherClass> labels) {
    if (probs.rank() != 2 || probs.dim(1) != kNumClasses || probs.dim(0) != labels.size()) {
        throw ShapeError("weather_loss: probabilities " + shape_str(probs.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    std::vector<double> weights(probs.numel(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        weights[i * kNumClasses + index_of(labels[i])] = -1.0 / static_cast<double>(labels.size());
    }
    return weighted_sum(log_clamped(probs), std::move(weights));
}

/// Cross-entropy of the classifier on G(x_i) against y_i over error members.
/// Zero for an empty set.
inline Tensor weather_loss(const ModelBundle& bundle, std::span<const ErrorMember> members) {
    if (members.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> translated;
    std::vector<WeatherClass> labels;
    for (const auto& m : members) {
        translated.push_back(generate(bundle.gen_night_to_day, m.image));
        labels.push_back(m.label);
    }
    return weather_loss_from_probs(bundle.class_probabilities(translated), labels);
}

inline Tensor weather_loss(const ModelBundle& bundle, const ErrorSet& error_set) {
    return weather_loss(bundle, std::span<const ErrorMember>(error_set.members));
}

/// Unpaired mini-batches: X = night, Y = day.
struct CycleGanBatch {
    std::vector<Tensor> night;
    std::vector<Tensor> day;
};

/// Which images the identity term feeds each generator.
enum class IdentityMode {
    SourceDomain,  // |G(x) - x| on night x, |F(y) - y| on day y
    TargetDomain,  // |G(y) - y| on day y, |F(x) - x| on night x
};

struct GeneratorTerms {
    Tensor adv_night_to_day;  // -mean log D_Y(G(x))
    Tensor adv_day_to_night;  // -mean log D_X(F(y))
    Tensor cycle;
    Tensor identity;
    Tensor weather;
    Tensor objective;
    std::vector<Tensor> fake_day;    // G(x)
    std::vector<Tensor> fake_night;  // F(y)
};

inline GeneratorTerms generator_terms(const ModelBundle& b, const CycleGanBatch& batch, const LossWeights& w,
                                      std::span<const ErrorMember> error_members,
                                      IdentityMode identity_mode = IdentityMode::SourceDomain) {
    detail::require_nonempty(batch.night, "cyclegan");
    detail::require_nonempty(batch.day, "cyclegan");
    GeneratorTerms t;
    t.fake_day = detail::apply(b.gen_night_to_day, batch.night);
    t.fake_night = detail::apply(b.gen_day_to_night, batch.day);
    t.adv_night_to_day = generator_adversarial_loss(b.disc_day, t.fake_day);
    t.adv_day_to_night = generator_adversarial_loss(b.disc_night, t.fake_night);
    const auto rec_night = detail::apply(b.gen_day_to_night, t.fake_day);
    const auto rec_day = detail::apply(b.gen_night_to_day, t.fake_night);
    t.cycle = add(detail::batch_l1(rec_night, batch.night), detail::batch_l1(rec_day, batch.day));
    if (identity_mode == IdentityMode::SourceDomain) {
        // G(x) and F(y) are already the translated batches
        t.identity = add(detail::batch_l1(t.fake_day, batch.night), detail::batch_l1(t.fake_night, batch.day));
    } else {
        t.identity = identity_loss(b.gen_night_to_day, b.gen_day_to_night, batch.day, batch.night);
    }
    t.weather = weather_loss(b, error_members);
    t.objective = add(add(add(t.adv_night_to_day, t.adv_day_to_night), affine(t.cycle, w.lambda_cyc)),
                      add(affine(t.identity, w.lambda_id), affine(t.weather, w.lambda_weather)));
    return t;
}

struct DiscriminatorTerms {
    Tensor disc_day;    // D_Y on real day vs G(x)
    Tensor disc_night;  // D_X on real night vs F(y)
    Tensor objective;
};

inline DiscriminatorTerms discriminator_terms(const ModelBundle& b, const CycleGanBatch& batch,
                                              std::span<const Tensor> fake_day, std::span<const Tensor> fake_night) {
    DiscriminatorTerms t;
    t.disc_day = discriminator_loss(b.disc_day, batch.day, fake_day);
    t.disc_night = discriminator_loss(b.disc_night, batch.night, fake_night);
    t.objective = add(t.disc_day, t.disc_night);
    return t;
}

struct CycleGanObjectives {
    Tensor generator_objective;
    Tensor discriminator_objective;
    GeneratorTerms generator;
    DiscriminatorTerms discriminator;
};

/// Generator objective: both adversarial terms + lambda_cyc L_cyc + lambda_id L_id +
/// lambda_weather L_weather. Discriminator objective: both discriminator losses.
inline CycleGanObjectives cyclegan_total(const ModelBundle& b, const CycleGanBatch& batch, const LossWeights& w,
                                         const ErrorSet& error_set,
                                         IdentityMode identity_mode = IdentityMode::SourceDomain) {
    CycleGanObjectives out;
    out.generator = generator_terms(b, batch, w, error_set.members, identity_mode);
    out.discriminator = discriminator_terms(b, batch, out.generator.fake_day, out.generator.fake_night);
    out.generator_objective = out.generator.objective;
    out.discriminator_objective = out.discriminator.objective;
    return out;
}

/// lambda_con * con + lambda_cls * cls
inline Tensor total_loss(const Tensor& con, const Tensor& cls, const LossWeights& w) {
    if (!std::isfinite(con.item()) || !std::isfinite(cls.item())) throw ContractError("total_loss: non-finite input");
    return add(affine(con, w.lambda_con), affine(cls, w.lambda_cls));
}

}  // namespace nightshift
