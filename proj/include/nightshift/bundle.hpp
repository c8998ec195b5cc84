#pragma once

#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

#include "nightshift/checkpoint.hpp"
#include "nightshift/cyclegan.hpp"
#include "nightshift/encoders.hpp"

namespace nightshift {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
                       {"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"proj_dim", c.proj_dim},
                       {"num_classes", c.num_classes}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    static constexpr std::array<std::string_view, 7> kFields{"image_size", "patch_size", "embed_dim", "num_layers",
                                                             "num_heads",  "proj_dim",   "num_classes"};
    for (const auto& [key, _] : j.items()) {
        if (std::ranges::find(kFields, key) == kFields.end()) throw ParseError("unknown encoder config field '" + key + "'", 0);
    }
    EncoderConfig d;
    c.image_size = j.value("image_size", d.image_size);
    c.patch_size = j.value("patch_size", d.patch_size);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.num_layers = j.value("num_layers", d.num_layers);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.proj_dim = j.value("proj_dim", d.proj_dim);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.validate();
}

inline void to_json(nlohmann::json& j, const GanConfig& c) {
    j = nlohmann::json{{"gen_channels", c.gen_channels}, {"disc_channels", c.disc_channels}};
}

inline void from_json(const nlohmann::json& j, GanConfig& c) {
    GanConfig d;
    c.gen_channels = j.value("gen_channels", d.gen_channels);
    c.disc_channels = j.value("disc_channels", d.disc_channels);
}

struct ModelConfig {
    EncoderConfig encoder;
    GanConfig gan;
    std::size_t text_max_len = 6;

    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"encoder", c.encoder}, {"gan", c.gan}, {"text_max_len", c.text_max_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.encoder = j.value("encoder", d.encoder);
    c.gan = j.value("gan", d.gan);
    c.text_max_len = j.value("text_max_len", d.text_max_len);
}

/// The eight networks of the framework. Owns its parameters; not copyable
/// (tensors are shared handles), use clone().
struct ModelBundle {
    ModelConfig config;
    ImageEncoder image_encoder;
    TextEncoder text_encoder;
    ProjectionHead projection_head;
    ClassificationHead classification_head;
    Generator gen_night_to_day;
    Generator gen_day_to_night;
    Discriminator disc_night;
    Discriminator disc_day;
    std::vector<ClassPrompt> prompts;

    ModelBundle(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        cfg.encoder.validate();
        Rng rng(seed);
        image_encoder = ImageEncoder(cfg.encoder, rng);
        text_encoder = TextEncoder(cfg.encoder, cfg.text_max_len, rng);
        projection_head = ProjectionHead(cfg.encoder.embed_dim, cfg.encoder.proj_dim, rng);
        classification_head = ClassificationHead(cfg.encoder.embed_dim, rng);
        gen_night_to_day = Generator(cfg.gan, rng);
        gen_day_to_night = Generator(cfg.gan, rng);
        disc_night = Discriminator(cfg.gan, rng);
        disc_day = Discriminator(cfg.gan, rng);
        prompts = class_prompts(cfg.text_max_len);
    }

    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;
    ModelBundle(ModelBundle&&) = default;
    ModelBundle& operator=(ModelBundle&&) = default;

    ModelBundle clone() const {
        ModelBundle copy(config, 0);
        auto dst = copy.parameters();
        const auto src = parameters();
        assign_checkpoint(dst, src);
        return copy;
    }

    /// Encoders and heads (the classifier side).
    std::vector<NamedTensor> classifier_parameters() const {
        std::vector<NamedTensor> out;
        image_encoder.collect("image_encoder", out);
        text_encoder.collect("text_encoder", out);
        projection_head.collect("projection_head", out);
        classification_head.collect("classification_head", out);
        return out;
    }

    std::vector<NamedTensor> generator_parameters() const {
        std::vector<NamedTensor> out;
        gen_night_to_day.collect("gen_night_to_day", out);
        gen_day_to_night.collect("gen_day_to_night", out);
        return out;
    }

    std::vector<NamedTensor> discriminator_parameters() const {
        std::vector<NamedTensor> out;
        disc_night.collect("disc_night", out);
        disc_day.collect("disc_day", out);
        return out;
    }

    std::vector<NamedTensor> parameters() const {
        auto out = classifier_parameters();
        for (auto& p : generator_parameters()) out.push_back(std::move(p));
        for (auto& p : discriminator_parameters()) out.push_back(std::move(p));
        return out;
    }

    std::uint64_t snapshot() const { return snapshot_id(parameters()); }

    /// Leaves every parameter frozen (no gradient recording).
    void freeze_all() {
        auto params = parameters();
        set_trainable(params, false);
    }

    /// image batch -> projected, normalized embeddings [B x proj_dim]
    Tensor image_embeddings(std::span<const Tensor> images) const {
        return projection_head.forward(image_encoder.forward(images));
    }

    /// [3 x proj_dim], one row per class prompt
    Tensor text_embeddings() const { return projection_head.forward(text_encoder.forward(prompts)); }

    /// image batch -> class probabilities [B x 3]
    Tensor class_probabilities(std::span<const Tensor> images) const {
        return classification_head.forward(image_encoder.forward(images));
    }
};

/// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

/// Nearest class prompt by dot product of projected embeddings.
inline std::vector<WeatherClass> zero_shot_classify(const ModelBundle& bundle, std::span<const Tensor> images,
                                                    std::size_t chunk = 32) {
    NoGradScope no_grad;
    const Tensor text = bundle.text_embeddings();
    const std::size_t p = text.dim(1);
    std::vector<WeatherClass> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto part = images.subspan(start, std::min(chunk, images.size() - start));
        const Tensor e = bundle.image_embeddings(part);
        for (std::size_t i = 0; i < part.size(); ++i) {
            std::array<double, kNumClasses> sims{};
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                for (std::size_t k = 0; k < p; ++k) sims[c] += e[i * p + k] * text[c * p + k];
            }
            out.push_back(static_cast<WeatherClass>(argmax_lowest(sims)));
        }
    }
    return out;
}

inline WeatherClass zero_shot_classify(const ModelBundle& bundle, const Tensor& image) {
    return zero_shot_classify(bundle, std::span<const Tensor>(&image, 1)).front();
}

}  // namespace nightshift
