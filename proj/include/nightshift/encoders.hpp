#pragma once

// Dual-encoder towers: a patch transformer over images, the same block design over
// prompt tokens, and the projection / classification heads that sit on top.

#include <array>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nightshift/labels.hpp"
#include "nightshift/layers.hpp"

namespace nightshift {

struct EncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t proj_dim = 16;
    std::size_t num_classes = kNumClasses;

    void validate() const {
        if (patch_size == 0 || image_size % patch_size != 0) {
            throw ContractError("encoder config: image_size " + std::to_string(image_size) +
                                " not divisible by patch_size " + std::to_string(patch_size));
        }
        if (num_heads == 0 || embed_dim % num_heads != 0) {
            throw ContractError("encoder config: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
        }
        if (num_layers == 0 || proj_dim == 0) throw ContractError("encoder config: num_layers and proj_dim must be positive");
        if (num_classes != kNumClasses) throw ContractError("encoder config: num_classes is fixed at 3");
    }

    std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }

    bool operator==(const EncoderConfig&) const = default;
};

/// Pre-layernorm block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
    LayerNorm ln_attn;
    Linear query, key, value, attn_out;
    LayerNorm ln_mlp;
    Linear mlp_in, mlp_out;

    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, Rng& rng)
        : ln_attn(dim),
          query(dim, dim, rng),
          key(dim, dim, rng),
          value(dim, dim, rng),
          attn_out(dim, dim, rng),
          ln_mlp(dim),
          mlp_in(dim, 4 * dim, rng),
          mlp_out(4 * dim, dim, rng) {}

    Tensor forward(const Tensor& x, std::size_t seq_len, std::size_t heads) const {
        const Tensor h = ln_attn.forward(x);
        const Tensor attn = multi_head_attention(query.forward(h), key.forward(h), value.forward(h), seq_len, heads);
        const Tensor x1 = add(x, attn_out.forward(attn));
        return add(x1, mlp_out.forward(gelu(mlp_in.forward(ln_mlp.forward(x1)))));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        ln_attn.collect(prefix + ".ln_attn", out);
        query.collect(prefix + ".query", out);
        key.collect(prefix + ".key", out);
        value.collect(prefix + ".value", out);
        attn_out.collect(prefix + ".attn_out", out);
        ln_mlp.collect(prefix + ".ln_mlp", out);
        mlp_in.collect(prefix + ".mlp_in", out);
        mlp_out.collect(prefix + ".mlp_out", out);
    }
};

struct TransformerStack {
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
    std::size_t heads = 1;

    TransformerStack() = default;
    TransformerStack(std::size_t dim, std::size_t layers, std::size_t heads_, Rng& rng)
        : final_norm(dim), heads(heads_) {
        for (std::size_t i = 0; i < layers; ++i) blocks.emplace_back(dim, rng);
    }

    /// tokens [(B*seq_len) x D] -> pooled [B x D]
    Tensor forward_pooled(Tensor tokens, std::size_t seq_len) const {
        for (const auto& b : blocks) tokens = b.forward(tokens, seq_len, heads);
        return segment_mean_rows(final_norm.forward(tokens), seq_len);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
        final_norm.collect(prefix + ".final_norm", out);
    }
};

/// f_theta: image [3 x S x S] -> embedding [embed_dim].
struct ImageEncoder {
    EncoderConfig config;
    Linear patch_embed;
    Tensor positions;  // [num_patches x embed_dim]
    TransformerStack stack;

    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& cfg, Rng& rng)
        : config(cfg),
          patch_embed(3 * cfg.patch_size * cfg.patch_size, cfg.embed_dim, rng),
          positions(init_uniform({cfg.num_patches(), cfg.embed_dim}, cfg.embed_dim, rng)),
          stack(cfg.embed_dim, cfg.num_layers, cfg.num_heads, rng) {
        cfg.validate();
    }

    void check_image(const Tensor& image) const {
        if (image.shape() != Shape{3, config.image_size, config.image_size}) {
            throw ShapeError("image encoder expects [3x" + std::to_string(config.image_size) + "x" +
                             std::to_string(config.image_size) + "], got " + shape_str(image.shape()));
        }
    }

    /// images -> [B x embed_dim]
    Tensor forward(std::span<const Tensor> images) const {
        if (images.empty()) throw ContractError("image encoder: empty batch");
        std::vector<Tensor> patches;
        patches.reserve(images.size());
        for (const auto& img : images) {
            check_image(img);
            patches.push_back(patchify(img, config.patch_size));
        }
        const Tensor tokens = add_tiled_rows(patch_embed.forward(concat_rows(patches)), positions);
        return stack.forward_pooled(tokens, config.num_patches());
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        patch_embed.collect(prefix + ".patch_embed", out);
        out.push_back({prefix + ".positions", positions});
        stack.collect(prefix, out);
    }
};

/// Closed whitespace vocabulary for the weather prompts. Id 0 is padding.
class Vocabulary {
   public:
    static constexpr std::array<std::string_view, 20> kWords{
        "<pad>", "clear", "road",  "no",     "precipitation", "rain",   "on",   "snow",    "wet",   "dry",
        "heavy", "light", "the",   "a",      "falling",       "scene",  "day",  "night",   "camera", "traffic"};

    static std::size_t size() { return kWords.size(); }

    /// Throws InputError on unknown words or when the sequence exceeds max_len.
    static std::vector<std::size_t> tokenize(std::string_view text, std::size_t max_len) {
        std::vector<std::size_t> ids;
        std::istringstream in{std::string(text)};
        std::string word;
        while (in >> word) {
            std::size_t id = 0;
            for (std::size_t i = 1; i < kWords.size(); ++i) {
                if (kWords[i] == word) id = i;
            }
            if (id == 0) throw InputError("token '" + word + "' is not in the prompt vocabulary");
            ids.push_back(id);
        }
        if (ids.size() > max_len) {
            throw InputError("prompt has " + std::to_string(ids.size()) + " tokens, maximum is " + std::to_string(max_len));
        }
        ids.resize(max_len, 0);
        return ids;
    }
};

struct ClassPrompt {
    WeatherClass class_id;
    std::vector<std::size_t> token_ids;  // fixed length, zero padded
};

inline constexpr std::string_view prompt_text(WeatherClass c) {
    switch (c) {
        case WeatherClass::NoPrecipitation:
            return "clear road no precipitation";
        case WeatherClass::Rain:
            return "rain on road";
        case WeatherClass::Snow:
            return "snow on road";
    }
    return "";
}

inline std::vector<ClassPrompt> class_prompts(std::size_t max_len) {
    std::vector<ClassPrompt> out;
    for (auto c : kAllClasses) out.push_back({c, Vocabulary::tokenize(prompt_text(c), max_len)});
    return out;
}

/// Text tower: token + position embeddings through the same block design.
struct TextEncoder {
    std::size_t max_len = 6;
    Tensor token_table;  // [vocab x D]
    Tensor positions;    // [max_len x D]
    TransformerStack stack;

    TextEncoder() = default;
    TextEncoder(const EncoderConfig& cfg, std::size_t max_len_, Rng& rng)
        : max_len(max_len_),
          token_table(init_uniform({Vocabulary::size(), cfg.embed_dim}, 1, rng)),
          positions(init_uniform({max_len_, cfg.embed_dim}, cfg.embed_dim, rng)),
          stack(cfg.embed_dim, cfg.num_layers, cfg.num_heads, rng) {}

    /// prompts -> [P x embed_dim]
    Tensor forward(std::span<const ClassPrompt> prompts) const {
        if (prompts.empty()) throw ContractError("text encoder: no prompts");
        std::vector<Tensor> rows;
        for (const auto& p : prompts) {
            if (p.token_ids.size() != max_len) {
                throw InputError("prompt length " + std::to_string(p.token_ids.size()) + " differs from configured " +
                                 std::to_string(max_len));
            }
            for (auto id : p.token_ids) {
                if (id >= Vocabulary::size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
            }
            rows.push_back(embedding(token_table, p.token_ids));
        }
        return stack.forward_pooled(add_tiled_rows(concat_rows(rows), positions), max_len);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".token_table", token_table});
        out.push_back({prefix + ".positions", positions});
        stack.collect(prefix, out);
    }
};

/// h_phi: linear map then L2 normalization.
struct ProjectionHead {
    Linear linear;

    ProjectionHead() = default;
    ProjectionHead(std::size_t in, std::size_t out, Rng& rng) : linear(in, out, rng) {}

    /// [B x embed_dim] -> [B x proj_dim], unit rows
    Tensor forward(const Tensor& e) const { return l2_normalize_rows(linear.forward(e)); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const { linear.collect(prefix, out); }
};

/// c_psi: linear map then softmax over the three classes.
struct ClassificationHead {
    Linear linear;

    ClassificationHead() = default;
    ClassificationHead(std::size_t in, Rng& rng) : linear(in, kNumClasses, rng) {}

    Tensor forward(const Tensor& e) const { return softmax_rows(linear.forward(e)); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const { linear.collect(prefix, out); }
};

namespace detail {
inline Tensor as_row(const Tensor& v, std::size_t expected, const char* op) {
    if (v.rank() != 1 || v.dim(0) != expected) {
        throw ShapeError(std::string(op) + ": expected vector of length " + std::to_string(expected) + ", got " +
                         shape_str(v.shape()));
    }
    return reshape(v, {1, expected});
}
}  // namespace detail

inline Tensor encode_image(const ImageEncoder& encoder, const Tensor& image) {
    const Tensor out = encoder.forward(std::span<const Tensor>(&image, 1));
    return reshape(out, {out.dim(1)});
}

inline Tensor encode_text(const TextEncoder& encoder, const ClassPrompt& prompt) {
    const Tensor out = encoder.forward(std::span<const ClassPrompt>(&prompt, 1));
    return reshape(out, {out.dim(1)});
}

inline Tensor project(const ProjectionHead& head, const Tensor& e) {
    const Tensor out = head.forward(detail::as_row(e, head.linear.in_features(), "project"));
    return reshape(out, {out.dim(1)});
}

inline Tensor classify(const ClassificationHead& head, const Tensor& e) {
    const Tensor out = head.forward(detail::as_row(e, head.linear.in_features(), "classify"));
    return reshape(out, {out.dim(1)});
}

}  // namespace nightshift
