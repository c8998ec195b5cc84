#pragma once

#include <string>
#include <vector>

#include "nightshift/layers.hpp"

namespace nightshift {

struct GanConfig {
    std::size_t gen_channels = 16;
    std::size_t disc_channels = 16;

    bool operator==(const GanConfig&) const = default;
};

namespace detail {
inline void check_rgb(const Tensor& image, const char* who) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0 ||
        image.dim(1) < 8 || image.dim(2) < 8) {
        throw ShapeError(std::string(who) + ": expected [3xHxW] with H, W multiples of 4 and at least 8, got " +
                         shape_str(image.shape()));
    }
}
}  // namespace detail

struct ResidualBlock {
    Conv first, second;

    ResidualBlock() = default;
    ResidualBlock(std::size_t channels, Rng& rng)
        : first(channels, channels, 3, 1, 1, false, rng), second(channels, channels, 3, 1, 1, false, rng) {}

    Tensor forward(const Tensor& x) const {
        const Tensor h = relu(instance_norm(first.forward(x)));
        return add(x, instance_norm(second.forward(h)));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        first.collect(prefix + ".first", out);
        second.collect(prefix + ".second", out);
    }
};

/// Two stride-2 convs, two residual blocks, two stride-2 transposed convs, tanh.
/// Shape preserving on [3 x H x W].
struct Generator {
    Conv down1, down2;
    std::vector<ResidualBlock> residual;
    ConvTranspose up1, up2;

    Generator() = default;
    Generator(const GanConfig& cfg, Rng& rng)
        : down1(3, cfg.gen_channels, 4, 2, 1, false, rng),
          down2(cfg.gen_channels, 2 * cfg.gen_channels, 4, 2, 1, false, rng),
          up1(2 * cfg.gen_channels, cfg.gen_channels, 4, 2, 1, false, rng),
          up2(cfg.gen_channels, 3, 4, 2, 1, true, rng) {
        for (int i = 0; i < 2; ++i) residual.emplace_back(2 * cfg.gen_channels, rng);
    }

    Tensor forward(const Tensor& image) const {
        detail::check_rgb(image, "generator");
        Tensor h = relu(instance_norm(down1.forward(image)));
        h = relu(instance_norm(down2.forward(h)));
        for (const auto& block : residual) h = block.forward(h);
        h = relu(instance_norm(up1.forward(h)));
        return nightshift::tanh(up2.forward(h));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        down1.collect(prefix + ".down1", out);
        down2.collect(prefix + ".down2", out);
        for (std::size_t i = 0; i < residual.size(); ++i) residual[i].collect(prefix + ".residual." + std::to_string(i), out);
        up1.collect(prefix + ".up1", out);
        up2.collect(prefix + ".up2", out);
    }
};

/// Patch discriminator: three stride-2 conv blocks, a 1-channel conv, sigmoid per cell.
struct Discriminator {
    Conv block1, block2, block3, score;

    Discriminator() = default;
    Discriminator(const GanConfig& cfg, Rng& rng)
        : block1(3, cfg.disc_channels, 4, 2, 1, true, rng),
          block2(cfg.disc_channels, 2 * cfg.disc_channels, 4, 2, 1, false, rng),
          block3(2 * cfg.disc_channels, 4 * cfg.disc_channels, 4, 2, 1, false, rng),
          score(4 * cfg.disc_channels, 1, 3, 1, 1, true, rng) {}

    Tensor forward(const Tensor& image) const {
        detail::check_rgb(image, "discriminator");
        Tensor h = leaky_relu(block1.forward(image));
        h = leaky_relu(instance_norm(block2.forward(h)));
        h = leaky_relu(instance_norm(block3.forward(h)));
        return sigmoid(score.forward(h));
    }

    void zero_score_layer() {
        zero_fill(score.kernels);
        zero_fill(score.bias);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        block1.collect(prefix + ".block1", out);
        block2.collect(prefix + ".block2", out);
        block3.collect(prefix + ".block3", out);
        score.collect(prefix + ".score", out);
    }
};

inline Tensor generate(const Generator& g, const Tensor& image) { return g.forward(image); }

/// Score map [1 x h' x w'] with values in (0, 1).
inline Tensor discriminate(const Discriminator& d, const Tensor& image) { return d.forward(image); }

}  // namespace nightshift
