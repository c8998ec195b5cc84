#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nightshift/ops.hpp"
#include "nightshift/rng.hpp"

namespace nightshift {

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), trainable.
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(data), true);
}

inline void zero_fill(Tensor& t) {
    for (auto& v : t.mutable_data()) v = 0.0;
}

/// y = x W + b, with W stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)) {}

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor forward(const Tensor& x) const { return add_bias_rows(matmul(x, weight), bias); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

    Tensor forward(const Tensor& x) const { return layernorm_rows(x, gain, bias); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".gain", gain});
        out.push_back({prefix + ".bias", bias});
    }
};

/// Square-kernel convolution with an optional per-channel bias.
struct Conv {
    Tensor kernels;  // [out x in x k x k]
    Tensor bias;     // empty when unused
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv() = default;
    Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_, bool with_bias,
         Rng& rng)
        : kernels(init_uniform({out, in, k, k}, in * k * k, rng)), stride(stride_), padding(padding_) {
        if (with_bias) bias = init_uniform({out}, in * k * k, rng);
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = conv2d(x, kernels, stride, padding);
        return bias.defined() ? add_channel_bias(y, bias) : y;
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".kernels", kernels});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

struct ConvTranspose {
    Tensor kernels;  // [in x out x k x k]
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    ConvTranspose() = default;
    ConvTranspose(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_,
                  bool with_bias, Rng& rng)
        : kernels(init_uniform({in, out, k, k}, in * k * k, rng)), stride(stride_), padding(padding_) {
        if (with_bias) bias = init_uniform({out}, in * k * k, rng);
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = conv_transpose2d(x, kernels, stride, padding);
        return bias.defined() ? add_channel_bias(y, bias) : y;
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".kernels", kernels});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

}  // namespace nightshift
