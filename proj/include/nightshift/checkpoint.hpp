#pragma once

// Parameter checkpoints.
//
// Layout (all integers and floats little-endian):
//   "NSCK v1\n"
//   u64 record_count
//   per record: u32 name_bytes, name (UTF-8), u32 rank, u64 dims[rank], f64 data[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nightshift/tensor.hpp"

namespace nightshift {

inline constexpr std::string_view kCheckpointMagic = "NSCK v1\n";

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
        bits = std::bit_cast<std::uint64_t>(value);
    } else {
        bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
   public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        if constexpr (std::is_same_v<T, double>) {
            return std::bit_cast<double>(bits);
        } else {
            return static_cast<T>(bits);
        }
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

   private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated", pos_);
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(std::span<const NamedTensor> params) {
    std::string out(kCheckpointMagic);
    detail::put_le<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double v : p.tensor.data()) detail::put_le<double>(out, v);
    }
    return out;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.remaining() < kCheckpointMagic.size() || in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
        throw FormatError("not an NSCK v1 checkpoint", 0);
    }
    const auto count = in.get<std::uint64_t>();
    std::vector<NamedTensor> out;
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto name_len = in.get<std::uint32_t>();
        std::string name(in.take(name_len));
        const auto rank_offset = in.offset();
        const auto rank = in.get<std::uint32_t>();
        if (rank == 0 || rank > 8) throw FormatError("bad rank " + std::to_string(rank) + " for '" + name + "'", rank_offset);
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = in.get<std::uint64_t>();
            if (d == 0 || d > in.remaining() / 8 / numel) {
                throw FormatError("dimension " + std::to_string(d) + " of '" + name + "' exceeds payload", in.offset());
            }
            numel *= d;
            shape.push_back(static_cast<std::size_t>(d));
        }
        std::vector<double> data(numel);
        for (auto& v : data) v = in.get<double>();
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    if (in.remaining() != 0) throw FormatError("trailing bytes after last record", in.offset());
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    const auto bytes = encode_checkpoint(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint " + path.string());
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Copy checkpoint values into existing parameters, matching by name and shape.
inline void assign_checkpoint(std::span<NamedTensor> params, std::span<const NamedTensor> saved) {
    if (params.size() != saved.size()) {
        throw ContractError("checkpoint has " + std::to_string(saved.size()) + " parameters, model has " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != saved[i].name || params[i].tensor.shape() != saved[i].tensor.shape()) {
            throw ContractError("checkpoint record '" + saved[i].name + "' " + shape_str(saved[i].tensor.shape()) +
                                " does not match parameter '" + params[i].name + "' " +
                                shape_str(params[i].tensor.shape()));
        }
        std::ranges::copy(saved[i].tensor.data(), params[i].tensor.mutable_data().begin());
    }
}

/// FNV-1a over the encoded checkpoint; identifies a parameter snapshot.
inline std::uint64_t snapshot_id(std::span<const NamedTensor> params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : encode_checkpoint(params)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace nightshift
