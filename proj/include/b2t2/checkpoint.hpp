#pragma once

// Flat binary checkpoint format:
//   magic "B2T2", version u32, then per parameter in lexicographic name
//   order: name length u32, UTF-8 name, rank u32, dims u32..., float64
//   values. All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "b2t2/adam.hpp"
#include "b2t2/tensor.hpp"

namespace b2t2 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw CheckpointError("truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ParamMap& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write("B2T2", 4);
    detail::write_u32(os, kCheckpointVersion);
    // std::map iterates lexicographically already
    for (const auto& [name, t] : params) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t->value.data()),
                 static_cast<std::streamsize>(t->value.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("write failure: " + path);
}

// Load raw name -> (shape, values) pairs.
inline std::map<std::string, std::pair<std::vector<int>, std::vector<double>>>
load_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "B2T2", 4) != 0)
        throw CheckpointError("bad checkpoint magic: " + path);
    if (detail::read_u32(is) != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version: " + path);
    std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t rank = detail::read_u32(is);
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(detail::read_u32(is));
            numel *= static_cast<std::size_t>(d);
        }
        std::vector<double> values(numel);
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw CheckpointError("truncated checkpoint: " + path);
        out.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    return out;
}

// Load into an existing parameter map; names and shapes must match exactly.
inline void load_checkpoint(ParamMap& params, const std::string& path) {
    auto raw = load_checkpoint_raw(path);
    if (raw.size() != params.size())
        throw CheckpointError("checkpoint parameter set does not match model: " + path);
    for (auto& [name, t] : params) {
        auto it = raw.find(name);
        if (it == raw.end()) throw CheckpointError("missing parameter " + name + " in " + path);
        if (it->second.first != t->shape)
            throw CheckpointError("shape mismatch for parameter " + name + " in " + path);
        t->value = std::move(it->second.second);
    }
}

}  // namespace b2t2
