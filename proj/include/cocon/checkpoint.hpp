#pragma once

// Checkpoint file: 4-byte magic, u32 format version, u64 entry count, then
// per parameter: path (u32 length + bytes), rank (u32), dims (u64 each),
// values (raw little-endian 8-byte doubles). Round trips are bit exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cocon/tensor.hpp"

namespace cocon {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace detail {

constexpr char kCkptMagic[4] = {'C', 'C', 'K', 'P'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ParameterSet& params, const std::string& path) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    // write-temp then rename so a crash never leaves a torn checkpoint
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
        os.write(detail::kCkptMagic, 4);
        detail::write_pod<uint32_t>(os, detail::kCkptVersion);
        detail::write_pod<uint64_t>(os, params.size());
        for (const auto& [name, t] : params) {
            detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
            for (size_t d : t.shape()) detail::write_pod<uint64_t>(os, d);
            os.write(reinterpret_cast<const char*>(t.data().data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline ParameterSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != detail::kCkptVersion) {
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version) + " in " + path);
    }
    uint64_t count = detail::read_pod<uint64_t>(is);
    ParameterSet out;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t nlen = detail::read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rank = detail::read_pod<uint32_t>(is);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<size_t>(detail::read_pod<uint64_t>(is));
        }
        std::vector<double> data(shape_numel(shape));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
        out.add(name, Tensor::param(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace cocon
