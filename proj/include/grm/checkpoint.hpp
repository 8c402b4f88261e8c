#pragma once
// Checkpoint file format (little-endian):
//   magic "GRMC" | u32 format version | u64 config digest | u32 entry count |
//   entries sorted by name: u32 name length | name bytes | u32 ndim |
//   u64 per dimension | f64 row-major payload.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "grm/gradcheck.hpp"
#include "grm/tensor.hpp"

namespace grm {

constexpr std::uint32_t kCheckpointVersion = 1;

struct DigestMismatchError : CheckpointError {
    using CheckpointError::CheckpointError;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    // host is little-endian on every supported target
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint: unexpected end of file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                            std::uint64_t config_digest) {
    std::vector<const ParamRef*> sorted;
    sorted.reserve(params.size());
    for (const auto& p : params) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const ParamRef* a, const ParamRef* b) { return a->name < b->name; });

    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    os.write("GRMC", 4);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    detail::write_le<std::uint64_t>(os, config_digest);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sorted.size()));
    for (const ParamRef* p : sorted) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->tensor.shape.size()));
        for (int d : p->tensor.shape) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(p->tensor.data->data()),
                 static_cast<std::streamsize>(p->tensor.data->size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

// Loads into an existing parameter set; names and shapes must match exactly.
// Throws DigestMismatchError when the stored config digest differs.
inline void load_checkpoint(const std::string& path, std::vector<ParamRef>& params,
                            std::uint64_t expected_digest) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GRMC", 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw DigestMismatchError("checkpoint: format version " + std::to_string(version) +
                                  " != " + std::to_string(kCheckpointVersion));
    const auto digest = detail::read_le<std::uint64_t>(is);
    if (digest != expected_digest)
        throw DigestMismatchError("checkpoint: config digest mismatch (model config differs)");
    const auto count = detail::read_le<std::uint32_t>(is);
    if (count != params.size())
        throw CheckpointError("checkpoint: entry count " + std::to_string(count) + " != " +
                              std::to_string(params.size()));

    std::sort(params.begin(), params.end(),
              [](const ParamRef& a, const ParamRef& b) { return a.name < b.name; });
    for (auto& p : params) {
        const auto name_len = detail::read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is || name != p.name)
            throw CheckpointError("checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
        const auto ndim = detail::read_le<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(detail::read_le<std::uint64_t>(is));
        if (shape != p.tensor.shape)
            throw CheckpointError("checkpoint: shape mismatch for '" + p.name + "'");
        is.read(reinterpret_cast<char*>(p.tensor.data->data()),
                static_cast<std::streamsize>(p.tensor.data->size() * sizeof(double)));
        if (!is) throw CheckpointError("checkpoint: truncated payload for '" + p.name + "'");
    }
}

inline std::uint64_t read_checkpoint_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GRMC", 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    detail::read_le<std::uint32_t>(is);
    return detail::read_le<std::uint64_t>(is);
}

}  // namespace grm
