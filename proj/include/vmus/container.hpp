#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmus/error.hpp"
#include "vmus/tensor.hpp"

namespace vmus {

// Binary container shared by checkpoints and dataset clip files.
//
//   "VMUS"            4 bytes magic
//   u32               format version
//   u64 + bytes       config JSON text
//   u64               array count
//   per array:
//     u32 + bytes     name
//     u8              flags (bit 0: trainable)
//     u32             rank
//     u64 * rank      extents
//     f64 * n         row-major data
//
// All integers and doubles are little-endian.
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedArray {
    std::string name;
    Tensor value;
    bool trainable = false;
};

struct Container {
    std::string config_json;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
    const NamedArray& get(const std::string& name) const;
};

class ContainerError : public Error {
public:
    enum class Kind { io, bad_magic, bad_version, truncated, corrupt, shape_mismatch, missing_array };

    ContainerError(Kind kind, const std::string& message, std::string array = {})
        : Error(message), kind_(kind), array_(std::move(array)) {}

    Kind kind() const noexcept { return kind_; }
    // Name of the offending array, when there is one.
    const std::string& array() const noexcept { return array_; }

private:
    Kind kind_;
    std::string array_;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace vmus
