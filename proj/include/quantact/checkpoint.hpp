#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "quantact/tensor.hpp"

namespace quantact {

// Flat binary parameter file:
//   "QACT1" | u32 version
//   repeated until EOF:
//     u32 name_len | name bytes | u8 dtype (0 = f32, 1 = f64) | u32 rank | u64 dims[rank] | values
// All integers and values are little-endian.
inline constexpr char checkpoint_magic[5] = {'Q', 'A', 'C', 'T', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

enum class dtype_code : std::uint8_t { f32 = 0, f64 = 1 };

struct checkpoint_entry {
    std::string name;
    shape_t shape;
    std::variant<std::vector<float>, std::vector<double>> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<checkpoint_entry>& entries);
std::vector<checkpoint_entry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<checkpoint_entry>& entries);
std::vector<checkpoint_entry> load_checkpoint(const std::filesystem::path& path);

}  // namespace quantact
