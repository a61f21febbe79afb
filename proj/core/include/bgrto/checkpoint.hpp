#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "bgrto/tensor.hpp"

namespace bgrto::checkpoint {

inline constexpr char kMagic[6] = {'B', 'G', 'R', 'T', 'O', '\0'};
inline constexpr std::uint32_t kVersion = 1;

/// Metadata carries at least "mode", "epoch", "seed" and "config_hash".
/// Tensor names keep their network prefix ("policy/..." or "tool/...").
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  NamedParams tensors;
};

/// Layout: magic, u32 LE version, u32 LE metadata length, metadata UTF-8
/// JSON (with an added "tensor_count"), then per tensor: u32 LE name
/// length, name, u32 LE rank, u64 LE dims, f64 LE values.
std::string encode(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version, truncation or trailing bytes.
Checkpoint decode(std::string_view bytes);

/// Atomic write through a temporary file and rename.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws FormatError when `expected_hash` is non-empty and differs from the
/// stored "config_hash".
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash = {});

/// Tensors whose names start with `prefix` (for example "policy/").
NamedParams subset(const NamedParams& tensors, const std::string& prefix);

/// Bitwise equality of metadata text and every tensor.
bool bit_equal(const Checkpoint& a, const Checkpoint& b) noexcept;

}  // namespace bgrto::checkpoint
