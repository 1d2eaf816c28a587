#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "nncov/network.hpp"

namespace nncov {

inline constexpr int kModelFormatVersion = 1;

/// Writes a model file: a text manifest (format version, model id, input
/// shape, layer specs, array table with byte offsets and shapes, blob size
/// and checksum) terminated by an `end` line, followed by the parameters as
/// raw little-endian float64.
void save_model(const Network& net, const std::filesystem::path& path);

/// Inverse of save_model; the round trip is bit-exact. Throws FormatError
/// on a version mismatch, checksum failure, missing array or malformed
/// manifest, IoError if the file cannot be read.
Network load_model(const std::filesystem::path& path);

std::string serialize_model(const Network& net);
Network deserialize_model(std::string_view bytes);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace nncov
