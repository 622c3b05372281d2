#pragma once

#include <filesystem>

#include "ofl/tensor.hpp"

namespace ofl {

// OTNS v1: magic "OTNS", version 1, dtype 0 (f32 LE), ndim (1-4),
// reserved 0, then ndim u32 LE extents, then row-major f32 LE payload.

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

/// Extents only, without reading the payload.
std::vector<int> read_tensor_dims(const std::filesystem::path& path);

}  // namespace ofl
