// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "matforge/denoiser.hpp"
#include "matforge/nn/tensor.hpp"

namespace matforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file tensor container:
///   "MFCK" | u32 version | u64 header length | header (JSON text)
///   | u64 tensor count | per tensor: u32 name length, name, u32 rank,
///   i32 dims[rank], f64 values (little-endian).
struct TensorArchive {
    std::string header = "{}";
    std::map<std::string, nn::Tensor> tensors;
};

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

/// Weights with the network config in the header (key "net").
void save_weights(const DenoiserWeights& w, const std::filesystem::path& path);
DenoiserWeights load_weights(const std::filesystem::path& path);

} // namespace matforge
