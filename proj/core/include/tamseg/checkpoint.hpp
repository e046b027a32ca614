#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "tamseg/params.hpp"

namespace tamseg {

// A checkpoint is a directory holding manifest.json and one TNSR file per
// named tensor. The manifest carries the owning model's config as JSON plus,
// per tensor, its file, shape, dtype and FNV-1a digest.

void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params,
                     std::string_view config_json);

/// The "config" object of a checkpoint manifest, as JSON text.
std::string read_checkpoint_config(const std::filesystem::path& dir);

/// Copies every tensor of `params` from the checkpoint in place. Names,
/// shapes and digests must match; values are converted to each target's dtype.
void load_checkpoint_tensors(const std::filesystem::path& dir, const ParameterSet& params);

/// Overwrites dst's values with src's (same shape, any dtype).
void copy_values(const Tensor& dst, const Tensor& src);

}  // namespace tamseg
