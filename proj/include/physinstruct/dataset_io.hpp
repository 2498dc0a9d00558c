#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "physinstruct/pde_data.hpp"

namespace physinstruct {

/// Samples of one kind on one grid. `extra_channels` counts channels appended after
/// the kind's own (e.g. an observation mask in conditional pair files).
struct Dataset {
  PdeKind kind = PdeKind::poisson;
  std::uint64_t seed = 0;
  Index extra_channels = 0;
  std::vector<FieldSample> samples;
};

/// File layout: one JSON header line
///   {"checksum": "<fnv1a64 of the body dump>", "body": {format, version, kind, height,
///    width, channels, count, seed, extra_channels}}
/// followed by little-endian float32 values, samples contiguous, channels-major.
void write_dataset(const std::filesystem::path& path, const Dataset& data);

/// Reads a whole file or throws FormatError; nothing is returned on failure.
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace physinstruct
