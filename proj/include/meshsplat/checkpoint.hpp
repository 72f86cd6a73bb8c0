#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "meshsplat/gaussians.hpp"

namespace meshsplat {

/// Scene plus optimizer bookkeeping.
///
/// File layout (little-endian):
///   char[8]  magic "MSPLCKPT"
///   u32      version (1)
///   u32      stage (0 adhered, 1 detached)
///   u64      vertex count, face count
///   u32      bone count
///   u64      gaussian count
///   u64      iteration
///   u32      section count
///   sections: u32 name length, name bytes, u8 type (0 f64, 1 i32), u64 element
///             count, raw elements
/// Scene fields are stored under "mesh.*" and "g.*"; `extra` holds any other named
/// f64 arrays (Adam moments, gradient statistics).
struct Checkpoint {
  Scene scene;
  std::uint64_t iteration = 0;
  std::map<std::string, std::vector<double>> extra;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws Error on a bad magic, version, truncated file or inconsistent counts.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace meshsplat
