#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppgkit/nn.hpp"

namespace ppg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    std::uint32_t version = 0;
    std::uint64_t seed = 0;
    std::string config_echo;
    std::vector<std::string> tensor_names;  // "group/p0", "group/b1", ...
};

// Little-endian binary dump of every group's parameters and buffers plus
// the trainable flags. Optimizer accumulators are per-run state and are
// not part of the file.
void save_checkpoint(const ParamStore& ps, const std::string& path,
                     const std::string& config_echo = "", std::uint64_t seed = 0);

// The store must already hold the same groups with identical tensor
// shapes; the whole file is parsed and validated before any value in the
// store changes, so a bad file never leaves a half-written store.
void load_checkpoint(ParamStore& ps, const std::string& path);

// Header and table of contents without needing a matching store.
CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace ppg
