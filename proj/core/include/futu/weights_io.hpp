#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "futu/tensor.hpp"

namespace futu {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Container format for model snapshots (".futw"): magic "FUTU", format
// version, tensor count, then per tensor a UTF-8 name, dims as u32, and the
// raw float32 payload. All integers and floats are little-endian. Round
// trips are bit-exact.
inline constexpr char kWeightsMagic[4] = {'F', 'U', 'T', 'U'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// Writes atomically (temp file + rename). Names must be unique.
void save_weights(const std::vector<NamedTensor>& entries, const std::filesystem::path& path);

// Rejects unknown magic, unsupported versions, and truncated or oversized
// payloads with distinct IoError messages.
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

} // namespace futu
