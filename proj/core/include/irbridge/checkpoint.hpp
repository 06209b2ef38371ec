#pragma once

// Binary model checkpoints (little-endian):
//   "S2VY" | u32 version | u32 length + JSON metadata |
//   { u32 name length | name | u32 rank | u64 dims[rank] | f32 data } ...
// Tensors are sorted by name and run to end of file.

#include <iosfwd>
#include <optional>
#include <string>

#include "irbridge/training.hpp"

namespace irbridge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const ModelBundle& bundle);
void save_checkpoint(const std::string& path, const ModelBundle& bundle);

// Throws kCheckpointFormat on malformed input and kVocabMismatch when
// `expected_vocab_hash` is given and differs from the stored hash.
ModelBundle load_checkpoint(std::istream& in,
                            const std::optional<std::string>& expected_vocab_hash = std::nullopt);
ModelBundle load_checkpoint(const std::string& path,
                            const std::optional<std::string>& expected_vocab_hash = std::nullopt);

// SHA-256 of the serialized bundle; identifies a model in scan output.
std::string model_hash(const ModelBundle& bundle);

}  // namespace irbridge
