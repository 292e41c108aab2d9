#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/model.hpp"

namespace covobf {

// On-disk model directory:
//   config.json  - ModelConfig fields by name
//   vocab.json   - ordered list of token strings
//   index.json   - tensor name -> {offset, shape, dtype}
//   tensors.bin  - concatenated row-major little-endian scalars
// Model tensors are always dtype "f32". The same container is reused for the
// key-material debug dump, which stores "f64" to keep cancellation exact.

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

void write_tensor_dir(const std::string& dir, const NamedTensors& tensors,
                      const std::string& dtype);

// Preserves index order. Throws DataError on malformed or truncated files.
NamedTensors read_tensor_dir(const std::string& dir);

void save_model(const ModelWeights& w, const std::vector<std::string>& vocab,
                const std::string& dir);
ModelWeights load_model(const std::string& dir);

std::vector<std::string> load_vocab(const std::string& dir);

// FNV-1a over tensors.bin, for golden-file pinning.
uint64_t tensor_blob_checksum(const std::string& dir);

}  // namespace covobf
