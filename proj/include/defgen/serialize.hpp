#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "defgen/tensor.hpp"

namespace defgen {

/// Named-tensor container format (checkpoints, optimizer moments):
///
///   magic "DGT1"
///   u64 meta_len, meta bytes        (UTF-8 JSON)
///   u32 tensor_count
///   per tensor, in name order:
///     u32 name_len, name bytes
///     u32 rank, u64 dims[rank]
///     f64 values[numel]             (little-endian IEEE-754)
///   u64 FNV-1a checksum of everything above
///
/// Map iteration fixes the tensor order, so save -> load -> save is
/// byte-identical.
void write_named_tensors(std::ostream& out, const std::string& meta_json,
                         const std::map<std::string, Tensor>& tensors);

struct NamedTensorFile {
  std::string meta_json;
  std::map<std::string, Tensor> tensors;
};

/// Throws CorruptCheckpoint on bad magic, truncation, or checksum mismatch.
NamedTensorFile read_named_tensors(std::istream& in);

void write_named_tensors_file(const std::string& path, const std::string& meta_json,
                              const std::map<std::string, Tensor>& tensors);
NamedTensorFile read_named_tensors_file(const std::string& path);

/// FNV-1a over the raw value bytes of every tensor, in name order.
uint64_t tensors_fingerprint(const std::map<std::string, Tensor>& tensors);

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace defgen
