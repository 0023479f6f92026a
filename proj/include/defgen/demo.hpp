#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defgen/data.hpp"

namespace defgen {

/// Synthetic dictionary with a controlled vocabulary: distinct targets
/// (a few of them two-token phrases), templated contexts, and pairwise
/// distinct definitions. CI-sized; no downloads.
std::vector<Entry> make_demo_entries(int count = 50, uint64_t seed = 2024);

/// Writes train/valid/test TSVs into dir. The three splits are copies of
/// the same entries: the corpus exists to test memorization-regime
/// mechanics, not generalization.
void write_demo_corpus(const std::string& dir, int count = 50, uint64_t seed = 2024);

}  // namespace defgen
