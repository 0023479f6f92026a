#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defgen/errors.hpp"

namespace defgen {

/// Whitespace tokenizer with lowercasing; punctuation characters become
/// single-character tokens. Bytes >= 0x80 are kept inside tokens so UTF-8
/// sequences survive intact.
std::vector<std::string> tokenize(const std::string& text);

/// One dictionary record: target word/phrase W, usage context C, and the
/// definition D, with the half-open token span of W inside C.
struct Entry {
  std::vector<std::string> word_tokens;
  std::vector<std::string> context_tokens;
  std::vector<std::string> definition_tokens;
  int64_t span_begin = -1;  // [begin, end) into context_tokens
  int64_t span_end = -1;

  /// Throws MalformedRecord unless the span invariants hold.
  void validate() const;
};

enum class DataFormat { tsv, jsonl };

DataFormat parse_format(const std::string& name);

struct Rejection {
  int64_t line = 0;
  std::string reason;
};

struct LoadReport {
  std::vector<Entry> entries;
  std::vector<Rejection> rejections;      // only populated when strict=false
  std::vector<std::string> warnings;      // e.g. multiple target occurrences
};

/// Reads a dataset file. With strict=true the first bad record throws
/// (MalformedRecord / TargetNotFound, message carries the line number);
/// with strict=false bad records are recorded and skipped.
LoadReport load_dataset(const std::string& path, DataFormat format, bool strict = true);

/// Token/id bijection with fixed leading specials. PAD is always id 0.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kWordPrefix = 4;     // literal "word:" prompt token
  static constexpr int kContextPrefix = 5;  // literal "context:" prompt token
  static constexpr int kNumSpecials = 6;

  static const std::vector<std::string>& special_tokens();

  Vocab();

  int add_token(const std::string& tok);      // appends; returns id
  int encode(const std::string& tok) const;   // unknown -> kUnk
  std::vector<int> encode(const std::vector<std::string>& toks) const;
  const std::string& decode(int id) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  const std::vector<std::string>& tokens() const { return id_to_token_; }
  /// Rebuilds a vocab from its full token list (specials included).
  static Vocab from_tokens(const std::vector<std::string>& tokens);

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Frequency-ranked vocabulary over all entry token streams. Ties break
/// lexicographically; tokens below min_freq or past max_size are dropped
/// (they encode as UNK). max_size counts non-special tokens; 0 = unlimited.
Vocab build_vocab(const std::vector<Entry>& entries, int64_t min_freq = 1, int64_t max_size = 0);

/// Which copy of the target word the model treats as H_target. The spliced
/// input contains the word twice; the contextual occurrence carries the
/// sense being defined, so it is the default.
enum class TargetSegment { context, word };

struct Spliced {
  std::vector<int> ids;                  // [word:] W [context:] C
  std::vector<int64_t> target_positions; // contiguous run inside ids
};

Spliced splice(const Entry& entry, const Vocab& vocab,
               TargetSegment segment = TargetSegment::context);

/// Padded training batch. Mask conventions: *_pad_mask is true at REAL
/// (non-pad) positions; target_mask is true exactly at the target word's
/// spliced positions.
struct Batch {
  int64_t n = 0;        // samples
  int64_t enc_len = 0;  // S, padded encoder length
  int64_t dec_len = 0;  // T', padded decoder length (BOS-prefixed)

  std::vector<int> encoder_ids;           // n x enc_len
  std::vector<uint8_t> encoder_pad_mask;  // n x enc_len
  std::vector<uint8_t> target_mask;       // n x enc_len
  std::vector<int> decoder_in;            // n x dec_len, BOS-prefixed
  std::vector<int> decoder_gold;          // n x dec_len, EOS-suffixed
  std::vector<uint8_t> decoder_pad_mask;  // n x dec_len

  /// Target word ids per sample, for in-batch duplicate diagnostics.
  std::vector<std::vector<int>> word_ids;
};

/// Seed-deterministic batching; the final partial batch is kept. No seed
/// means file order.
std::vector<Batch> make_batches(const std::vector<Entry>& entries, const Vocab& vocab,
                                int64_t batch_size, std::optional<uint64_t> shuffle_seed,
                                TargetSegment segment = TargetSegment::context);

struct DatasetStats {
  int64_t entries = 0;
  int64_t distinct_targets = 0;
  double mean_context_len = 0.0;
  double mean_definition_len = 0.0;
};

DatasetStats dataset_stats(const std::vector<Entry>& entries);

}  // namespace defgen
