#include "defgen/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "defgen/rng.hpp"
#include "json.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// tokenizer
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.push_back(std::string(1, static_cast<char>(c)));
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Entry
// ---------------------------------------------------------------------------

void Entry::validate() const {
  const int64_t k = static_cast<int64_t>(context_tokens.size());
  if (!(0 <= span_begin && span_begin < span_end && span_end <= k)) {
    throw MalformedRecord("entry span out of range");
  }
  if (span_end - span_begin != static_cast<int64_t>(word_tokens.size())) {
    throw MalformedRecord("entry span length does not match word");
  }
  for (int64_t i = span_begin; i < span_end; ++i) {
    if (context_tokens[static_cast<size_t>(i)] != word_tokens[static_cast<size_t>(i - span_begin)]) {
      throw MalformedRecord("entry span does not reproduce the word tokens");
    }
  }
  if (definition_tokens.empty()) throw MalformedRecord("entry has an empty definition");
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

DataFormat parse_format(const std::string& name) {
  if (name == "tsv") return DataFormat::tsv;
  if (name == "jsonl") return DataFormat::jsonl;
  throw MalformedRecord("unknown dataset format: " + name);
}

namespace {

// first occurrence of `needle` as a contiguous token run; -1 if absent
int64_t find_span(const std::vector<std::string>& haystack,
                  const std::vector<std::string>& needle, int64_t from = 0) {
  if (needle.empty() || haystack.size() < needle.size()) return -1;
  const int64_t last = static_cast<int64_t>(haystack.size() - needle.size());
  for (int64_t i = from; i <= last; ++i) {
    bool hit = true;
    for (size_t j = 0; j < needle.size(); ++j) {
      if (haystack[static_cast<size_t>(i) + j] != needle[j]) {
        hit = false;
        break;
      }
    }
    if (hit) return i;
  }
  return -1;
}

struct RawRecord {
  std::vector<std::string> word;
  std::vector<std::string> context;
  std::vector<std::string> definition;
  std::optional<std::pair<int64_t, int64_t>> span;
};

Entry finish_record(RawRecord&& raw, int64_t line_no, std::vector<std::string>* warnings) {
  Entry e;
  e.word_tokens = std::move(raw.word);
  e.context_tokens = std::move(raw.context);
  e.definition_tokens = std::move(raw.definition);
  if (e.word_tokens.empty()) {
    throw MalformedRecord("line " + std::to_string(line_no) + ": empty word");
  }
  if (e.definition_tokens.empty()) {
    throw MalformedRecord("line " + std::to_string(line_no) + ": empty definition");
  }
  if (raw.span) {
    e.span_begin = raw.span->first;
    e.span_end = raw.span->second;
    try {
      e.validate();
    } catch (const MalformedRecord& m) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": " + m.what());
    }
  } else {
    const int64_t at = find_span(e.context_tokens, e.word_tokens);
    if (at < 0) {
      throw TargetNotFound("line " + std::to_string(line_no) +
                           ": target word not found in context");
    }
    e.span_begin = at;
    e.span_end = at + static_cast<int64_t>(e.word_tokens.size());
    if (warnings && find_span(e.context_tokens, e.word_tokens, at + 1) >= 0) {
      warnings->push_back("line " + std::to_string(line_no) +
                          ": target occurs more than once in context; using first occurrence");
    }
  }
  return e;
}

RawRecord parse_tsv_line(const std::string& line, int64_t line_no) {
  std::vector<std::string> cols;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (cols.size() != 3) {
    throw MalformedRecord("line " + std::to_string(line_no) + ": expected 3 columns, got " +
                          std::to_string(cols.size()));
  }
  RawRecord r;
  r.word = tokenize(cols[0]);
  r.context = tokenize(cols[1]);
  r.definition = tokenize(cols[2]);
  return r;
}

RawRecord parse_jsonl_line(const std::string& line, int64_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw MalformedRecord("line " + std::to_string(line_no) + ": invalid JSON: " + ex.what());
  }
  for (const char* key : {"word", "context", "definition"}) {
    if (!j.contains(key)) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": missing key '" + key + "'");
    }
  }
  RawRecord r;
  r.word = tokenize(j["word"].get<std::string>());
  r.context = tokenize(j["context"].get<std::string>());
  r.definition = tokenize(j["definition"].get<std::string>());
  if (j.contains("span")) {
    const auto& s = j["span"];
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer()) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": span must be [i, j]");
    }
    r.span = std::make_pair(s[0].get<int64_t>(), s[1].get<int64_t>());
  }
  return r;
}

}  // namespace

LoadReport load_dataset(const std::string& path, DataFormat format, bool strict) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  LoadReport report;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      RawRecord raw = (format == DataFormat::tsv) ? parse_tsv_line(line, line_no)
                                                  : parse_jsonl_line(line, line_no);
      report.entries.push_back(finish_record(std::move(raw), line_no, &report.warnings));
    } catch (const Error& err) {
      if (strict) throw;
      report.rejections.push_back(Rejection{line_no, err.what()});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>",
                                                    "<unk>", "word:", "context:"};
  return specials;
}

Vocab::Vocab() {
  for (const auto& s : special_tokens()) add_token(s);
}

int Vocab::add_token(const std::string& tok) {
  auto [it, inserted] = token_to_id_.emplace(tok, size());
  if (inserted) id_to_token_.push_back(tok);
  return it->second;
}

int Vocab::encode(const std::string& tok) const {
  const auto it = token_to_id_.find(tok);
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& toks) const {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) ids.push_back(encode(t));
  return ids;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= size()) throw Error("Vocab::decode: id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(decode(id));
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab file: " + path);
  for (const auto& tok : id_to_token_) out << tok << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < kNumSpecials) {
      if (line != special_tokens()[static_cast<size_t>(line_no)]) {
        throw CorruptCheckpoint("vocab file specials do not match: " + path);
      }
    } else {
      v.add_token(line);
    }
    ++line_no;
  }
  if (line_no < kNumSpecials) throw CorruptCheckpoint("vocab file truncated: " + path);
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < static_cast<size_t>(kNumSpecials)) {
    throw CorruptCheckpoint("vocab token list is missing the specials");
  }
  Vocab v;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i < static_cast<size_t>(kNumSpecials)) {
      if (tokens[i] != special_tokens()[i]) {
        throw CorruptCheckpoint("vocab token list specials do not match");
      }
    } else {
      v.add_token(tokens[i]);
    }
  }
  return v;
}

Vocab build_vocab(const std::vector<Entry>& entries, int64_t min_freq, int64_t max_size) {
  if (entries.empty()) throw EmptyCorpus("build_vocab: no entries");
  if (min_freq < 1) throw Error("build_vocab: min_freq must be >= 1");

  std::map<std::string, int64_t> freq;
  for (const Entry& e : entries) {
    for (const auto& t : e.word_tokens) ++freq[t];
    for (const auto& t : e.context_tokens) ++freq[t];
    for (const auto& t : e.definition_tokens) ++freq[t];
  }

  std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  int64_t kept = 0;
  for (const auto& [tok, count] : ranked) {
    if (count < min_freq) break;
    if (max_size > 0 && kept >= max_size) break;
    v.add_token(tok);
    ++kept;
  }
  return v;
}

// ---------------------------------------------------------------------------
// splice / batching
// ---------------------------------------------------------------------------

Spliced splice(const Entry& entry, const Vocab& vocab, TargetSegment segment) {
  entry.validate();
  Spliced s;
  s.ids.push_back(Vocab::kWordPrefix);
  for (const auto& t : entry.word_tokens) s.ids.push_back(vocab.encode(t));
  s.ids.push_back(Vocab::kContextPrefix);
  const int64_t context_base = static_cast<int64_t>(s.ids.size());
  for (const auto& t : entry.context_tokens) s.ids.push_back(vocab.encode(t));

  if (segment == TargetSegment::context) {
    for (int64_t p = entry.span_begin; p < entry.span_end; ++p) {
      s.target_positions.push_back(context_base + p);
    }
  } else {
    for (int64_t p = 0; p < static_cast<int64_t>(entry.word_tokens.size()); ++p) {
      s.target_positions.push_back(1 + p);
    }
  }
  return s;
}

std::vector<Batch> make_batches(const std::vector<Entry>& entries, const Vocab& vocab,
                                int64_t batch_size, std::optional<uint64_t> shuffle_seed,
                                TargetSegment segment) {
  if (batch_size < 1) throw Error("make_batches: batch_size must be >= 1");

  std::vector<int64_t> order(entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order);
  }

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t stop = std::min(order.size(), start + static_cast<size_t>(batch_size));
    const int64_t n = static_cast<int64_t>(stop - start);

    std::vector<Spliced> spliced;
    std::vector<std::vector<int>> defs;
    int64_t enc_len = 0, dec_len = 0;
    for (size_t k = start; k < stop; ++k) {
      const Entry& e = entries[static_cast<size_t>(order[k])];
      spliced.push_back(splice(e, vocab, segment));
      defs.push_back(vocab.encode(e.definition_tokens));
      enc_len = std::max(enc_len, static_cast<int64_t>(spliced.back().ids.size()));
      dec_len = std::max(dec_len, static_cast<int64_t>(defs.back().size()) + 1);
    }

    Batch b;
    b.n = n;
    b.enc_len = enc_len;
    b.dec_len = dec_len;
    b.encoder_ids.assign(static_cast<size_t>(n * enc_len), Vocab::kPad);
    b.encoder_pad_mask.assign(static_cast<size_t>(n * enc_len), 0);
    b.target_mask.assign(static_cast<size_t>(n * enc_len), 0);
    b.decoder_in.assign(static_cast<size_t>(n * dec_len), Vocab::kPad);
    b.decoder_gold.assign(static_cast<size_t>(n * dec_len), Vocab::kPad);
    b.decoder_pad_mask.assign(static_cast<size_t>(n * dec_len), 0);

    for (int64_t r = 0; r < n; ++r) {
      const Entry& e = entries[static_cast<size_t>(order[start + static_cast<size_t>(r)])];
      const Spliced& sp = spliced[static_cast<size_t>(r)];
      for (size_t j = 0; j < sp.ids.size(); ++j) {
        b.encoder_ids[static_cast<size_t>(r * enc_len) + j] = sp.ids[j];
        b.encoder_pad_mask[static_cast<size_t>(r * enc_len) + j] = 1;
      }
      for (int64_t p : sp.target_positions) {
        b.target_mask[static_cast<size_t>(r * enc_len + p)] = 1;
      }
      const auto& d = defs[static_cast<size_t>(r)];
      b.decoder_in[static_cast<size_t>(r * dec_len)] = Vocab::kBos;
      for (size_t j = 0; j < d.size(); ++j) {
        b.decoder_in[static_cast<size_t>(r * dec_len) + j + 1] = d[j];
        b.decoder_gold[static_cast<size_t>(r * dec_len) + j] = d[j];
      }
      b.decoder_gold[static_cast<size_t>(r * dec_len) + d.size()] = Vocab::kEos;
      for (size_t j = 0; j <= d.size(); ++j) {
        b.decoder_pad_mask[static_cast<size_t>(r * dec_len) + j] = 1;
      }
      b.word_ids.push_back(vocab.encode(e.word_tokens));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

DatasetStats dataset_stats(const std::vector<Entry>& entries) {
  DatasetStats s;
  s.entries = static_cast<int64_t>(entries.size());
  std::vector<std::vector<std::string>> targets;
  double clen = 0.0, dlen = 0.0;
  for (const Entry& e : entries) {
    clen += static_cast<double>(e.context_tokens.size());
    dlen += static_cast<double>(e.definition_tokens.size());
    targets.push_back(e.word_tokens);
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  s.distinct_targets = static_cast<int64_t>(targets.size());
  if (!entries.empty()) {
    s.mean_context_len = clen / static_cast<double>(entries.size());
    s.mean_definition_len = dlen / static_cast<double>(entries.size());
  }
  return s;
}

}  // namespace defgen
