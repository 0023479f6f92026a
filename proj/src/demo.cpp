#include "defgen/demo.hpp"

#include <filesystem>
#include <fstream>

#include "defgen/rng.hpp"

namespace defgen {

namespace {

const std::vector<std::string> kWords = {
    "brill",   "fenk",    "marlo",   "tover",  "quist",   "halder",  "nimbet", "sorrel",
    "dapple",  "kelter",  "mirven",  "ostler", "pindle",  "ruckus",  "tamber", "umbral",
    "vantage", "wickern", "yonder",  "zephel", "ardent",  "bosker",  "cindle", "drovel",
    "emberly", "flasket", "gimble",  "hobnail", "inglet",  "jasper",  "kestrel", "lumen",
    "mantle",  "noggin",  "orchel",  "pommel", "quiver",  "rundle",  "sickle",  "tassel",
    "urchin",  "vesper",  "wimple",  "yarrow",
    // two-token phrases
    "boo bear", "night owl", "moss gate", "tide mark", "wind vane", "salt pan"};

const std::vector<std::string> kKinds = {"tool",     "fruit",  "animal", "garment", "vessel",
                                         "dwelling", "signal", "drink",  "game",    "path"};
const std::vector<std::string> kAdjs = {"small", "heavy",   "bright", "quiet", "striped",
                                        "hollow", "ancient", "gentle", "sour",  "woven"};
const std::vector<std::string> kUses = {"carrying", "cutting", "warming", "guiding", "storing",
                                        "mending",  "trading", "hunting", "rowing",  "counting"};
const std::vector<std::string> kObjs = {"water",  "grain",  "wool",    "timber", "fish",
                                        "copper", "apples", "letters", "stones", "honey"};

const std::vector<std::string> kContextTemplates = {
    "the % sat by the door",          "a % was found near the river",
    "they kept the % in the shed",    "everyone admired the % at the fair",
    "no one expected the % to appear"};

std::string expand_template(const std::string& tpl, const std::string& word) {
  std::string out;
  for (char c : tpl) {
    if (c == '%') {
      out += word;
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<Entry> make_demo_entries(int count, uint64_t seed) {
  if (count < 1 || count > static_cast<int>(kWords.size())) {
    throw Error("make_demo_entries: count must lie in [1, " + std::to_string(kWords.size()) + "]");
  }
  // the seed permutes which definition pattern each word receives
  std::vector<int> def_index(kWords.size());
  for (size_t i = 0; i < def_index.size(); ++i) def_index[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(def_index);

  std::vector<Entry> entries;
  for (int i = 0; i < count; ++i) {
    const std::string& word = kWords[static_cast<size_t>(i)];
    const int k = def_index[static_cast<size_t>(i)];
    // index arithmetic keeps every (adj, kind, use, obj) tuple distinct
    const std::string definition = "a " + kAdjs[static_cast<size_t>(k % 10)] + " " +
                                   kKinds[static_cast<size_t>((k / 10 + k) % 10)] + " for " +
                                   kUses[static_cast<size_t>((k * 3) % 10)] + " " +
                                   kObjs[static_cast<size_t>((k * 7) % 10)];
    const std::string context =
        expand_template(kContextTemplates[static_cast<size_t>(i % 5)], word);

    Entry e;
    e.word_tokens = tokenize(word);
    e.context_tokens = tokenize(context);
    e.definition_tokens = tokenize(definition);
    const auto begin = [&] {
      for (size_t j = 0; j + e.word_tokens.size() <= e.context_tokens.size(); ++j) {
        bool hit = true;
        for (size_t w = 0; w < e.word_tokens.size(); ++w) {
          if (e.context_tokens[j + w] != e.word_tokens[w]) {
            hit = false;
            break;
          }
        }
        if (hit) return static_cast<int64_t>(j);
      }
      throw Error("demo template lost its target word");
    }();
    e.span_begin = begin;
    e.span_end = begin + static_cast<int64_t>(e.word_tokens.size());
    e.validate();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_demo_corpus(const std::string& dir, int count, uint64_t seed) {
  std::filesystem::create_directories(dir);
  const auto entries = make_demo_entries(count, seed);
  auto join = [](const std::vector<std::string>& toks) {
    std::string s;
    for (size_t i = 0; i < toks.size(); ++i) {
      if (i) s += ' ';
      s += toks[i];
    }
    return s;
  };
  for (const char* split : {"train.tsv", "valid.tsv", "test.tsv"}) {
    std::ofstream out(std::filesystem::path(dir) / split);
    if (!out) throw IoError(std::string("cannot write demo split: ") + split);
    for (const Entry& e : entries) {
      out << join(e.word_tokens) << '\t' << join(e.context_tokens) << '\t'
          << join(e.definition_tokens) << '\n';
    }
  }
}

}  // namespace defgen
