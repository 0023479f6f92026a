// Command-line front end: data preparation, staged training, generation,
// evaluation, gradient checking, and the canned ablation sweeps.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "defgen/decode.hpp"
#include "defgen/demo.hpp"
#include "defgen/experiments.hpp"
#include "defgen/serialize.hpp"
#include "defgen/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace defgen;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitInputError = 2;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string run_dir_root() {
  const char* env = std::getenv("DEFGEN_RUN_ROOT");
  return env ? env : "";
}

fs::path resolve_out(const std::string& out) {
  const std::string root = run_dir_root();
  fs::path p(out);
  if (!root.empty() && p.is_relative()) p = fs::path(root) / p;
  return p;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config,
                    uint64_t seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = nlohmann::json::parse(config.to_json());
  std::ostringstream hash;
  hash << "0x" << std::hex << config.config_hash();
  m["config_hash"] = hash.str();
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["created_utc"] = utc_timestamp();
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << m.dump(2) << "\n";
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

struct Splits {
  std::vector<Entry> train, valid, test;
  std::vector<std::string> paths;
};

Splits load_splits(const std::string& dir, const std::string& format, bool strict,
                   std::ostream* log = nullptr) {
  Splits s;
  const DataFormat fmt = parse_format(format);
  const std::string ext = format == "tsv" ? ".tsv" : ".jsonl";
  for (const char* name : {"train", "valid", "test"}) {
    const std::string path = (fs::path(dir) / (std::string(name) + ext)).string();
    if (!fs::exists(path)) throw IoError("missing dataset split: " + path);
    LoadReport rep = load_dataset(path, fmt, strict);
    if (log) {
      for (const auto& r : rep.rejections) {
        *log << "  rejected " << name << " line " << r.line << ": " << r.reason << "\n";
      }
      for (const auto& w : rep.warnings) *log << "  warning (" << name << "): " << w << "\n";
    }
    s.paths.push_back(path);
    if (std::string(name) == "train") s.train = std::move(rep.entries);
    if (std::string(name) == "valid") s.valid = std::move(rep.entries);
    if (std::string(name) == "test") s.test = std::move(rep.entries);
  }
  return s;
}

Vocab resolve_vocab(RunConfig& run, const std::vector<Entry>& train) {
  Vocab vocab = build_vocab(train, run.min_freq, run.max_vocab);
  if (run.model.vocab_size == 0) {
    run.model.vocab_size = vocab.size();
  } else if (run.model.vocab_size != vocab.size()) {
    throw ConfigMismatch("config vocab_size " + std::to_string(run.model.vocab_size) +
                         " does not match the built vocabulary (" + std::to_string(vocab.size()) +
                         "); set it to 0 to auto-fill");
  }
  return vocab;
}

void print_stats(std::ostream& out, const std::string& name, const std::vector<Entry>& entries) {
  const DatasetStats st = dataset_stats(entries);
  out << std::left << std::setw(8) << name << " entries=" << st.entries
      << " phrases=" << st.distinct_targets << " mean_context_len=" << std::fixed
      << std::setprecision(2) << st.mean_context_len
      << " mean_definition_len=" << st.mean_definition_len << "\n";
}

void write_jsonl_cache(const fs::path& path, const std::vector<Entry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cache: " + path.string());
  for (const Entry& e : entries) {
    nlohmann::json j = {{"word", join_tokens(e.word_tokens)},
                        {"context", join_tokens(e.context_tokens)},
                        {"definition", join_tokens(e.definition_tokens)},
                        {"span", {e.span_begin, e.span_end}}};
    out << j.dump() << "\n";
  }
}

void write_logs(const fs::path& dir, const TrainResult& res) {
  std::ofstream epochs(dir / "epochs.jsonl");
  for (const EpochLog& e : res.epochs) {
    nlohmann::json j = {{"epoch", e.epoch},   {"train_LG", e.train_l_g},
                        {"train_LC", e.train_l_c}, {"valid_score", e.valid_score},
                        {"lr", e.lr},         {"elapsed_s", e.elapsed_s},
                        {"improved", e.improved}};
    epochs << j.dump() << "\n";
  }
  std::ofstream steps(dir / "steps.jsonl");
  for (const StepLog& s : res.steps) {
    nlohmann::json j = {{"step", s.step},
                        {"L_G", s.l_g},
                        {"L_C", s.l_c},
                        {"L_Final", s.l_final},
                        {"diag_mean_sim", s.diag_mean_sim},
                        {"offdiag_mean_sim", s.offdiag_mean_sim},
                        {"retrieval_acc", s.retrieval_acc}};
    steps << j.dump() << "\n";
  }
}

ValidScorer make_bleu_scorer(const RunConfig& run, const Vocab& vocab,
                             const std::vector<Entry>& valid) {
  ValidScorer scorer;
  scorer.higher_is_better = true;
  const ModelConfig model = run.model;
  const TargetSegment segment = run.target_segment;
  scorer.fn = [model, segment, &vocab, &valid](const ModelParams& params) {
    DecodeConfig dcfg;
    return evaluate_split(params, model, vocab, valid, dcfg, segment).report.bleu;
  };
  return scorer;
}

RunConfig default_config(const std::string& preset, const std::string& data_dir) {
  RunConfig run;
  run.data_dir = data_dir;
  if (preset == "demo") {
    // from-scratch desk-scale training wants a higher rate than the
    // fine-tuning default
    run.optimizer.lr = 1e-3;
    run.model.n_encoder_layers = 2;
    run.model.n_decoder_layers = 2;
    run.model.d_model = 64;
    run.model.n_heads = 4;
    run.model.d_ff = 256;
    run.model.max_len = 64;
    run.stage1 = stage_preset("wordnet", 1);
    run.stage2 = stage_preset("wordnet", 2);
  } else {
    run.model.n_encoder_layers = 4;
    run.model.n_decoder_layers = 4;
    run.model.d_model = 256;
    run.model.n_heads = 8;
    run.model.d_ff = 1024;
    run.model.max_len = 128;
    run.stage1 = stage_preset(preset, 1);
    run.stage2 = stage_preset(preset, 2);
  }
  return run;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& data, const std::string& format, const std::string& out,
                int64_t min_freq, int64_t max_vocab, bool lenient, bool demo_data,
                int demo_count, uint64_t demo_seed) {
  const fs::path out_dir = resolve_out(out);
  fs::create_directories(out_dir);

  std::string data_dir = data;
  if (demo_data) {
    data_dir = (out_dir / "data").string();
    write_demo_corpus(data_dir, demo_count, demo_seed);
    std::cout << "wrote demo corpus to " << data_dir << "\n";
  }
  if (data_dir.empty()) throw IoError("prepare: either --data or --demo-data is required");

  Splits splits = load_splits(data_dir, demo_data ? "tsv" : format, !lenient, &std::cout);
  Vocab vocab = build_vocab(splits.train, min_freq, max_vocab);
  vocab.save((out_dir / "vocab.txt").string());
  write_jsonl_cache(out_dir / "train.jsonl", splits.train);
  write_jsonl_cache(out_dir / "valid.jsonl", splits.valid);
  write_jsonl_cache(out_dir / "test.jsonl", splits.test);

  std::cout << "vocabulary: " << vocab.size() << " tokens (incl. "
            << Vocab::kNumSpecials << " specials)\n";
  print_stats(std::cout, "train", splits.train);
  print_stats(std::cout, "valid", splits.valid);
  print_stats(std::cout, "test", splits.test);

  RunConfig manifest_cfg = default_config("demo", data_dir);
  manifest_cfg.min_freq = min_freq;
  manifest_cfg.max_vocab = max_vocab;
  write_manifest(out_dir, "prepare", manifest_cfg, demo_seed, splits.paths,
                 {(out_dir / "vocab.txt").string(), (out_dir / "train.jsonl").string(),
                  (out_dir / "valid.jsonl").string(), (out_dir / "test.jsonl").string()});
  return kExitOk;
}

int cmd_init_config(const std::string& out, const std::string& preset,
                    const std::string& data_dir) {
  RunConfig run = default_config(preset, data_dir);
  std::ofstream f(out);
  if (!f) throw IoError("cannot write config: " + out);
  f << run.to_json(2) << "\n";
  std::cout << "wrote " << preset << " config to " << out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& stage_name,
              const std::string& init_from, const std::string& out, int64_t seed_override) {
  RunConfig run = RunConfig::from_json_file(config_path);
  if (seed_override >= 0) run.seed = static_cast<uint64_t>(seed_override);

  const fs::path out_dir = resolve_out(out);
  fs::create_directories(out_dir);

  Splits splits = load_splits(run.data_dir, run.data_format, true, &std::cout);
  Vocab vocab = resolve_vocab(run, splits.train);
  run.model.validate();
  vocab.save((out_dir / "vocab.txt").string());

  ValidScorer bleu_scorer;
  const ValidScorer* scorer = nullptr;
  if (run.monitor == "bleu") {
    bleu_scorer = make_bleu_scorer(run, vocab, splits.valid);
    scorer = &bleu_scorer;
  } else if (run.monitor != "loss") {
    throw ConfigMismatch("unknown monitor: " + run.monitor);
  }

  TrainResult result;
  StageConfig stage_cfg;
  std::vector<std::string> inputs = {config_path};
  inputs.insert(inputs.end(), splits.paths.begin(), splits.paths.end());

  if (stage_name == "1") {
    stage_cfg = run.stage1;
    Rng init_rng(Rng::derive_seed(run.seed, "init"));
    ModelParams init = ModelParams::init(run.model, init_rng);
    result = train_stage(init, splits.train, splits.valid, vocab, stage_cfg, run, scorer);
  } else if (stage_name == "2") {
    if (init_from.empty()) {
      throw ConfigMismatch("stage 2 requires --init-from with a stage-1 checkpoint");
    }
    Checkpoint from = checkpoint_load(init_from, &run.model);
    inputs.push_back(init_from);
    stage_cfg = run.stage2;
    const AdamState* carried = run.reset_moments_stage2 ? nullptr : &from.state.opt;
    result = train_stage(from.params, splits.train, splits.valid, vocab, stage_cfg, run, scorer,
                         nullptr, carried);
  } else if (stage_name == "one-shot") {
    stage_cfg = run.stage2;
    result = train_one_stage(splits.train, splits.valid, vocab, run, scorer);
  } else {
    throw ConfigMismatch("--stage must be 1, 2, or one-shot");
  }

  for (const EpochLog& e : result.epochs) {
    std::cout << "epoch " << e.epoch << " train_LG=" << e.train_l_g
              << " train_LC=" << e.train_l_c << " valid=" << e.valid_score
              << (e.improved ? " *" : "") << "\n";
  }
  std::cout << "best epoch " << result.best_epoch << " score " << result.best_score << "\n";

  Checkpoint ckpt;
  ckpt.model_config = run.model;
  ckpt.stage_config = stage_cfg;
  ckpt.params = result.params;
  ckpt.state = result.state;
  ckpt.vocab_tokens = vocab.tokens();
  const std::string ckpt_path = (out_dir / "best.ckpt").string();
  checkpoint_save(ckpt_path, ckpt);
  write_logs(out_dir, result);
  {
    std::ofstream cfg_out(out_dir / "config.json");
    cfg_out << run.to_json(2) << "\n";
  }
  write_manifest(out_dir, "train(stage=" + stage_name + ")", run, run.seed, inputs,
                 {ckpt_path, (out_dir / "epochs.jsonl").string(),
                  (out_dir / "steps.jsonl").string()});
  std::cout << "checkpoint: " << ckpt_path << " (fingerprint 0x" << std::hex
            << tensors_fingerprint(result.params.tensors) << std::dec << ")\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& axis_str,
               const std::string& out, int64_t seed_override) {
  RunConfig run = RunConfig::from_json_file(config_path);
  if (seed_override >= 0) run.seed = static_cast<uint64_t>(seed_override);
  const fs::path out_dir = resolve_out(out);
  fs::create_directories(out_dir);

  Splits splits = load_splits(run.data_dir, run.data_format, true, &std::cout);
  Vocab vocab = resolve_vocab(run, splits.train);

  DecodeConfig dcfg;
  AblationReport report = run_ablation(parse_axis(axis_str), run, splits.train, splits.valid,
                                       splits.test, vocab, dcfg, &std::cout);
  std::cout << report.to_markdown();
  {
    std::ofstream md(out_dir / "ablation.md");
    md << report.to_markdown();
    std::ofstream js(out_dir / "ablation.json");
    js << report.to_json(2) << "\n";
  }
  write_manifest(out_dir, "ablate(axis=" + axis_str + ")", run, run.seed, {config_path},
                 {(out_dir / "ablation.md").string(), (out_dir / "ablation.json").string()});
  for (const AblationArm& arm : report.arms) {
    if (!arm.ok) std::cerr << "arm failed: " << arm.name << ": " << arm.error << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, double tolerance, double per_op_tolerance,
                  int coords, bool corrupt, uint64_t seed) {
  ModelConfig override_cfg;
  const ModelConfig* override_ptr = nullptr;
  if (!config_path.empty()) {
    override_cfg = RunConfig::from_json_file(config_path).model;
    override_ptr = &override_cfg;
  }
  debug::corrupt_matmul_backward = corrupt;
  GradCheckReport report =
      run_gradient_checks(per_op_tolerance, tolerance, coords, seed, override_ptr);
  debug::corrupt_matmul_backward = false;

  for (const GradCheckItem& item : report.items) {
    std::cout << (item.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(34) << item.name
              << " max_rel_err=" << std::scientific << std::setprecision(3) << item.max_rel_err
              << " (tol " << item.tolerance << ", " << item.coords << " coords)\n"
              << std::defaultfloat;
  }
  std::cout << (report.all_pass ? "gradient checks passed" : "gradient checks FAILED") << "\n";
  return report.all_pass ? kExitOk : kExitCheckFailure;
}

int cmd_generate(const std::string& ckpt_path, const std::string& data, int64_t beam,
                 int64_t max_len, const std::string& out) {
  Checkpoint ckpt = checkpoint_load(ckpt_path);
  Vocab vocab = Vocab::from_tokens(ckpt.vocab_tokens);
  DecodeConfig dcfg;
  if (beam > 1) {
    dcfg.strategy = DecodeConfig::Strategy::beam;
    dcfg.beam_size = beam;
  }
  dcfg.max_decode_len = max_len;

  std::ostream* os = &std::cout;
  std::ofstream file_out;
  if (!out.empty()) {
    file_out.open(out);
    if (!file_out) throw IoError("cannot write output: " + out);
    os = &file_out;
  }

  auto emit = [&](const Entry& e) {
    GenerationResult gen = generate(ckpt.params, ckpt.model_config, vocab, e, dcfg);
    *os << join_tokens(vocab.decode(gen.ids)) << "\n";
  };

  if (data == "-") {
    // stdin mode: word<TAB>context per line
    std::string line;
    int64_t line_no = 0;
    while (std::getline(std::cin, line)) {
      ++line_no;
      if (line.empty()) continue;
      const size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw MalformedRecord("stdin line " + std::to_string(line_no) +
                              ": expected word<TAB>context");
      }
      Entry e;
      e.word_tokens = tokenize(line.substr(0, tab));
      std::string context = line.substr(tab + 1);
      const size_t tab2 = context.find('\t');
      if (tab2 != std::string::npos) context = context.substr(0, tab2);
      e.context_tokens = tokenize(context);
      e.definition_tokens = {"<unused>"};
      bool found = false;
      for (size_t j = 0; j + e.word_tokens.size() <= e.context_tokens.size() && !found; ++j) {
        bool hit = true;
        for (size_t w = 0; w < e.word_tokens.size(); ++w) {
          if (e.context_tokens[j + w] != e.word_tokens[w]) {
            hit = false;
            break;
          }
        }
        if (hit) {
          e.span_begin = static_cast<int64_t>(j);
          e.span_end = static_cast<int64_t>(j + e.word_tokens.size());
          found = true;
        }
      }
      if (!found) {
        throw TargetNotFound("stdin line " + std::to_string(line_no) +
                             ": word not found in context");
      }
      emit(e);
    }
  } else {
    const DataFormat fmt =
        data.size() > 6 && data.substr(data.size() - 6) == ".jsonl" ? DataFormat::jsonl
                                                                     : DataFormat::tsv;
    LoadReport rep = load_dataset(data, fmt, true);
    for (const Entry& e : rep.entries) emit(e);
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data, int64_t beam,
                 const std::string& out) {
  Checkpoint ckpt = checkpoint_load(ckpt_path);
  Vocab vocab = Vocab::from_tokens(ckpt.vocab_tokens);
  const fs::path out_dir = resolve_out(out);
  fs::create_directories(out_dir);

  const DataFormat fmt = data.size() > 6 && data.substr(data.size() - 6) == ".jsonl"
                             ? DataFormat::jsonl
                             : DataFormat::tsv;
  LoadReport rep = load_dataset(data, fmt, true);

  DecodeConfig dcfg;
  if (beam > 1) {
    dcfg.strategy = DecodeConfig::Strategy::beam;
    dcfg.beam_size = beam;
  }
  SplitEvaluation ev =
      evaluate_split(ckpt.params, ckpt.model_config, vocab, rep.entries, dcfg,
                     TargetSegment::context, (out_dir / "samples.tsv").string());
  {
    std::ofstream report(out_dir / "report.json");
    report << ev.report.to_json(2) << "\n";
  }
  std::cout << "BLEU " << std::fixed << std::setprecision(2) << ev.report.bleu_x100 << "  NIST "
            << std::setprecision(3) << ev.report.nist << "  (NIST x100 sent avg "
            << std::setprecision(2) << ev.report.nist_x100_sentence_avg << ")\n";
  std::cout << "report: " << (out_dir / "report.json").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive definition-generation trainer"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "tokenize a dataset, build the vocabulary");
  std::string p_data, p_format = "tsv", p_out = "prepared";
  int64_t p_min_freq = 1, p_max_vocab = 0;
  bool p_lenient = false, p_demo = false;
  int p_demo_count = 50;
  uint64_t p_demo_seed = 2024;
  prepare->add_option("--data", p_data, "directory with train/valid/test splits");
  prepare->add_option("--format", p_format, "tsv or jsonl")
      ->check(CLI::IsMember({"tsv", "jsonl"}));
  prepare->add_option("--out", p_out, "output directory")->required();
  prepare->add_option("--min-freq", p_min_freq, "minimum token frequency");
  prepare->add_option("--max-vocab", p_max_vocab, "vocabulary cap (0 = unlimited)");
  prepare->add_flag("--lenient", p_lenient, "record and skip malformed records");
  prepare->add_flag("--demo-data", p_demo, "generate the synthetic demo corpus first");
  prepare->add_option("--demo-count", p_demo_count, "demo corpus size");
  prepare->add_option("--demo-seed", p_demo_seed, "demo corpus seed");

  // init-config
  auto* initcfg = app.add_subcommand("init-config", "write a run-config JSON template");
  std::string i_out = "config.json", i_preset = "demo", i_data;
  initcfg->add_option("--out", i_out, "config path to write");
  initcfg->add_option("--preset", i_preset, "demo, wordnet, oxford, or urban")
      ->check(CLI::IsMember({"demo", "wordnet", "oxford", "urban"}));
  initcfg->add_option("--data", i_data, "dataset directory to reference");

  // train
  auto* train = app.add_subcommand("train", "run one training stage");
  std::string t_config, t_stage = "1", t_init_from, t_out = "run";
  int64_t t_seed = -1;
  train->add_option("--config", t_config, "run config JSON")->required();
  train->add_option("--stage", t_stage, "1, 2, or one-shot")
      ->check(CLI::IsMember({"1", "2", "one-shot"}));
  train->add_option("--init-from", t_init_from, "stage-1 checkpoint for stage 2");
  train->add_option("--out", t_out, "run directory")->required();
  train->add_option("--seed", t_seed, "override the config seed");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run a canned ablation sweep");
  std::string a_config, a_axis, a_out = "ablation";
  int64_t a_seed = -1;
  ablate->add_option("--config", a_config, "run config JSON")->required();
  ablate->add_option("--axis", a_axis, "pooling, lambda, batch-size, or stages")
      ->required()
      ->check(CLI::IsMember({"pooling", "lambda", "batch-size", "stages"}));
  ablate->add_option("--out", a_out, "output directory")->required();
  ablate->add_option("--seed", a_seed, "override the config seed");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string g_config;
  double g_tol = 1e-4, g_op_tol = 1e-6;
  int g_coords = 200;
  bool g_corrupt = false;
  uint64_t g_seed = 20240;
  gradcheck->add_option("--config", g_config, "optional run config (model section is used)");
  gradcheck->add_option("--tolerance", g_tol, "full-loss tolerance");
  gradcheck->add_option("--per-op-tolerance", g_op_tol, "per-op tolerance");
  gradcheck->add_option("--coords", g_coords, "sampled coordinates for the full loss");
  gradcheck->add_flag("--corrupt-matmul-grad", g_corrupt,
                      "deliberately corrupt matmul's backward (detector sanity)");
  gradcheck->add_option("--seed", g_seed, "sampling seed");

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "decode definitions");
  std::string ge_ckpt, ge_data, ge_out;
  int64_t ge_beam = 1, ge_max_len = 32;
  generate_cmd->add_option("--checkpoint", ge_ckpt, "trained checkpoint")->required();
  generate_cmd->add_option("--data", ge_data, "dataset file, or - for stdin word<TAB>context")
      ->required();
  generate_cmd->add_option("--beam", ge_beam, "beam size (1 = greedy)");
  generate_cmd->add_option("--max-len", ge_max_len, "decode length cap");
  generate_cmd->add_option("--out", ge_out, "write definitions here instead of stdout");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "decode a split and score BLEU/NIST");
  std::string e_ckpt, e_data, e_out = "eval";
  int64_t e_beam = 1;
  evaluate_cmd->add_option("--checkpoint", e_ckpt, "trained checkpoint")->required();
  evaluate_cmd->add_option("--data", e_data, "dataset file to evaluate")->required();
  evaluate_cmd->add_option("--beam", e_beam, "beam size (1 = greedy)");
  evaluate_cmd->add_option("--out", e_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      return cmd_prepare(p_data, p_format, p_out, p_min_freq, p_max_vocab, p_lenient, p_demo,
                         p_demo_count, p_demo_seed);
    }
    if (initcfg->parsed()) return cmd_init_config(i_out, i_preset, i_data);
    if (train->parsed()) return cmd_train(t_config, t_stage, t_init_from, t_out, t_seed);
    if (ablate->parsed()) return cmd_ablate(a_config, a_axis, a_out, a_seed);
    if (gradcheck->parsed()) {
      return cmd_gradcheck(g_config, g_tol, g_op_tol, g_coords, g_corrupt, g_seed);
    }
    if (generate_cmd->parsed()) return cmd_generate(ge_ckpt, ge_data, ge_beam, ge_max_len, ge_out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(e_ckpt, e_data, e_beam, e_out);
  } catch (const DivergedLoss& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitCheckFailure;
  } catch (const NonFiniteGradient& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitCheckFailure;
  } catch (const NonFiniteValue& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitCheckFailure;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitOk;
}
