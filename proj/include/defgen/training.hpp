#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defgen/data.hpp"
#include "defgen/model.hpp"
#include "defgen/objectives.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 3e-4;  // the paper's initial learning rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

struct AdamState {
  int64_t step = 0;
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments

  static AdamState init(const ModelParams& params);
};

/// Scales gradients in place so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 is a no-op.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm);

/// Standard Adam with bias correction. Throws NonFiniteGradient.
void adam_step(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

enum class StageKind { one, two };

struct StageConfig {
  StageKind stage = StageKind::one;
  int64_t max_epoch = 50;
  int64_t early_stop_patience = 10;
  std::optional<PoolingKind> pooling;  // unset for stage one
  double lambda = 0.0;

  void validate() const;
};

/// Appendix-style presets: dataset in {wordnet, oxford, urban}.
StageConfig stage_preset(const std::string& dataset, int stage);

struct TrainState {
  int64_t epoch = 0;
  double best_score = 0.0;
  int64_t epochs_since_improvement = 0;
  AdamState opt;
  uint64_t master_seed = 0;
};

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  ModelConfig model;
  ContrastiveConfig contrastive;
  AdamConfig optimizer;
  StageConfig stage1;
  StageConfig stage2;
  int64_t batch_size = 16;  // the paper's default
  uint64_t seed = 1;
  std::string monitor = "loss";  // or "bleu"
  bool reset_moments_stage2 = true;
  TargetSegment target_segment = TargetSegment::context;

  // data section
  std::string data_dir;
  std::string data_format = "tsv";
  int64_t min_freq = 1;
  int64_t max_vocab = 0;

  std::string to_json(int indent = -1) const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  uint64_t config_hash() const;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int64_t epoch = 0;
  double train_l_g = 0.0;
  double train_l_c = 0.0;
  double valid_score = 0.0;
  double lr = 0.0;
  double elapsed_s = 0.0;
  bool improved = false;
};

struct StepLog {
  int64_t step = 0;
  double l_g = 0.0;
  double l_c = 0.0;
  double l_final = 0.0;
  double diag_mean_sim = 0.0;
  double offdiag_mean_sim = 0.0;
  double retrieval_acc = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  TrainState state;
  int64_t best_epoch = -1;
  double best_score = 0.0;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
};

/// Optional external validation criterion (e.g. corpus BLEU). Default is
/// validation loss, lower better.
struct ValidScorer {
  std::function<double(const ModelParams&)> fn;
  bool higher_is_better = false;
};

using EpochCallback = std::function<void(int64_t epoch, const ModelParams& params)>;

/// Runs one training stage: epochs of shuffled batches, per-epoch
/// validation, early stopping by patience, best-checkpoint return.
/// Non-finite losses or gradients surface as DivergedLoss.
TrainResult train_stage(const ModelParams& init_params, const std::vector<Entry>& train_entries,
                        const std::vector<Entry>& valid_entries, const Vocab& vocab,
                        const StageConfig& stage, const RunConfig& run,
                        const ValidScorer* scorer = nullptr,
                        const EpochCallback& on_epoch = nullptr,
                        const AdamState* carried_moments = nullptr);

/// One-stage ablation: combined loss from random initialization.
TrainResult train_one_stage(const std::vector<Entry>& train_entries,
                            const std::vector<Entry>& valid_entries, const Vocab& vocab,
                            const RunConfig& run, const ValidScorer* scorer = nullptr);

/// Forward-only mean validation loss under the stage's objective.
double validation_loss(const ModelParams& params, const std::vector<Entry>& entries,
                       const Vocab& vocab, const StageConfig& stage, const RunConfig& run);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelConfig model_config;
  StageConfig stage_config;
  ModelParams params;
  TrainState state;
  std::vector<std::string> vocab_tokens;  // full id->token list
};

/// Binary checkpoint embedding the model and stage configs; loading under
/// a conflicting expected config refuses with ConfigMismatch.
void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path, const ModelConfig* expect_model = nullptr);

}  // namespace defgen
