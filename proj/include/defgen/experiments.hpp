#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "defgen/decode.hpp"
#include "defgen/training.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// ablation harness
// ---------------------------------------------------------------------------

enum class AblationAxis { pooling, lambda, batch_size, stages };

AblationAxis parse_axis(const std::string& name);
std::string axis_name(AblationAxis axis);

struct AblationArm {
  std::string name;
  bool ok = false;
  std::string error;
  double bleu = 0.0;
  double bleu_x100 = 0.0;
  double nist = 0.0;
  double nist_x100_sentence_avg = 0.0;
  double diag_mean_sim = 0.0;
  double retrieval_acc = 0.0;
  int64_t stage1_epochs = 0;
  int64_t stage2_epochs = 0;
};

struct AblationReport {
  std::string axis;
  std::vector<AblationArm> arms;

  std::string to_markdown() const;
  std::string to_json(int indent = 2) const;
};

/// Runs one ablation axis on the given splits:
///   pooling    {max, mean}           (stage 2 variants over one stage-1 run)
///   lambda     {0.0 .. 1.0 by 0.2}   (stage 2 variants over one stage-1 run)
///   batch-size {8, 16, 32, 64}       (full two-stage per arm)
///   stages     {one, two}
/// Arms that throw are marked failed and the sweep continues.
AblationReport run_ablation(AblationAxis axis, const RunConfig& base,
                            const std::vector<Entry>& train, const std::vector<Entry>& valid,
                            const std::vector<Entry>& test, const Vocab& vocab,
                            const DecodeConfig& dcfg, std::ostream* progress = nullptr);

// ---------------------------------------------------------------------------
// gradient-check harness
// ---------------------------------------------------------------------------

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
  int coords = 0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool all_pass = true;
};

/// Per-op finite-difference checks on small random inputs, then the full
/// mixed loss through a 1-layer, d=8, 2-head model with sampled
/// coordinates. Model config may be overridden (vocab_size is supplied by
/// the harness).
GradCheckReport run_gradient_checks(double per_op_tolerance = 1e-6,
                                    double full_loss_tolerance = 1e-4,
                                    int full_loss_coords = 200, uint64_t seed = 20240,
                                    const ModelConfig* model_override = nullptr);

}  // namespace defgen
