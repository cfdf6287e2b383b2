// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tandkit/checkpoint.hpp"
#include "tandkit/config.hpp"
#include "tandkit/datagen.hpp"
#include "tandkit/evaluation.hpp"
#include "tandkit/model.hpp"

namespace tand {

enum class StageKind { Tissue = 1, DetCls = 2, Film = 3, Ablation = 4 };
std::string stage_label(StageKind kind);  // "1", "2", "3", "ablation"

struct StagePlan {
  StageKind kind = StageKind::Tissue;
  std::vector<std::string> trainable;  // param-name prefixes
  std::vector<std::string> frozen;
  float lr = 0.05f;
  float lr_film_scale = 1.0f;  // applied to params under "film."
  int epochs = 0;
  std::set<std::string> losses_active;  // subset of {tissue, det, cls, bce}
  bool film_enabled = false;
};

StagePlan make_stage_plan(StageKind kind, const TrainConfig& cfg);

/// Every param must match exactly one prefix list: trainable xor frozen.
void validate_plan(const StagePlan& plan, const std::vector<Param>& params);

struct LossRow {
  long step = 0;
  std::string stage;
  double det = 0.0, cls = 0.0, bce = 0.0, tissue = 0.0, total = 0.0;
};

/// Loss rows, rendered as `step,stage,det,cls,bce,tissue,total`.
class LossLog {
 public:
  explicit LossLog(std::optional<std::filesystem::path> path = std::nullopt) : path_(std::move(path)) {}
  void append(const LossRow& row);
  // Rewrites the CSV file atomically (no-op without a path).
  void flush() const;
  std::string to_csv() const;
  const std::vector<LossRow>& rows() const { return rows_; }
  long next_step() const { return rows_.empty() ? 0 : rows_.back().step + 1; }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<LossRow> rows_;
};

struct StageResult {
  StageKind kind = StageKind::Tissue;
  std::vector<double> epoch_loss;  // mean total loss per epoch
  double step0_loss = 0.0;
  std::vector<double> epoch_dice;  // stage 1: held-out mean Dice after each epoch
  double heldout_dice = 0.0;       // stage 1: after the last epoch
  bool identity_at_step0 = true;   // stage 3: FiLM-on forward equals FiLM-off forward before any update
  std::vector<LossRow> epoch_rows;  // per-epoch means, step = epoch index
};

/// Full-resolution tissue probabilities from the (frozen) tissue branch, no tape.
TissueProbMap tissue_probs(const TandModel& model, const Tensor& images);

/// `mc` with input_mean/input_std set to the per-channel pixel statistics of
/// `scenes` (a flat channel keeps std 1).
ModelConfig with_input_stats(ModelConfig mc, const std::vector<Scene>& scenes);

/// Stacks scene images into [N,3,H,W].
Tensor stack_images(const std::vector<Scene>& scenes, std::span<const int> indices);

/// Stage 1: tissue loss only; freezes the tissue branch afterwards.
StageResult stage1_tissue(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                          LossLog& log);
/// Stage 2: weighted det/cls/bce objective with FiLM off.
StageResult stage2_detcls(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                          LossLog& log);
/// Stage 3 (FiLM on) and the ablation arm (FiLM off) share this loop; `plan`
/// decides which.
StageResult stage3_film(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                        LossLog& log);

EvaluationReport evaluate_model(const TandModel& model, const std::vector<Scene>& scenes, bool film_enabled,
                                const TrainConfig& cfg);

/// Predictions for one image tensor [1,3,H,W]: decoded, class-assigned.
std::vector<Detection> predict(const TandModel& model, const Tensor& image, bool film_enabled,
                               const DecodeParams& decode);

/// Names of params under `prefixes` whose values differ from `reference`.
std::vector<std::string> audit_frozen(const std::vector<Param>& params, const Checkpoint& reference,
                                      const std::vector<std::string>& prefixes);

/// Builds a model from a checkpoint whose manifest carries a model config.
/// Throws ConfigError when the config block is missing or inconsistent.
TandModel model_from_checkpoint(const Checkpoint& ckpt);

struct RunOptions {
  // Reuse stage checkpoints already present in the output directory.
  bool resume = false;
  bool quiet = true;
};

struct RunRecord {
  nlohmann::json config;  // every key of the TrainConfig
  std::uint64_t seed = 0;
  std::vector<LossRow> epoch_rows;  // mean per epoch and stage
  std::vector<std::string> resumed_stages;
  StageResult stage1, stage2, stage3, ablation;
  EvaluationReport stage2_report, film_report, ablation_report;
  std::string final_checkpoint;
  std::vector<std::string> freeze_violations;

  double macro_f1_delta() const { return film_report.classification.macro_f1 - ablation_report.classification.macro_f1; }
  /// The comparable metric part: reports and stage scalars, no paths or timings.
  nlohmann::json metrics_json() const;
  nlohmann::json to_json() const;
};

/// Generates (or takes) data, runs stages 1-3 and the ablation arm from the
/// stage-2 checkpoint, evaluates both arms on the test split and writes
/// checkpoints, loss log, reports and run_record.json under `out_dir`.
RunRecord run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const Dataset* data = nullptr, const RunOptions& options = {});

/// Both arms side by side, as written to ablation.json.
nlohmann::json ablation_summary(const RunRecord& record);

}  // namespace tand
