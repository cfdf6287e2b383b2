// SPDX-License-Identifier: Apache-2.0
#include "tandkit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>

#include "tandkit/error.hpp"
#include "tandkit/io.hpp"
#include "tandkit/losses.hpp"
#include "tandkit/ops.hpp"
#include "tandkit/optim.hpp"

namespace fs = std::filesystem;

namespace tand {

namespace {

const std::string kTissue = "tissue.";
const std::string kDet = "det.";
const std::string kFilm = "film.";
const std::string kClsHead = "det.cls_head.";
const std::string kDetPath[] = {"det.enc", "det.dec", "det.det_head."};

struct Batch {
  Tensor images;
  std::vector<LabelMap> masks;
  BatchPoints points;
};

Batch make_batch(const std::vector<Scene>& scenes, std::span<const int> idx) {
  Batch b;
  b.images = stack_images(scenes, idx);
  for (int i : idx) {
    b.masks.push_back(scenes[static_cast<std::size_t>(i)].tissue_mask);
    b.points.push_back(scenes[static_cast<std::size_t>(i)].points);
  }
  return b;
}

// Every item replaced by its dihedral view ops[i].
Batch make_batch(const std::vector<Scene>& scenes, std::span<const int> idx, std::span<const int> ops) {
  std::vector<Scene> views;
  for (std::size_t i = 0; i < idx.size(); ++i) views.push_back(transform_scene(scenes[static_cast<std::size_t>(idx[i])], ops[i]));
  std::vector<int> all(views.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(views, all);
}

// Shuffled index batches for one epoch; depends only on (seed, stage, epoch).
std::vector<std::vector<int>> epoch_batches(int count, int batch_size, std::uint64_t seed, StageKind kind,
                                            int epoch) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(epoch)};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < count; s += batch_size) {
    out.emplace_back(order.begin() + s, order.begin() + std::min(count, s + batch_size));
  }
  return out;
}

std::vector<ParamGroup> param_groups(const std::vector<Param>& params, const StagePlan& plan) {
  ParamGroup base{{}, plan.lr}, film{{}, plan.lr * plan.lr_film_scale};
  for (const Param& p : params) {
    if (!p.tensor.requires_grad()) continue;
    (p.name.rfind(kFilm, 0) == 0 ? film : base).params.push_back(p);
  }
  std::vector<ParamGroup> groups;
  if (!base.params.empty()) groups.push_back(std::move(base));
  if (!film.params.empty()) groups.push_back(std::move(film));
  return groups;
}

Tensor center_targets(const BatchPoints& points, int map_h, int map_w, int stride, float sigma) {
  std::vector<float> values;
  values.reserve(points.size() * static_cast<std::size_t>(map_h) * map_w);
  for (const auto& pts : points) {
    const CenterMap m = encode_center_map(pts, map_h, map_w, stride, sigma);
    const auto v = m.values.data();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor(Shape{static_cast<int>(points.size()), 1, map_h, map_w}, std::move(values));
}

LabelMap argmax_labels(const Tensor& probs) {
  const int t = probs.size(1), h = probs.size(2), w = probs.size(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  LabelMap m{w, h, std::vector<std::uint8_t>(plane)};
  const auto v = probs.data();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < t; ++c) {
      if (v[c * plane + i] > v[best * plane + i]) best = c;
    }
    m.labels[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

double mean_dice(const TandModel& model, const std::vector<Scene>& scenes) {
  DiceCounts counts(model.config().tissue_classes);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const int idx[] = {static_cast<int>(i)};
    const TissueProbMap q = tissue_probs(model, stack_images(scenes, idx));
    counts.add(argmax_labels(q.probs), scenes[i].tissue_mask);
  }
  const auto d = counts.dice();
  return d.empty() ? 0.0 : std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

struct Terms {
  Tensor det, cls, bce, tissue, total;
};

bool active(const StagePlan& plan, const char* name) { return plan.losses_active.contains(name); }

Terms detcls_terms(const TandModel& model, const Batch& b, const StagePlan& plan, const TrainConfig& cfg) {
  TissueProbMap q;
  if (plan.film_enabled) q = tissue_probs(model, b.images);
  const DetClsOutput out = model.detcls_forward(b.images, q, plan.film_enabled);
  const int map_h = out.heat.size(2), map_w = out.heat.size(3);
  const int stride = b.images.size(3) / map_w;
  Terms t;
  LossWeights w = cfg.weights;
  const Tensor zero = Tensor::scalar(0.0f);
  if (active(plan, "det")) {
    t.det = focal_loss(out.heat, center_targets(b.points, map_h, map_w, stride, cfg.model.sigma), cfg.focal);
  } else {
    t.det = zero;
    w.det = 0.0f;
  }
  if (active(plan, "cls")) {
    t.cls = point_ce(out.cls_logits, b.points, stride);
  } else {
    t.cls = zero;
    w.cls = 0.0f;
  }
  if (active(plan, "bce")) {
    t.bce = local_bce(sigmoid(out.cls_logits), b.points, cfg.bce_radius, stride);
  } else {
    t.bce = zero;
    w.bce = 0.0f;
  }
  t.tissue = zero;
  t.total = total_loss(t.det, t.cls, t.bce, w);
  return t;
}

Terms tissue_terms(const TandModel& model, const Batch& b) {
  const TissueOutput out = model.tissue_forward(b.images);
  const TissueLossTerms l = tissue_loss(out.logits, out.probs.probs, b.masks, out.probs.temperature);
  const Tensor zero = Tensor::scalar(0.0f);
  return {zero, zero, zero, l.total, l.total};
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

template <typename TermFn>
StageResult train_loop(TandModel& model, const std::vector<Scene>& train, const StagePlan& plan,
                       const TrainConfig& cfg, LossLog& log, TermFn&& terms_for,
                       const std::function<void(int)>& after_epoch = {}) {
  const std::vector<Param> params = model.params();
  validate_plan(plan, params);
  set_trainable(params, plan.trainable);
  Sgd sgd(cfg.optim.momentum);
  const std::vector<ParamGroup> groups = param_groups(params, plan);

  StageResult result;
  result.kind = plan.kind;
  const std::string label = stage_label(plan.kind);
  const bool square = !train.empty() && train.front().tissue_mask.width == train.front().tissue_mask.height;
  const bool augment = cfg.optim.augment;
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(plan.kind), static_cast<std::uint32_t>(epoch), 0xa06u};
    Rng view_rng(seq);
    std::uniform_int_distribution<int> op_dist(0, square ? kDihedralOps - 1 : 3);
    const auto draw_ops = [&](std::size_t n) {
      std::vector<int> ops(n);
      for (int& op : ops) op = op_dist(view_rng);
      return ops;
    };
    LossRow sum{epoch, label};
    int steps = 0;
    for (const auto& idx : epoch_batches(static_cast<int>(train.size()), cfg.optim.batch_size, cfg.seed, plan.kind,
                                         epoch)) {
      const Batch b = augment ? make_batch(train, idx, draw_ops(idx.size())) : make_batch(train, idx);
      const Terms t = terms_for(b);
      const LossRow row{log.next_step(), label, t.det.item(), t.cls.item(), t.bce.item(), t.tissue.item(),
                        t.total.item()};
      if (!std::isfinite(row.total)) throw std::runtime_error("stage " + label + ": loss is not finite");
      if (epoch == 0 && steps == 0) result.step0_loss = row.total;
      log.append(row);
      sum.det += row.det;
      sum.cls += row.cls;
      sum.bce += row.bce;
      sum.tissue += row.tissue;
      sum.total += row.total;
      ++steps;
      if (!groups.empty()) {
        backward(t.total);
        if (cfg.optim.grad_clip > 0.0f) clip_grad_norm(groups, cfg.optim.grad_clip);
        sgd.step(groups);
        zero_grads(params);
      }
    }
    const double n = std::max(1, steps);
    sum.det /= n;
    sum.cls /= n;
    sum.bce /= n;
    sum.tissue /= n;
    sum.total /= n;
    result.epoch_rows.push_back(sum);
    result.epoch_loss.push_back(sum.total);
    log.flush();
    if (after_epoch) after_epoch(epoch);
  }
  // Leave every param inert so later stages start from an explicit plan.
  set_trainable(params, {});
  return result;
}

void check_dataset(const Dataset& data, const ModelConfig& model) {
  if (data.train.empty() || data.test.empty()) throw ConfigError("dataset needs non-empty train and test splits");
  if (data.config.nucleus_classes != model.nucleus_classes || data.config.tissue_classes != model.tissue_classes) {
    throw ConfigError("dataset has K=" + std::to_string(data.config.nucleus_classes) +
                      ", T=" + std::to_string(data.config.tissue_classes) + " but the model expects K=" +
                      std::to_string(model.nucleus_classes) + ", T=" + std::to_string(model.tissue_classes));
  }
  for (const auto* split : {&data.train, &data.test}) {
    for (const Scene& s : *split) {
      if (s.image.size(1) != model.image_size || s.image.size(2) != model.image_size) {
        throw ConfigError("scene size differs from model image size " + std::to_string(model.image_size));
      }
    }
  }
}

nlohmann::json rows_json(const std::vector<LossRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"epoch", r.step},
                   {"stage", r.stage},
                   {"det", r.det},
                   {"cls", r.cls},
                   {"bce", r.bce},
                   {"tissue", r.tissue},
                   {"total", r.total}});
  }
  return out;
}

nlohmann::json stage_json(const StageResult& s) {
  nlohmann::json j{{"stage", stage_label(s.kind)}, {"step0_loss", s.step0_loss}, {"epoch_loss", s.epoch_loss}};
  if (s.kind == StageKind::Tissue) {
    j["epoch_dice"] = s.epoch_dice;
    j["heldout_dice"] = s.heldout_dice;
  }
  if (s.kind == StageKind::Film) j["identity_at_step0"] = s.identity_at_step0;
  return j;
}

}  // namespace

std::string stage_label(StageKind kind) {
  switch (kind) {
    case StageKind::Tissue: return "1";
    case StageKind::DetCls: return "2";
    case StageKind::Film: return "3";
    case StageKind::Ablation: return "ablation";
  }
  return "?";
}

StagePlan make_stage_plan(StageKind kind, const TrainConfig& cfg) {
  StagePlan p;
  p.kind = kind;
  p.lr = cfg.optim.lr;
  const std::vector<std::string> det_path(std::begin(kDetPath), std::end(kDetPath));
  switch (kind) {
    case StageKind::Tissue:
      p.trainable = {kTissue};
      p.frozen = {kDet, kFilm};
      p.epochs = cfg.optim.epochs_stage1;
      p.losses_active = {"tissue"};
      break;
    case StageKind::DetCls:
      p.trainable = {kDet};
      p.frozen = {kTissue, kFilm};
      p.epochs = cfg.optim.epochs_stage2;
      p.losses_active = {"det", "cls", "bce"};
      break;
    case StageKind::Film:
    case StageKind::Ablation: {
      const bool film = kind == StageKind::Film;
      p.film_enabled = film;
      p.lr_film_scale = cfg.optim.lr_film_scale;
      p.epochs = cfg.optim.epochs_stage3;
      if (cfg.optim.finetune_backbone) {
        p.trainable = {kDet};
        p.losses_active = {"det", "cls", "bce"};
      } else {
        p.trainable = {kClsHead};
        p.frozen = det_path;
        p.losses_active = {"cls", "bce"};
      }
      p.frozen.push_back(kTissue);
      (film ? p.trainable : p.frozen).push_back(kFilm);
      break;
    }
  }
  return p;
}

void validate_plan(const StagePlan& plan, const std::vector<Param>& params) {
  for (const auto& t : plan.trainable) {
    for (const auto& f : plan.frozen) {
      if (t.rfind(f, 0) == 0 || f.rfind(t, 0) == 0) {
        throw ConfigError("stage plan: prefixes '" + t + "' and '" + f + "' overlap");
      }
    }
  }
  for (const Param& p : params) {
    const bool t = has_prefix(p.name, plan.trainable), f = has_prefix(p.name, plan.frozen);
    if (t == f) throw ConfigError("stage plan: param '" + p.name + "' is " + (t ? "both" : "neither") +
                                  " trainable and frozen");
  }
  if (plan.kind != StageKind::Tissue && (plan.losses_active.contains("tissue") || has_prefix(kTissue, plan.trainable))) {
    throw ConfigError("stage plan: only stage 1 may train the tissue branch");
  }
  if (plan.kind == StageKind::Tissue && plan.losses_active != std::set<std::string>{"tissue"}) {
    throw ConfigError("stage plan: stage 1 activates the tissue loss only");
  }
}

void LossLog::append(const LossRow& row) { rows_.push_back(row); }

std::string LossLog::to_csv() const {
  std::string out = "step,stage,det,cls,bce,tissue,total\n";
  char buf[256];
  for (const auto& r : rows_) {
    std::snprintf(buf, sizeof buf, "%ld,%s,%.8g,%.8g,%.8g,%.8g,%.8g\n", r.step, r.stage.c_str(), r.det, r.cls, r.bce,
                  r.tissue, r.total);
    out += buf;
  }
  return out;
}

void LossLog::flush() const {
  if (path_) write_text_atomic(*path_, to_csv());
}

TissueProbMap tissue_probs(const TandModel& model, const Tensor& images) {
  NoGradGuard guard;
  return model.tissue_forward(images).probs;
}

Tensor stack_images(const std::vector<Scene>& scenes, std::span<const int> indices) {
  if (indices.empty()) throw InvalidArgument("stack_images: no indices");
  const Tensor& first = scenes.at(static_cast<std::size_t>(indices[0])).image;
  const int h = first.size(1), w = first.size(2);
  std::vector<float> values;
  values.reserve(indices.size() * first.numel());
  for (int i : indices) {
    const Tensor& img = scenes.at(static_cast<std::size_t>(i)).image;
    if (img.shape() != first.shape()) throw ShapeError("stack_images: scenes differ in size");
    const auto v = img.data();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor(Shape{static_cast<int>(indices.size()), 3, h, w}, std::move(values));
}

StageResult stage1_tissue(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                          LossLog& log) {
  if (plan.kind != StageKind::Tissue) throw ConfigError("stage1_tissue needs a stage-1 plan");
  if (model.tissue().frozen()) throw ConfigError("stage1_tissue: tissue branch is already frozen");
  std::vector<double> dice;
  std::vector<Scene> scenes = data.train;
  scenes.insert(scenes.end(), data.tissue.begin(), data.tissue.end());
  StageResult r = train_loop(model, scenes, plan, cfg, log, [&](const Batch& b) { return tissue_terms(model, b); },
                             [&](int) { dice.push_back(mean_dice(model, data.test)); });
  model.tissue().freeze();
  r.epoch_dice = std::move(dice);
  r.heldout_dice = r.epoch_dice.empty() ? mean_dice(model, data.test) : r.epoch_dice.back();
  return r;
}

StageResult stage2_detcls(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                          LossLog& log) {
  if (plan.kind != StageKind::DetCls || plan.film_enabled) throw ConfigError("stage2_detcls needs a stage-2 plan");
  return train_loop(model, data.train, plan, cfg, log,
                    [&](const Batch& b) { return detcls_terms(model, b, plan, cfg); });
}

StageResult stage3_film(TandModel& model, const Dataset& data, const StagePlan& plan, const TrainConfig& cfg,
                        LossLog& log) {
  if (plan.kind != StageKind::Film && plan.kind != StageKind::Ablation) {
    throw ConfigError("stage3_film needs a stage-3 or ablation plan");
  }
  if (!model.tissue().frozen()) throw ConfigError("stage3_film: tissue branch must be frozen first");
  bool identity = true;
  bool first = true;
  StageResult r = train_loop(model, data.train, plan, cfg, log, [&](const Batch& b) {
    if (first && plan.film_enabled) {
      NoGradGuard guard;
      const TissueProbMap q = tissue_probs(model, b.images);
      const DetClsOutput on = model.detcls_forward(b.images, q, true);
      const DetClsOutput off = model.detcls_forward(b.images, q, false);
      identity = bit_equal(on.heat, off.heat) && bit_equal(on.cls_logits, off.cls_logits);
    }
    first = false;
    return detcls_terms(model, b, plan, cfg);
  });
  r.identity_at_step0 = identity;
  return r;
}

std::vector<Detection> predict(const TandModel& model, const Tensor& image, bool film_enabled,
                               const DecodeParams& decode) {
  check_image_tensor(image);
  if (image.size(0) != 1) throw ShapeError("predict: expected a single image [1,3,H,W]");
  NoGradGuard guard;
  TissueProbMap q;
  if (film_enabled) q = tissue_probs(model, image);
  const DetClsOutput out = model.detcls_forward(image, q, film_enabled);
  DecodeParams p = decode;
  p.stride = image.size(3) / out.heat.size(3);
  return assign_classes(decode_peaks(out.heat, p), out.cls_logits);
}

EvaluationReport evaluate_model(const TandModel& model, const std::vector<Scene>& scenes, bool film_enabled,
                                const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  EvaluationAccumulator acc(mc.nucleus_classes, mc.tissue_classes, cfg.eval.radius);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const int idx[] = {static_cast<int>(i)};
    const Tensor image = stack_images(scenes, idx);
    const auto dets = predict(model, image, film_enabled, cfg.eval.decode);
    acc.add_detections(scenes[i].points, dets);
    acc.add_tissue(argmax_labels(tissue_probs(model, image).probs), scenes[i].tissue_mask);
  }
  return acc.report();
}

std::vector<std::string> audit_frozen(const std::vector<Param>& params, const Checkpoint& reference,
                                      const std::vector<std::string>& prefixes) {
  std::vector<std::string> drift;
  for (const Param& p : params) {
    if (!has_prefix(p.name, prefixes)) continue;
    const CheckpointEntry* e = reference.find(p.name);
    if (e == nullptr || e->hash != fnv1a64(p.tensor.data()) || e->shape != p.tensor.shape()) drift.push_back(p.name);
  }
  return drift;
}

ModelConfig with_input_stats(ModelConfig mc, const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw ConfigError("input statistics need at least one scene");
  std::array<double, 3> sum{}, sq{};
  double n = 0.0;
  for (const Scene& sc : scenes) {
    const std::size_t plane = static_cast<std::size_t>(sc.image.size(1)) * sc.image.size(2);
    const auto v = sc.image.data();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double x = v[c * plane + i];
        sum[c] += x;
        sq[c] += x * x;
      }
    }
    n += static_cast<double>(plane);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    const double sd = std::sqrt(std::max(0.0, sq[c] / n - mean * mean));
    mc.input_mean[c] = static_cast<float>(mean);
    mc.input_std[c] = sd > 1e-6 ? static_cast<float>(sd) : 1.0f;
  }
  return mc;
}

TandModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.is_null()) throw ConfigError("checkpoint has no model config block");
  TandModel model(ModelConfig::from_json(ckpt.config));
  load_params(ckpt, model.params());
  return model;
}

nlohmann::json RunRecord::metrics_json() const {
  return {{"stage1", stage_json(stage1)},
          {"stage2", stage_json(stage2)},
          {"stage3", stage_json(stage3)},
          {"ablation", stage_json(ablation)},
          {"stage2_report", stage2_report.to_json()},
          {"film_report", film_report.to_json()},
          {"ablation_report", ablation_report.to_json()},
          {"macro_f1_delta", macro_f1_delta()}};
}

nlohmann::json RunRecord::to_json() const {
  return {{"config", config},
          {"seed", seed},
          {"epoch_rows", rows_json(epoch_rows)},
          {"resumed_stages", resumed_stages},
          {"metrics", metrics_json()},
          {"final_checkpoint", final_checkpoint},
          {"freeze_violations", freeze_violations}};
}

nlohmann::json ablation_summary(const RunRecord& record) {
  const auto arm = [](const EvaluationReport& r) {
    return nlohmann::json{{"macro_f1", r.classification.macro_f1},
                          {"per_class_f1", r.classification.per_class_f1},
                          {"detection_f1", r.detection.f1}};
  };
  return {{"film", arm(record.film_report)},
          {"ablation", arm(record.ablation_report)},
          {"macro_f1_delta", record.macro_f1_delta()},
          {"detection_f1_delta", record.film_report.detection.f1 - record.ablation_report.detection.f1},
          {"seed", record.seed}};
}

RunRecord run_experiment(const TrainConfig& cfg, const fs::path& out_dir, const Dataset* data,
                         const RunOptions& options) {
  cfg.validate();
  fs::create_directories(out_dir);
  Dataset generated;
  if (data == nullptr) {
    generated = generate_dataset(cfg.scene, cfg.data_count, cfg.tissue_scenes);
    data = &generated;
  }
  check_dataset(*data, cfg.model);
  write_text_atomic(out_dir / "config.txt", format_config(cfg));

  const auto clock_start = std::chrono::steady_clock::now();
  const auto say = [&](const std::string& msg) {
    if (options.quiet) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
  };

  RunRecord rec;
  rec.config = cfg.to_json();
  rec.seed = cfg.seed;
  const ModelConfig model_cfg = with_input_stats(cfg.model, data->train);
  const nlohmann::json model_json = model_cfg.to_json();
  LossLog log(out_dir / "loss_log.csv");
  TandModel model(model_cfg);

  // Runs a stage unless a matching checkpoint can be reused; returns the
  // checkpoint as stored and whether training ran.
  const auto stage = [&](const char* file, StageKind kind, auto&& run) -> std::pair<Checkpoint, bool> {
    const fs::path path = out_dir / file;
    if (options.resume && fs::exists(path)) {
      const Checkpoint ck = read_checkpoint(path);
      if (ck.config != model_json) throw ConfigError(path.string() + ": checkpoint config differs from the run config");
      load_params(ck, model.params());
      rec.resumed_stages.push_back(stage_label(kind));
      say("stage " + stage_label(kind) + ": resumed from " + path.string());
      return {ck, false};
    }
    say("stage " + stage_label(kind) + ": training");
    run();
    save_checkpoint(path, model.params(), model_json);
    say("stage " + stage_label(kind) + ": saved " + path.string());
    return {read_checkpoint(path), true};
  };

  const StagePlan plan1 = make_stage_plan(StageKind::Tissue, cfg);
  const auto [ck1, ran1] = stage("stage1.ckpt", StageKind::Tissue,
                                 [&] { rec.stage1 = stage1_tissue(model, *data, plan1, cfg, log); });
  if (!ran1) {
    model.tissue().freeze();
    rec.stage1.kind = StageKind::Tissue;
    rec.stage1.heldout_dice = mean_dice(model, data->test);
  }
  say("stage 1: held-out mean Dice " + std::to_string(rec.stage1.heldout_dice));

  const StagePlan plan2 = make_stage_plan(StageKind::DetCls, cfg);
  const Checkpoint ck2 = stage("stage2.ckpt", StageKind::DetCls,
                                 [&] { rec.stage2 = stage2_detcls(model, *data, plan2, cfg, log); }).first;
  rec.stage2.kind = StageKind::DetCls;
  rec.freeze_violations = audit_frozen(model.params(), ck1, {kTissue});
  rec.stage2_report = evaluate_model(model, data->test, false, cfg);
  say("stage 2: detection F1 " + std::to_string(rec.stage2_report.detection.f1) + ", macro-F1 " +
      std::to_string(rec.stage2_report.classification.macro_f1));

  const StagePlan plan3 = make_stage_plan(StageKind::Film, cfg);
  stage("stage3.ckpt", StageKind::Film, [&] { rec.stage3 = stage3_film(model, *data, plan3, cfg, log); });
  rec.stage3.kind = StageKind::Film;
  if (!rec.stage3.identity_at_step0) throw std::runtime_error("stage 3 departed from stage 2 before any update");
  for (auto& name : audit_frozen(model.params(), ck2, plan3.frozen)) rec.freeze_violations.push_back(name);
  rec.film_report = evaluate_model(model, data->test, true, cfg);
  say("stage 3: macro-F1 " + std::to_string(rec.film_report.classification.macro_f1));

  // The ablation arm restarts from the stage-2 weights with FiLM off.
  model = model_from_checkpoint(ck2);
  model.tissue().freeze();
  const StagePlan plan_a = make_stage_plan(StageKind::Ablation, cfg);
  stage("ablation.ckpt", StageKind::Ablation, [&] { rec.ablation = stage3_film(model, *data, plan_a, cfg, log); });
  rec.ablation.kind = StageKind::Ablation;
  for (auto& name : audit_frozen(model.params(), ck2, plan_a.frozen)) rec.freeze_violations.push_back(name);
  rec.ablation_report = evaluate_model(model, data->test, false, cfg);
  say("ablation: macro-F1 " + std::to_string(rec.ablation_report.classification.macro_f1));

  for (const auto* s : {&rec.stage1, &rec.stage2, &rec.stage3, &rec.ablation}) {
    rec.epoch_rows.insert(rec.epoch_rows.end(), s->epoch_rows.begin(), s->epoch_rows.end());
  }
  rec.final_checkpoint = (out_dir / "stage3.ckpt").string();

  write_text_atomic(out_dir / "report_stage2.json", rec.stage2_report.to_json().dump(2) + "\n");
  write_text_atomic(out_dir / "report_film.json", rec.film_report.to_json().dump(2) + "\n");
  write_text_atomic(out_dir / "report_film.csv", rec.film_report.to_csv());
  write_text_atomic(out_dir / "report_ablation.json", rec.ablation_report.to_json().dump(2) + "\n");
  write_text_atomic(out_dir / "report_ablation.csv", rec.ablation_report.to_csv());
  write_text_atomic(out_dir / "ablation.json", ablation_summary(rec).dump(2) + "\n");
  write_text_atomic(out_dir / "run_record.json", rec.to_json().dump(2) + "\n");
  if (!rec.freeze_violations.empty()) {
    throw std::runtime_error("freeze audit failed: " + std::to_string(rec.freeze_violations.size()) +
                             " frozen params drifted, first '" + rec.freeze_violations.front() + "'");
  }
  say("done, macro-F1 delta " + std::to_string(rec.macro_f1_delta()));
  return rec;
}

}  // namespace tand
