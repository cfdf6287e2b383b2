// SPDX-License-Identifier: Apache-2.0
// tandkit: synth | train | eval | infer | ablate | inspect
#include <CLI11.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "tandkit/checkpoint.hpp"
#include "tandkit/config.hpp"
#include "tandkit/datagen.hpp"
#include "tandkit/error.hpp"
#include "tandkit/io.hpp"
#include "tandkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace tand;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

TrainConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto kv = path.empty() ? std::map<std::string, std::string>{} : parse_key_values(read_text(path));
  if (path.empty() && !seed) throw ConfigError("either --config or --seed is required");
  if (seed) kv["experiment.seed"] = std::to_string(*seed);
  return TrainConfig::from_key_values(kv);
}

Dataset load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("data directory not found: " + dir);
  return read_dataset(dir);
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

// Class-coloured plus markers over the input image.
Image8 overlay(const Tensor& image, const std::vector<Detection>& dets) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> kColors{
      {{230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {245, 130, 48}, {145, 30, 180}, {0, 0, 0}}};
  Image8 img = image_to_rgb8(image);
  for (const Detection& d : dets) {
    const auto& c = kColors[static_cast<std::size_t>(d.class_id.value_or(5)) % kColors.size()];
    const int cx = static_cast<int>(std::lround(d.x)), cy = static_cast<int>(std::lround(d.y));
    for (int k = -3; k <= 3; ++k) {
      for (const auto [x, y] : {std::pair{cx + k, cy}, std::pair{cx, cy + k}}) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
        const std::size_t at = 3 * (static_cast<std::size_t>(y) * img.width + x);
        for (int ch = 0; ch < 3; ++ch) img.pixels[at + ch] = c[static_cast<std::size_t>(ch)];
      }
    }
  }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tissue-aware nuclei detection and classification"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir, data_dir, checkpoint_path, report_path, image_path, points_path, overlay_path;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<int> count;
  bool force = false, resume = false, verbose = false, no_film = false, as_json = false;
  float radius = kDefaultMatchRadius;
  std::optional<float> threshold;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config_path, "Run config (key = value text)");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Generator seed (overrides the config)");
  synth->add_flag("--force", force, "Write into a non-empty directory");

  auto* train = app.add_subcommand("train", "Run the three-stage curriculum and the ablation arm");
  train->add_option("--config", config_path, "Run config")->required();
  train->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_flag("--resume", resume, "Reuse stage checkpoints found in --out");
  train->add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--radius", radius, "Match radius in px")->check(CLI::PositiveNumber);
  eval->add_option("--report", report_path, "Report path (.json; a .csv twin is written next to it)")->required();
  eval->add_flag("--no-film", no_film, "Classify without tissue conditioning");

  auto* infer = app.add_subcommand("infer", "Detect and classify nuclei in one image");
  infer->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  infer->add_option("--image", image_path, "RGB PNG")->required();
  infer->add_option("--out-points", points_path, "Predictions CSV")->required();
  infer->add_option("--out-overlay", overlay_path, "Overlay PNG");
  infer->add_option("--threshold", threshold, "Heatmap threshold in (0,1)");
  infer->add_flag("--no-film", no_film, "Classify without tissue conditioning");

  auto* ablate = app.add_subcommand("ablate", "Train both arms and report them side by side");
  ablate->add_option("--config", config_path, "Run config")->required();
  ablate->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_flag("--resume", resume, "Reuse stage checkpoints found in --out");
  ablate->add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* inspect = app.add_subcommand("inspect", "Print a checkpoint manifest");
  inspect->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  inspect->add_flag("--json", as_json, "Full manifest as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      TrainConfig cfg = load_config(config_path, seed);
      if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
        std::cerr << "error: " << out_dir << " exists and is not empty (use --force)\n";
        return kExitUsage;
      }
      const Dataset data = generate_dataset(cfg.scene, count.value_or(cfg.data_count), cfg.tissue_scenes);
      write_dataset(out_dir, data);
      std::printf("wrote %zu train / %zu test / %zu tissue-only scenes to %s\n", data.train.size(), data.test.size(),
                  data.tissue.size(), out_dir.c_str());
    } else if (*train || *ablate) {
      const TrainConfig cfg = TrainConfig::load(config_path);
      std::optional<Dataset> data;
      if (!data_dir.empty()) data = load_data(data_dir);
      const RunRecord rec = run_experiment(cfg, out_dir, data ? &*data : nullptr, {resume, !verbose});
      if (*ablate) {
        const auto summary = ablation_summary(rec);
        std::printf("film macro-F1 %.4f  ablation macro-F1 %.4f  delta %+.4f\n",
                    rec.film_report.classification.macro_f1, rec.ablation_report.classification.macro_f1,
                    rec.macro_f1_delta());
        write_json(fs::path(out_dir) / "ablation.json", summary);
      } else {
        std::printf("detection F1 %.4f  macro-F1 %.4f  tissue mean Dice %.4f\n", rec.film_report.detection.f1,
                    rec.film_report.classification.macro_f1, rec.film_report.mean_dice);
      }
    } else if (*eval) {
      const Checkpoint ck = read_checkpoint(checkpoint_path);
      const TandModel model = model_from_checkpoint(ck);
      const Dataset data = load_data(data_dir);
      if (data.config.nucleus_classes != model.config().nucleus_classes ||
          data.config.tissue_classes != model.config().tissue_classes) {
        throw ConfigError("checkpoint expects K=" + std::to_string(model.config().nucleus_classes) +
                          ", T=" + std::to_string(model.config().tissue_classes) + " but the dataset has K=" +
                          std::to_string(data.config.nucleus_classes) +
                          ", T=" + std::to_string(data.config.tissue_classes));
      }
      TrainConfig cfg;
      cfg.eval.radius = radius;
      const EvaluationReport report =
          evaluate_model(model, split == "train" ? data.train : data.test, !no_film, cfg);
      write_json(report_path, report.to_json());
      write_text_atomic(fs::path(report_path).replace_extension(".csv"), report.to_csv());
      std::printf("detection F1 %.4f  macro-F1 %.4f  mean Dice %.4f\n", report.detection.f1,
                  report.classification.macro_f1, report.mean_dice);
    } else if (*infer) {
      const TandModel model = model_from_checkpoint(read_checkpoint(checkpoint_path));
      const Image8 rgb = read_png(image_path);
      if (rgb.channels != 3) throw ConfigError("infer expects an RGB image");
      const Tensor image = rgb8_to_image(rgb);
      const Tensor batch(Shape{1, 3, image.size(1), image.size(2)},
                         std::vector<float>(image.data().begin(), image.data().end()));
      DecodeParams decode;
      if (threshold) decode.threshold = *threshold;
      const auto dets = predict(model, batch, !no_film, decode);
      write_text_atomic(points_path, format_detections_csv(dets));
      if (!overlay_path.empty()) write_png(overlay_path, overlay(image, dets));
      std::printf("%zu detections\n", dets.size());
    } else if (*inspect) {
      const Checkpoint ck = read_checkpoint(checkpoint_path);
      if (as_json) {
        nlohmann::json params = nlohmann::json::array();
        for (const auto& e : ck.entries) {
          params.push_back({{"name", e.name}, {"shape", e.shape}, {"fnv1a64", hash_hex(e.hash)}});
        }
        std::cout << nlohmann::json{{"format_version", ck.format_version}, {"config", ck.config}, {"params", params}}
                         .dump(2)
                  << "\n";
      } else {
        std::printf("format_version %d, %zu params\n", ck.format_version, ck.entries.size());
        for (const auto& e : ck.entries) {
          std::printf("%-28s %-16s %s\n", e.name.c_str(), shape_str(e.shape).c_str(), hash_hex(e.hash).c_str());
        }
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
