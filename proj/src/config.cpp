// SPDX-License-Identifier: Apache-2.0
#include "tandkit/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <vector>

#include "tandkit/error.hpp"
#include "tandkit/io.hpp"

namespace tand {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_float(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long i = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return i;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t i = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
  return i;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  return out;
}

template <std::size_t N>
std::array<int, N> to_int_array(const std::string& key, const std::string& v) {
  const auto list = to_int_list(key, v);
  if (list.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated integers");
  std::array<int, N> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

template <typename C>
std::string join(const C& values) {
  std::string out;
  for (const auto& v : values) out += (out.empty() ? "" : ",") + std::to_string(v);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string& key, const std::string& value)> set;
};

const std::vector<Field>& fields() {
  using C = TrainConfig;
  using S = const std::string&;
  static const std::vector<Field> table = {
      {"experiment.seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, S k, S v) { c.seed = to_u64(k, v); }},
      {"experiment.data_count", [](const C& c) { return std::to_string(c.data_count); },
       [](C& c, S k, S v) { c.data_count = static_cast<int>(to_int(k, v)); }},
      {"experiment.tissue_scenes", [](const C& c) { return std::to_string(c.tissue_scenes); },
       [](C& c, S k, S v) { c.tissue_scenes = static_cast<int>(to_int(k, v)); }},
      {"data.image_size", [](const C& c) { return std::to_string(c.scene.width); },
       [](C& c, S k, S v) { c.scene.width = c.scene.height = c.model.image_size = static_cast<int>(to_int(k, v)); }},
      {"data.nuclei_min", [](const C& c) { return std::to_string(c.scene.nuclei_min); },
       [](C& c, S k, S v) { c.scene.nuclei_min = static_cast<int>(to_int(k, v)); }},
      {"data.nuclei_max", [](const C& c) { return std::to_string(c.scene.nuclei_max); },
       [](C& c, S k, S v) { c.scene.nuclei_max = static_cast<int>(to_int(k, v)); }},
      {"data.tissue_blob_scale", [](const C& c) { return fmt_float(c.scene.tissue_blob_scale); },
       [](C& c, S k, S v) { c.scene.tissue_blob_scale = static_cast<float>(to_double(k, v)); }},
      {"data.min_distance", [](const C& c) { return fmt_float(c.scene.min_distance); },
       [](C& c, S k, S v) { c.scene.min_distance = static_cast<float>(to_double(k, v)); }},
      {"data.tint_contrast", [](const C& c) { return fmt_float(c.scene.tint_contrast); },
       [](C& c, S k, S v) { c.scene.tint_contrast = static_cast<float>(to_double(k, v)); }},
      {"data.cytoplasm_radius", [](const C& c) { return fmt_float(c.scene.cytoplasm_radius); },
       [](C& c, S k, S v) { c.scene.cytoplasm_radius = static_cast<float>(to_double(k, v)); }},
      {"data.texture_noise", [](const C& c) { return fmt_float(c.scene.texture_noise); },
       [](C& c, S k, S v) { c.scene.texture_noise = static_cast<float>(to_double(k, v)); }},
      {"data.affinity", [](const C& c) { return c.affinity; }, [](C& c, S, S v) { c.affinity = v; }},
      {"data.appearance", [](const C& c) { return join(c.scene.appearance); },
       [](C& c, S k, S v) { c.scene.appearance = to_int_list(k, v); }},
      {"model.nucleus_classes", [](const C& c) { return std::to_string(c.model.nucleus_classes); },
       [](C& c, S k, S v) { c.model.nucleus_classes = static_cast<int>(to_int(k, v)); }},
      {"model.tissue_classes", [](const C& c) { return std::to_string(c.model.tissue_classes); },
       [](C& c, S k, S v) { c.model.tissue_classes = static_cast<int>(to_int(k, v)); }},
      {"model.encoder_widths", [](const C& c) { return join(c.model.encoder_widths); },
       [](C& c, S k, S v) { c.model.encoder_widths = to_int_array<4>(k, v); }},
      {"model.tissue_widths", [](const C& c) { return join(c.model.tissue_widths); },
       [](C& c, S k, S v) { c.model.tissue_widths = to_int_array<4>(k, v); }},
      {"model.temperature", [](const C& c) { return fmt_float(c.model.temperature); },
       [](C& c, S k, S v) { c.model.temperature = static_cast<float>(to_double(k, v)); }},
      {"model.eta", [](const C& c) { return fmt_float(c.model.eta); },
       [](C& c, S k, S v) { c.model.eta = static_cast<float>(to_double(k, v)); }},
      {"model.sigma", [](const C& c) { return fmt_float(c.model.sigma); },
       [](C& c, S k, S v) { c.model.sigma = static_cast<float>(to_double(k, v)); }},
      {"model.film_hidden", [](const C& c) { return std::to_string(c.model.film_hidden); },
       [](C& c, S k, S v) { c.model.film_hidden = static_cast<int>(to_int(k, v)); }},
      {"train.lr", [](const C& c) { return fmt_float(c.optim.lr); },
       [](C& c, S k, S v) { c.optim.lr = static_cast<float>(to_double(k, v)); }},
      {"train.momentum", [](const C& c) { return fmt_float(c.optim.momentum); },
       [](C& c, S k, S v) { c.optim.momentum = static_cast<float>(to_double(k, v)); }},
      {"train.lr_film_scale", [](const C& c) { return fmt_float(c.optim.lr_film_scale); },
       [](C& c, S k, S v) { c.optim.lr_film_scale = static_cast<float>(to_double(k, v)); }},
      {"train.grad_clip", [](const C& c) { return fmt_float(c.optim.grad_clip); },
       [](C& c, S k, S v) { c.optim.grad_clip = static_cast<float>(to_double(k, v)); }},
      {"train.batch_size", [](const C& c) { return std::to_string(c.optim.batch_size); },
       [](C& c, S k, S v) { c.optim.batch_size = static_cast<int>(to_int(k, v)); }},
      {"train.epochs_stage1", [](const C& c) { return std::to_string(c.optim.epochs_stage1); },
       [](C& c, S k, S v) { c.optim.epochs_stage1 = static_cast<int>(to_int(k, v)); }},
      {"train.epochs_stage2", [](const C& c) { return std::to_string(c.optim.epochs_stage2); },
       [](C& c, S k, S v) { c.optim.epochs_stage2 = static_cast<int>(to_int(k, v)); }},
      {"train.epochs_stage3", [](const C& c) { return std::to_string(c.optim.epochs_stage3); },
       [](C& c, S k, S v) { c.optim.epochs_stage3 = static_cast<int>(to_int(k, v)); }},
      {"train.finetune_backbone", [](const C& c) { return std::string(c.optim.finetune_backbone ? "true" : "false"); },
       [](C& c, S k, S v) { c.optim.finetune_backbone = to_bool(k, v); }},
      {"train.augment", [](const C& c) { return std::string(c.optim.augment ? "true" : "false"); },
       [](C& c, S k, S v) { c.optim.augment = to_bool(k, v); }},
      {"loss.lambda_det", [](const C& c) { return fmt_float(c.weights.det); },
       [](C& c, S k, S v) { c.weights.det = static_cast<float>(to_double(k, v)); }},
      {"loss.lambda_cls", [](const C& c) { return fmt_float(c.weights.cls); },
       [](C& c, S k, S v) { c.weights.cls = static_cast<float>(to_double(k, v)); }},
      {"loss.lambda_bce", [](const C& c) { return fmt_float(c.weights.bce); },
       [](C& c, S k, S v) { c.weights.bce = static_cast<float>(to_double(k, v)); }},
      {"loss.focal_alpha", [](const C& c) { return fmt_float(c.focal.alpha); },
       [](C& c, S k, S v) { c.focal.alpha = static_cast<float>(to_double(k, v)); }},
      {"loss.focal_gamma", [](const C& c) { return fmt_float(c.focal.gamma); },
       [](C& c, S k, S v) { c.focal.gamma = static_cast<float>(to_double(k, v)); }},
      {"loss.bce_radius", [](const C& c) { return std::to_string(c.bce_radius); },
       [](C& c, S k, S v) { c.bce_radius = static_cast<int>(to_int(k, v)); }},
      {"eval.radius", [](const C& c) { return fmt_float(c.eval.radius); },
       [](C& c, S k, S v) { c.eval.radius = static_cast<float>(to_double(k, v)); }},
      {"eval.threshold", [](const C& c) { return fmt_float(c.eval.decode.threshold); },
       [](C& c, S k, S v) { c.eval.decode.threshold = static_cast<float>(to_double(k, v)); }},
      {"eval.nms_window", [](const C& c) { return std::to_string(c.eval.decode.window); },
       [](C& c, S k, S v) { c.eval.decode.window = static_cast<int>(to_int(k, v)); }},
      {"eval.max_dets", [](const C& c) { return std::to_string(c.eval.decode.max_dets); },
       [](C& c, S k, S v) { c.eval.decode.max_dets = static_cast<int>(to_int(k, v)); }},
  };
  return table;
}

std::vector<std::vector<double>> affinity_for(const TrainConfig& c) {
  const int k = c.model.nucleus_classes, t = c.model.tissue_classes;
  if (c.affinity == "reference") {
    if (k != 3 || t != 4) throw ConfigError("data.affinity: 'reference' needs 3 nucleus and 4 tissue classes");
    return reference_scene_config(0).affinity;
  }
  if (c.affinity == "identity") {
    if (k != t) throw ConfigError("data.affinity: 'identity' needs as many nucleus as tissue classes");
    return identity_affinity(k);
  }
  if (c.affinity == "uniform") return uniform_affinity(t, k);
  if (c.affinity.find(';') == std::string::npos) {
    throw ConfigError("data.affinity: expected reference, identity, uniform or rows 'a,b;c,d', got '" + c.affinity + "'");
  }
  // Explicit T x K matrix, rows separated by ';'.
  std::vector<std::vector<double>> rows;
  std::istringstream in(c.affinity);
  std::string row;
  while (std::getline(in, row, ';')) {
    std::vector<double> r;
    std::istringstream cells(row);
    std::string cell;
    while (std::getline(cells, cell, ',')) r.push_back(to_double("data.affinity", trim(cell)));
    rows.push_back(std::move(r));
  }
  if (static_cast<int>(rows.size()) != t) throw ConfigError("data.affinity: expected " + std::to_string(t) + " rows");
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != k) throw ConfigError("data.affinity: every row needs " + std::to_string(k) + " entries");
  }
  return rows;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'section.key = value'", line_no);
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
      throw ParseError("key '" + key + "' is not of the form section.key", line_no);
    }
    if (!out.emplace(key, value).second) throw ParseError("repeated key '" + key + "'", line_no);
  }
  return out;
}

std::map<std::string, std::string> TrainConfig::key_values() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : key_values()) j[k] = v;
  return j;
}

void TrainConfig::validate() const {
  if (data_count < 2) throw ConfigError("experiment.data_count must be >= 2");
  if (train_count_for(data_count) >= data_count) throw ConfigError("experiment.data_count leaves no test scenes");
  if (tissue_scenes < 0) throw ConfigError("experiment.tissue_scenes must be >= 0");
  if (optim.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(optim.lr > 0.0f)) throw ConfigError("train.lr must be > 0");
  if (!(optim.momentum >= 0.0f && optim.momentum < 1.0f)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(optim.grad_clip >= 0.0f) || !std::isfinite(optim.grad_clip)) throw ConfigError("train.grad_clip must be >= 0");
  if (!(optim.lr_film_scale > 0.0f && optim.lr_film_scale <= 1.0f)) {
    throw ConfigError("train.lr_film_scale must lie in (0, 1]");
  }
  if (optim.epochs_stage1 < 0 || optim.epochs_stage2 < 0 || optim.epochs_stage3 < 0) {
    throw ConfigError("train.epochs_stage* must be >= 0");
  }
  if (bce_radius < 0) throw ConfigError("loss.bce_radius must be >= 0");
  if (!(focal.alpha > 0.0f && focal.alpha < 1.0f)) throw ConfigError("loss.focal_alpha must lie in (0, 1)");
  if (!(focal.gamma >= 0.0f)) throw ConfigError("loss.focal_gamma must be >= 0");
  if (!(eval.radius > 0.0f)) throw ConfigError("eval.radius must be > 0");
  if (!(eval.decode.threshold > 0.0f && eval.decode.threshold < 1.0f)) {
    throw ConfigError("eval.threshold must lie in (0, 1)");
  }
  if (eval.decode.window < 3 || eval.decode.window % 2 == 0) throw ConfigError("eval.nms_window must be odd and >= 3");
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  model.validate();
  if (scene.width != model.image_size || scene.height != model.image_size) {
    throw ConfigError("data.image_size disagrees with the model image size");
  }
  if (scene.tissue_classes != model.tissue_classes || scene.nucleus_classes != model.nucleus_classes) {
    throw ConfigError("scene and model class counts disagree");
  }
  scene.validate();
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  if (!kv.contains("experiment.seed")) throw ConfigError("missing required config key 'experiment.seed'");
  TrainConfig c;
  c.scene.appearance = reference_scene_config(0).appearance;
  for (const auto& [key, value] : kv) {
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(c, key, value);
  }
  c.seed = apply_seed_override(c.seed);
  c.model.init_seed = c.seed;
  c.scene.seed = c.seed;
  c.scene.tissue_classes = c.model.tissue_classes;
  c.scene.nucleus_classes = c.model.nucleus_classes;
  c.scene.affinity = affinity_for(c);
  c.validate();
  return c;
}

TrainConfig TrainConfig::parse(const std::string& text) { return from_key_values(parse_key_values(text)); }

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_text(path));
}

std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t apply_seed_override(std::uint64_t seed) {
  const char* env = std::getenv("TANDKIT_SEED");
  if (env == nullptr || *env == '\0') return seed;
  return to_u64("TANDKIT_SEED", env);
}

}  // namespace tand
