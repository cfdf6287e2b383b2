// SPDX-License-Identifier: Apache-2.0
#include "tandkit/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "tandkit/error.hpp"
#include "tandkit/io.hpp"
#include "tandkit/nn.hpp"

namespace fs = std::filesystem;

namespace tand {

namespace {

constexpr int kPlacementAttempts = 10;
constexpr int kCoverageAttempts = 64;

constexpr std::array<std::array<float, 3>, 8> kTissueTint{{
    {0.86f, 0.68f, 0.78f},
    {0.76f, 0.70f, 0.88f},
    {0.90f, 0.83f, 0.68f},
    {0.72f, 0.82f, 0.74f},
    {0.92f, 0.76f, 0.64f},
    {0.68f, 0.78f, 0.88f},
    {0.82f, 0.82f, 0.82f},
    {0.88f, 0.62f, 0.62f},
}};

std::vector<std::array<float, 3>> tissue_tints(int tissue_classes, float contrast) {
  std::vector<std::array<float, 3>> tints(static_cast<std::size_t>(tissue_classes));
  std::array<float, 3> mean{};
  for (std::size_t t = 0; t < tints.size(); ++t) {
    tints[t] = kTissueTint[t % kTissueTint.size()];
    for (int c = 0; c < 3; ++c) mean[c] += tints[t][c] / static_cast<float>(tints.size());
  }
  for (auto& tint : tints) {
    for (int c = 0; c < 3; ++c) tint[c] = mean[c] + contrast * (tint[c] - mean[c]);
  }
  return tints;
}

// Grain correlation length per tissue (px); <= 1 means per-pixel grain.
constexpr std::array<float, 8> kTextureScale{1.0f, 6.0f, 3.0f, 12.0f, 2.0f, 8.0f, 4.0f, 16.0f};

struct NucleusLook {
  std::array<float, 3> color;
  float sigma_lo, sigma_hi;
};

constexpr std::array<NucleusLook, 4> kNucleusLook{{
    {{0.32f, 0.14f, 0.42f}, 2.5f, 3.0f},
    {{0.10f, 0.30f, 0.58f}, 2.0f, 2.4f},
    {{0.45f, 0.10f, 0.15f}, 2.2f, 2.8f},
    {{0.15f, 0.15f, 0.15f}, 2.0f, 2.6f},
}};

Rng scene_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x7a4du};
  return Rng(seq);
}

float quantize8(float v) { return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f; }

float quantize3(double v) { return static_cast<float>(std::round(v * 1000.0) / 1000.0); }

// Smooth random field: uniform control values on a grid of spacing `scale`,
// cosine-interpolated. Grid origin is jittered so blobs do not align with pixels.
std::vector<float> smooth_field(Rng& rng, int width, int height, float scale) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const int gw = static_cast<int>(std::ceil(width / scale)) + 2;
  const int gh = static_cast<int>(std::ceil(height / scale)) + 2;
  std::vector<float> grid(static_cast<std::size_t>(gw) * gh);
  for (float& g : grid) g = unit(rng);
  const float ox = unit(rng) * scale, oy = unit(rng) * scale;
  auto ease = [](float t) { return 0.5f - 0.5f * std::cos(t * 3.14159265f); };
  std::vector<float> field(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const float gy = (y + oy) / scale;
    const int y0 = static_cast<int>(gy);
    const float ty = ease(gy - y0);
    for (int x = 0; x < width; ++x) {
      const float gx = (x + ox) / scale;
      const int x0 = static_cast<int>(gx);
      const float tx = ease(gx - x0);
      const float a = grid[static_cast<std::size_t>(y0) * gw + x0], b = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
      const float c = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
      const float d = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
      field[static_cast<std::size_t>(y) * width + x] = (a + tx * (b - a)) + ty * ((c + tx * (d - c)) - (a + tx * (b - a)));
    }
  }
  return field;
}

// Zero-mean grain with correlation length `scale`, rescaled to the standard
// deviation of uniform(-1, 1).
std::vector<float> grain_field(Rng& rng, int width, int height, float scale) {
  std::vector<float> f;
  if (scale <= 1.0f) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    f.resize(static_cast<std::size_t>(width) * height);
    for (float& v : f) v = u(rng);
    return f;
  }
  f = smooth_field(rng, width, height, scale);
  double sum = 0.0, sq = 0.0;
  for (float v : f) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(f.size()), mean = sum / n;
  const double sd = std::sqrt(std::max(1e-12, sq / n - mean * mean));
  const double k = (1.0 / std::sqrt(3.0)) / sd;
  for (float& v : f) v = static_cast<float>((v - mean) * k);
  return f;
}

LabelMap tissue_labels(Rng& rng, const SceneConfig& cfg) {
  for (int attempt = 0; attempt < kCoverageAttempts; ++attempt) {
    std::vector<std::vector<float>> fields;
    for (int t = 0; t < cfg.tissue_classes; ++t) {
      fields.push_back(smooth_field(rng, cfg.width, cfg.height, cfg.tissue_blob_scale));
    }
    LabelMap m{cfg.width, cfg.height, std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.width) * cfg.height)};
    std::vector<int> seen(static_cast<std::size_t>(cfg.tissue_classes), 0);
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
      int best = 0;
      for (int t = 1; t < cfg.tissue_classes; ++t) {
        if (fields[static_cast<std::size_t>(t)][i] > fields[static_cast<std::size_t>(best)][i]) best = t;
      }
      m.labels[i] = static_cast<std::uint8_t>(best);
      seen[static_cast<std::size_t>(best)] = 1;
    }
    if (std::all_of(seen.begin(), seen.end(), [](int s) { return s != 0; })) return m;
  }
  throw std::runtime_error("generate_scene: tissue layout failed to cover all classes");
}

std::vector<PointAnnotation> place_nuclei(Rng& rng, const SceneConfig& cfg, int count) {
  // Centres stay within the hull of pixel centres so mirrored views remain valid.
  std::uniform_real_distribution<double> ux(0.0, cfg.width - 1.0), uy(0.0, cfg.height - 1.0);
  const double min_d2 = static_cast<double>(cfg.min_distance) * cfg.min_distance;
  const int draws_per_point = 200;
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    std::vector<PointAnnotation> pts;
    int draws = 0;
    while (static_cast<int>(pts.size()) < count && draws < draws_per_point * count) {
      ++draws;
      const float x = quantize3(ux(rng));
      const float y = quantize3(uy(rng));
      bool ok = true;
      for (const auto& p : pts) {
        const double dx = p.x - x, dy = p.y - y;
        if (dx * dx + dy * dy < min_d2) {
          ok = false;
          break;
        }
      }
      if (ok) pts.push_back({x, y, 0});
    }
    if (static_cast<int>(pts.size()) == count) return pts;
  }
  throw std::runtime_error("generate_scene: cannot place " + std::to_string(count) + " nuclei at minimum distance " +
                           std::to_string(cfg.min_distance) + " px");
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 16 || height < 16 || width % 16 || height % 16) {
    throw ConfigError("scene width and height must be positive multiples of 16");
  }
  if (tissue_classes < 1 || tissue_classes > 255) throw ConfigError("scene tissue_classes must be in [1, 255]");
  if (nucleus_classes < 1) throw ConfigError("scene nucleus_classes must be >= 1");
  if (nuclei_min < 0 || nuclei_max < nuclei_min) throw ConfigError("scene nuclei range is invalid");
  if (!(tissue_blob_scale >= 1.0f)) throw ConfigError("scene tissue_blob_scale must be >= 1");
  if (!(min_distance >= 0.0f)) throw ConfigError("scene min_distance must be >= 0");
  if (!(tint_contrast >= 0.0f && tint_contrast <= 1.0f)) throw ConfigError("scene tint_contrast must be in [0,1]");
  if (!(cytoplasm_radius >= 0.0f && cytoplasm_radius <= 32.0f)) throw ConfigError("scene cytoplasm_radius must be in [0,32]");
  if (!(texture_noise >= 0.0f && texture_noise <= 0.25f)) throw ConfigError("scene texture_noise must be in [0,0.25]");
  if (static_cast<int>(affinity.size()) != tissue_classes) throw ConfigError("affinity must have T rows");
  for (const auto& row : affinity) {
    if (static_cast<int>(row.size()) != nucleus_classes) throw ConfigError("affinity rows must have K entries");
    double total = 0.0;
    for (double v : row) {
      if (v < 0.0) throw ConfigError("affinity entries must be >= 0");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ConfigError("affinity rows must sum to 1");
  }
  if (static_cast<int>(appearance.size()) != nucleus_classes) throw ConfigError("appearance must have K entries");
  for (int a : appearance) {
    if (a < 0 || a >= static_cast<int>(kNucleusLook.size())) throw ConfigError("appearance group out of range");
  }
}

nlohmann::json SceneConfig::to_json() const {
  return {{"width", width},
          {"height", height},
          {"tissue_classes", tissue_classes},
          {"nucleus_classes", nucleus_classes},
          {"nuclei_min", nuclei_min},
          {"nuclei_max", nuclei_max},
          {"tissue_blob_scale", tissue_blob_scale},
          {"min_distance", min_distance},
          {"tint_contrast", tint_contrast},
          {"texture_noise", texture_noise},
          {"cytoplasm_radius", cytoplasm_radius},
          {"affinity", affinity},
          {"appearance", appearance},
          {"seed", seed}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  try {
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.tissue_classes = j.at("tissue_classes").get<int>();
    c.nucleus_classes = j.at("nucleus_classes").get<int>();
    c.nuclei_min = j.at("nuclei_min").get<int>();
    c.nuclei_max = j.at("nuclei_max").get<int>();
    c.tissue_blob_scale = j.at("tissue_blob_scale").get<float>();
    c.min_distance = j.at("min_distance").get<float>();
    c.tint_contrast = j.at("tint_contrast").get<float>();
    c.texture_noise = j.at("texture_noise").get<float>();
    c.cytoplasm_radius = j.at("cytoplasm_radius").get<float>();
    c.affinity = j.at("affinity").get<std::vector<std::vector<double>>>();
    c.appearance = j.at("appearance").get<std::vector<int>>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::vector<double>> identity_affinity(int classes) {
  std::vector<std::vector<double>> a(static_cast<std::size_t>(classes), std::vector<double>(classes, 0.0));
  for (int i = 0; i < classes; ++i) a[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
  return a;
}

std::vector<std::vector<double>> uniform_affinity(int tissue_classes, int nucleus_classes) {
  return std::vector<std::vector<double>>(static_cast<std::size_t>(tissue_classes),
                                          std::vector<double>(nucleus_classes, 1.0 / nucleus_classes));
}

SceneConfig reference_scene_config(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.affinity = {{0.95, 0.0, 0.05}, {0.0, 0.95, 0.05}, {0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}};
  c.appearance = {0, 0, 1};
  return c;
}

Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = scene_rng(cfg.seed, index);
  Scene s;
  s.tissue_mask = tissue_labels(rng, cfg);

  const int w = cfg.width, h = cfg.height;
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<float> rgb(3 * plane);
  const auto tints = tissue_tints(cfg.tissue_classes, cfg.tint_contrast);
  std::vector<std::vector<float>> textures;
  for (int t = 0; t < cfg.tissue_classes; ++t) {
    textures.push_back(grain_field(rng, w, h, kTextureScale[static_cast<std::size_t>(t) % kTextureScale.size()]));
  }
  std::uniform_real_distribution<float> grain(-cfg.texture_noise, cfg.texture_noise);
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint8_t t = s.tissue_mask.labels[i];
    const auto& tint = tints[t];
    const float g = cfg.texture_noise * textures[t][i];
    for (int c = 0; c < 3; ++c) rgb[c * plane + i] = tint[static_cast<std::size_t>(c)] + g + grain(rng) * 0.5f;
  }

  std::uniform_int_distribution<int> count_dist(cfg.nuclei_min, cfg.nuclei_max);
  const int count = count_dist(rng);
  s.points = place_nuclei(rng, cfg, count);
  std::vector<std::discrete_distribution<int>> class_dist;
  for (const auto& row : cfg.affinity) class_dist.emplace_back(row.begin(), row.end());
  for (auto& p : s.points) {
    const int px = std::clamp(static_cast<int>(std::lround(p.x)), 0, w - 1);
    const int py = std::clamp(static_cast<int>(std::lround(p.y)), 0, h - 1);
    const std::uint8_t tissue = s.tissue_mask.at(px, py);
    s.point_tissue.push_back(tissue);
    p.class_id = class_dist[tissue](rng);
  }

  // Cytoplasm: a tissue-neutral disc around every nucleus with a 2 px soft rim.
  if (cfg.cytoplasm_radius > 0.0f) {
    const auto cyto = tissue_tints(cfg.tissue_classes, 0.0f).front();
    const float r = cfg.cytoplasm_radius;
    const int reach = static_cast<int>(std::ceil(r + 1.0f));
    std::vector<float> alpha(plane, 0.0f);
    for (const auto& p : s.points) {
      const int px = static_cast<int>(std::lround(p.x)), py = static_cast<int>(std::lround(p.y));
      for (int y = std::max(0, py - reach); y <= std::min(h - 1, py + reach); ++y) {
        for (int x = std::max(0, px - reach); x <= std::min(w - 1, px + reach); ++x) {
          const float d = std::hypot(x - p.x, y - p.y);
          const float a = std::clamp((r + 1.0f - d) / 2.0f, 0.0f, 1.0f);
          float& slot = alpha[static_cast<std::size_t>(y) * w + x];
          slot = std::max(slot, a);
        }
      }
    }
    for (std::size_t i = 0; i < plane; ++i) {
      if (alpha[i] == 0.0f) continue;
      const float g = grain(rng);
      for (int c = 0; c < 3; ++c) {
        float& v = rgb[c * plane + i];
        v = v + alpha[i] * (cyto[static_cast<std::size_t>(c)] + g + grain(rng) * 0.5f - v);
      }
    }
  }

  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (const auto& p : s.points) {
    const int px = std::clamp(static_cast<int>(std::lround(p.x)), 0, w - 1);
    const int py = std::clamp(static_cast<int>(std::lround(p.y)), 0, h - 1);
    const NucleusLook& look = kNucleusLook[static_cast<std::size_t>(cfg.appearance[static_cast<std::size_t>(p.class_id)])];
    const float sigma = look.sigma_lo + unit(rng) * (look.sigma_hi - look.sigma_lo);
    const int reach = static_cast<int>(std::ceil(3.0f * sigma));
    for (int y = std::max(0, py - reach); y <= std::min(h - 1, py + reach); ++y) {
      for (int x = std::max(0, px - reach); x <= std::min(w - 1, px + reach); ++x) {
        const float dx = x - p.x, dy = y - p.y;
        const float a = 0.9f * std::exp(-(dx * dx + dy * dy) / (2.0f * sigma * sigma));
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        for (int c = 0; c < 3; ++c) {
          float& v = rgb[c * plane + i];
          v = v + a * (look.color[static_cast<std::size_t>(c)] - v);
        }
      }
    }
  }
  for (float& v : rgb) v = quantize8(v);
  s.image = Tensor(Shape{3, h, w}, std::move(rgb));
  return s;
}

Image8 image_to_rgb8(const Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a [3,H,W] image, got " + shape_str(image.shape()));
  const int h = image.size(1), w = image.size(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Image8 out{w, h, 3, std::vector<std::uint8_t>(3 * plane)};
  const auto v = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v[c * plane + i], 0.0f, 1.0f) * 255.0f));
    }
  }
  return out;
}

Tensor rgb8_to_image(const Image8& rgb) {
  if (rgb.channels != 3) throw ShapeError("expected an RGB image");
  const std::size_t plane = static_cast<std::size_t>(rgb.width) * rgb.height;
  std::vector<float> v(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) v[c * plane + i] = static_cast<float>(rgb.pixels[3 * i + c]) / 255.0f;
  }
  return Tensor(Shape{3, rgb.height, rgb.width}, std::move(v));
}

Scene transform_scene(const Scene& scene, int op) {
  if (op < 0 || op >= kDihedralOps) throw InvalidArgument("transform_scene: op must lie in [0, 8)");
  const int w = scene.tissue_mask.width, h = scene.tissue_mask.height;
  const bool transpose = (op & 4) != 0, flip_x = (op & 1) != 0, flip_y = (op & 2) != 0;
  if (transpose && w != h) throw InvalidArgument("transform_scene: transposing needs a square scene");
  // Output pixel (x, y) reads source pixel src(x, y).
  const auto src = [&](int x, int y) {
    if (flip_x) x = w - 1 - x;
    if (flip_y) y = h - 1 - y;
    if (transpose) std::swap(x, y);
    return static_cast<std::size_t>(y) * w + x;
  };
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  const auto in = scene.image.data();
  std::vector<float> rgb(3 * plane);
  Scene out;
  out.tissue_mask = {w, h, std::vector<std::uint8_t>(plane)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t to = static_cast<std::size_t>(y) * w + x, from = src(x, y);
      for (std::size_t c = 0; c < 3; ++c) rgb[c * plane + to] = in[c * plane + from];
      out.tissue_mask.labels[to] = scene.tissue_mask.labels[from];
    }
  }
  out.image = Tensor(scene.image.shape(), std::move(rgb));
  out.points = scene.points;
  for (auto& p : out.points) {
    if (transpose) std::swap(p.x, p.y);
    if (flip_x) p.x = static_cast<float>(w - 1) - p.x;
    if (flip_y) p.y = static_cast<float>(h - 1) - p.y;
  }
  out.point_tissue = scene.point_tissue;
  return out;
}

SceneFiles write_scene(const fs::path& dir, const std::string& stem, const Scene& scene) {
  SceneFiles files{stem + ".png", stem + "_mask.png", stem + "_points.csv"};
  write_png(dir / files.image, image_to_rgb8(scene.image));
  write_png(dir / files.mask, Image8{scene.tissue_mask.width, scene.tissue_mask.height, 1, scene.tissue_mask.labels});
  write_points_csv(dir / files.points, scene.points);
  return files;
}

namespace {

Image8 read_png_checked(const fs::path& path) {
  try {
    return read_png(path);
  } catch (const ParseError&) {
    const auto size = fs::exists(path) ? fs::file_size(path) : 0;
    throw ParseError(path.string() + ": corrupt or truncated PNG", static_cast<std::size_t>(size));
  }
}

}  // namespace

Scene read_scene(const fs::path& dir, const SceneFiles& files, int num_classes, int tissue_classes) {
  Scene s;
  s.image = rgb8_to_image(read_png_checked(dir / files.image));
  const Image8 mask = read_png_checked(dir / files.mask);
  if (mask.channels != 1) throw ParseError(files.mask + ": tissue mask must be single-channel", 0);
  if (mask.width != s.image.size(2) || mask.height != s.image.size(1)) {
    throw ParseError(files.mask + ": mask size differs from image", 0);
  }
  s.tissue_mask = {mask.width, mask.height, mask.pixels};
  if (tissue_classes > 0) {
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
      if (mask.pixels[i] >= tissue_classes) {
        throw ParseError(files.mask + ": tissue label " + std::to_string(mask.pixels[i]) + " out of range", i);
      }
    }
  }
  s.points = read_points_csv(dir / files.points, num_classes);
  for (const auto& p : s.points) {
    const int px = std::clamp(static_cast<int>(std::lround(p.x)), 0, mask.width - 1);
    const int py = std::clamp(static_cast<int>(std::lround(p.y)), 0, mask.height - 1);
    s.point_tissue.push_back(s.tissue_mask.at(px, py));
  }
  return s;
}

int train_count_for(int count) { return static_cast<int>(std::lround(0.8 * count)); }

Dataset generate_dataset(const SceneConfig& cfg, int count, int tissue_count) {
  if (count < 1) throw InvalidArgument("dataset count must be >= 1");
  if (tissue_count < 0) throw InvalidArgument("tissue scene count must be >= 0");
  Dataset d;
  d.config = cfg;
  const int n_train = train_count_for(count);
  for (int i = 0; i < count; ++i) {
    (i < n_train ? d.train : d.test).push_back(generate_scene(cfg, static_cast<std::uint64_t>(i)));
  }
  for (int i = 0; i < tissue_count; ++i) d.tissue.push_back(generate_scene(cfg, static_cast<std::uint64_t>(count + i)));
  return d;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["seed"] = data.config.seed;
  manifest["scene_config"] = data.config.to_json();
  int index = 0;
  const std::pair<const char*, const std::vector<Scene>*> splits[] = {
      {"train", &data.train}, {"test", &data.test}, {"tissue", &data.tissue}};
  for (const auto& [name, split] : splits) {
    auto& entries = manifest["splits"][name];
    entries = nlohmann::json::array();
    for (const Scene& s : *split) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "scene_%04d", index++);
      const SceneFiles f = write_scene(dir, stem, s);
      entries.push_back({{"image", f.image}, {"mask", f.mask}, {"points", f.points}});
    }
  }
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ConfigError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest.json: " + std::string(e.what()), e.byte);
  }
  Dataset d;
  d.config = SceneConfig::from_json(manifest.at("scene_config"));
  const std::pair<const char*, std::vector<Scene>*> splits[] = {
      {"train", &d.train}, {"test", &d.test}, {"tissue", &d.tissue}};
  for (const auto& [name, split] : splits) {
    const auto& listed = manifest.at("splits");
    if (!listed.contains(name)) {
      if (split == &d.tissue) continue;  // optional
      throw ConfigError("manifest.json: split '" + std::string(name) + "' missing");
    }
    for (const auto& e : listed.at(name)) {
      const SceneFiles f{e.at("image").get<std::string>(), e.at("mask").get<std::string>(),
                         e.at("points").get<std::string>()};
      split->push_back(read_scene(dir, f, d.config.nucleus_classes, d.config.tissue_classes));
    }
  }
  return d;
}

}  // namespace tand
