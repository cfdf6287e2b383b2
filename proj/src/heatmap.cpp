// SPDX-License-Identifier: Apache-2.0
#include "tandkit/heatmap.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tandkit/error.hpp"

namespace tand {

namespace {

// Views [1,H,W], [1,1,H,W] or [K,H,W], [1,K,H,W] as (channels, H, W).
std::array<int, 3> chw_extents(const Tensor& t, const char* what) {
  if (t.dim() == 3) return {t.size(0), t.size(1), t.size(2)};
  if (t.dim() == 4 && t.size(0) == 1) return {t.size(1), t.size(2), t.size(3)};
  throw ShapeError(std::string(what) + ": expected [C,H,W] or [1,C,H,W], got " + shape_str(t.shape()));
}

std::string format_fixed3(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(v));
  return buf;
}

float parse_float(std::string_view field, std::size_t line) {
  // strtof needs a terminated buffer; fields are short.
  std::string s(field);
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError("bad number '" + s + "'", line);
  }
  return v;
}

int parse_int(std::string_view field, std::size_t line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("bad integer '" + std::string(field) + "'", line);
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

int map_cell(float coord, int stride, int extent) {
  const int cell = static_cast<int>(std::floor((coord + 0.5f) / static_cast<float>(stride)));
  return std::clamp(cell, 0, extent - 1);
}

CenterMap encode_center_map(std::span<const PointAnnotation> points, int map_h, int map_w, int stride, float sigma) {
  if (!(sigma > 0.0f)) throw InvalidArgument("encode_center_map: sigma must be > 0");
  if (stride < 1) throw InvalidArgument("encode_center_map: stride must be >= 1");
  if (map_h < 1 || map_w < 1) throw InvalidArgument("encode_center_map: empty map");
  const float img_w = static_cast<float>(map_w * stride), img_h = static_cast<float>(map_h * stride);

  CenterMap out{Tensor(Shape{1, map_h, map_w}), sigma, stride};
  auto values = out.values.data();
  const float cutoff = 3.0f * sigma;
  const int reach = static_cast<int>(std::floor(cutoff));
  const double inv_two_var = 1.0 / (2.0 * static_cast<double>(sigma) * sigma);
  for (const PointAnnotation& p : points) {
    if (!(p.x >= 0.0f && p.x < img_w && p.y >= 0.0f && p.y < img_h)) {
      throw InvalidArgument("encode_center_map: point (" + format_fixed3(p.x) + "," + format_fixed3(p.y) +
                            ") outside " + std::to_string(static_cast<int>(img_w)) + "x" +
                            std::to_string(static_cast<int>(img_h)) + " image");
    }
    const int cu = map_cell(p.x, stride, map_w), cv = map_cell(p.y, stride, map_h);
    for (int dv = -reach; dv <= reach; ++dv) {
      const int v = cv + dv;
      if (v < 0 || v >= map_h) continue;
      for (int du = -reach; du <= reach; ++du) {
        const int u = cu + du;
        if (u < 0 || u >= map_w) continue;
        const int d2 = du * du + dv * dv;
        if (static_cast<float>(d2) > cutoff * cutoff) continue;
        const float g = static_cast<float>(std::exp(-d2 * inv_two_var));
        float& cell = values[static_cast<std::size_t>(v) * map_w + u];
        cell = std::max(cell, g);
      }
    }
  }
  return out;
}

std::vector<Detection> decode_peaks(const Tensor& heat, const DecodeParams& params) {
  if (!(params.threshold > 0.0f && params.threshold < 1.0f)) {
    throw InvalidArgument("decode_peaks: threshold must lie in (0, 1)");
  }
  if (params.window < 3 || params.window % 2 == 0) throw InvalidArgument("decode_peaks: window must be odd and >= 3");
  const auto [c, h, w] = chw_extents(heat, "decode_peaks");
  if (c != 1) throw ShapeError("decode_peaks: heatmap must have one channel");
  const auto v = heat.data();
  const int r = params.window / 2;

  std::vector<Detection> dets;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float s = v[static_cast<std::size_t>(y) * w + x];
      if (!(s >= params.threshold)) continue;
      bool peak = true;
      for (int dy = -r; dy <= r && peak; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if ((dx == 0 && dy == 0) || xx < 0 || xx >= w) continue;
          if (!(s > v[static_cast<std::size_t>(yy) * w + xx])) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      Detection d;
      d.map_x = x;
      d.map_y = y;
      d.x = cell_center(x, params.stride);
      d.y = cell_center(y, params.stride);
      d.score = s;
      dets.push_back(d);
    }
  }
  // Row-major scan order already encodes the (row, col) tie rule.
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (params.max_dets >= 0 && dets.size() > static_cast<std::size_t>(params.max_dets)) dets.resize(params.max_dets);
  return dets;
}

std::vector<Detection> assign_classes(std::vector<Detection> dets, const Tensor& logits) {
  const auto [k, h, w] = chw_extents(logits, "assign_classes");
  const auto v = logits.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (Detection& d : dets) {
    if (d.map_x < 0 || d.map_x >= w || d.map_y < 0 || d.map_y >= h) {
      throw InvalidArgument("assign_classes: detection outside the logits grid");
    }
    const std::size_t at = static_cast<std::size_t>(d.map_y) * w + d.map_x;
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (v[c * plane + at] > v[best * plane + at]) best = c;
    }
    d.class_id = best;
  }
  return dets;
}

std::string format_points_csv(std::span<const PointAnnotation> points) {
  std::string out = "x,y,class_id\n";
  for (const auto& p : points) {
    out += format_fixed3(p.x) + "," + format_fixed3(p.y) + "," + std::to_string(p.class_id) + "\n";
  }
  return out;
}

std::vector<PointAnnotation> parse_points_csv(const std::string& text, int num_classes) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("points CSV is empty", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,class_id") throw ParseError("points CSV header must be 'x,y,class_id'", 1);
  std::vector<PointAnnotation> points;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields", line_no);
    PointAnnotation p{parse_float(fields[0], line_no), parse_float(fields[1], line_no),
                      parse_int(fields[2], line_no)};
    if (p.class_id < 0 || (num_classes > 0 && p.class_id >= num_classes)) {
      throw ParseError("class_id " + std::to_string(p.class_id) + " out of range", line_no);
    }
    points.push_back(p);
  }
  return points;
}

void write_points_csv(const std::filesystem::path& path, std::span<const PointAnnotation> points) {
  write_text_atomic(path, format_points_csv(points));
}

std::vector<PointAnnotation> read_points_csv(const std::filesystem::path& path, int num_classes) {
  return parse_points_csv(read_text(path), num_classes);
}

std::string format_detections_csv(std::span<const Detection> dets) {
  std::string out = "x,y,score,class_id\n";
  for (const auto& d : dets) {
    char score[32];
    std::snprintf(score, sizeof score, "%.6f", static_cast<double>(d.score));
    out += format_fixed3(d.x) + "," + format_fixed3(d.y) + "," + score + "," +
           (d.class_id ? std::to_string(*d.class_id) : std::string()) + "\n";
  }
  return out;
}

Image8 heatmap_to_image(const Tensor& heat) {
  const auto [c, h, w] = chw_extents(heat, "heatmap_to_image");
  if (c != 1) throw ShapeError("heatmap_to_image: single-channel map required");
  Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)};
  const auto v = heat.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float p = std::clamp(v[i], 0.0f, 1.0f);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0f * p));
  }
  return img;
}

}  // namespace tand
