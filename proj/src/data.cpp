// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace strata {

namespace {

std::array<float, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

double box_sdf(double x, double y, const std::array<double, 4>& b) {
  const double cx = 0.5 * (b[0] + b[2]), cy = 0.5 * (b[1] + b[3]);
  const double hx = 0.5 * (b[2] - b[0]), hy = 0.5 * (b[3] - b[1]);
  const double dx = std::abs(x - cx) - hx, dy = std::abs(y - cy) - hy;
  const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dx, dy), 0.0);
}

// Color and coverage of one primitive at (x, y), already shifted by motion.
double coverage(const Primitive& p, double x, double y, double softness,
                std::array<float, 3>& color) {
  double sd;
  color = p.color;
  switch (p.kind) {
    case PrimitiveKind::Circle:
      sd = std::hypot(x - p.box[0], y - p.box[1]) - p.box[2];
      break;
    case PrimitiveKind::Gradient: {
      sd = box_sdf(x, y, p.box);
      const double cx = 0.5 * (p.box[0] + p.box[2]), cy = 0.5 * (p.box[1] + p.box[3]);
      const double len = std::hypot(p.box[2] - p.box[0], p.box[3] - p.box[1]);
      const double t = std::clamp(
          0.5 + ((x - cx) * std::cos(p.angle) + (y - cy) * std::sin(p.angle)) / len, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        color[c] = static_cast<float>((1.0 - t) * p.color[c] + t * p.color2[c]);
      }
      break;
    }
    default:
      sd = box_sdf(x, y, p.box);
      break;
  }
  return std::clamp(0.5 - sd / softness, 0.0, 1.0);
}

std::array<double, 3> shade(const SceneSpec& scene, double x, double y, double time,
                            double softness) {
  std::array<double, 3> out{scene.background[0], scene.background[1], scene.background[2]};
  std::array<float, 3> col;
  for (const auto& p : scene.primitives) {
    const double a = coverage(p, x - p.vx * time, y - p.vy * time, softness, col);
    if (a <= 0.0) continue;
    for (int c = 0; c < 3; ++c) out[c] = (1.0 - a) * out[c] + a * col[c];
  }
  return out;
}

double corner_coord(int i, int n) { return n > 1 ? static_cast<double>(i) / (n - 1) : 0.5; }

}  // namespace

Sample render(const SceneSpec& scene, const ScaleSpec& target, const RenderOptions& opt) {
  target.validate();
  STRATA_CHECK(opt.supersample >= 1 && opt.softness > 0, "invalid render options");
  Sample out(target);
  const int S = opt.supersample;
  const double du = target.width > 1 ? 1.0 / (target.width - 1) : 1.0;
  const double dv = target.height > 1 ? 1.0 / (target.height - 1) : 1.0;
  for (int f = 0; f < target.frames; ++f) {
    const double time = target.is_image() ? 0.0 : static_cast<double>(f + 1) / target.fps;
    for (int r = 0; r < target.height; ++r) {
      for (int c = 0; c < target.width; ++c) {
        std::array<double, 3> acc{0, 0, 0};
        for (int sy = 0; sy < S; ++sy) {
          const double y = corner_coord(r, target.height) + dv * ((sy + 0.5) / S - 0.5);
          for (int sx = 0; sx < S; ++sx) {
            const double x = corner_coord(c, target.width) + du * ((sx + 0.5) / S - 0.5);
            const auto v = shade(scene, x, y, time, opt.softness);
            for (int ch = 0; ch < 3; ++ch) acc[ch] += v[ch];
          }
        }
        for (int ch = 0; ch < 3; ++ch) {
          out.at(f, r, c, ch) = static_cast<float>(std::clamp(acc[ch] / (S * S), 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

Sample resize_corner_aligned(const Sample& sample, int height, int width) {
  STRATA_CHECK(height >= 1 && width >= 1, "resize target must be at least 1x1");
  const ScaleSpec& s = sample.scale;
  if (height == s.height && width == s.width) return sample;
  ScaleSpec t = s;
  t.height = height;
  t.width = width;
  Sample out(t);
  auto src_coord = [](int i, int n_out, int n_in) {
    return n_out > 1 ? static_cast<double>(i) * (n_in - 1) / (n_out - 1) : 0.0;
  };
  for (int f = 0; f < s.frames; ++f) {
    for (int r = 0; r < height; ++r) {
      const double sy = src_coord(r, height, s.height);
      const int y0 = std::min(static_cast<int>(std::floor(sy)), s.height - 1);
      const int y1 = std::min(y0 + 1, s.height - 1);
      const double wy = sy - y0;
      for (int c = 0; c < width; ++c) {
        const double sx = src_coord(c, width, s.width);
        const int x0 = std::min(static_cast<int>(std::floor(sx)), s.width - 1);
        const int x1 = std::min(x0 + 1, s.width - 1);
        const double wx = sx - x0;
        for (int ch = 0; ch < 3; ++ch) {
          const double top = (1 - wx) * sample.at(f, y0, x0, ch) + wx * sample.at(f, y0, x1, ch);
          const double bot = (1 - wx) * sample.at(f, y1, x0, ch) + wx * sample.at(f, y1, x1, ch);
          out.at(f, r, c, ch) = static_cast<float>((1 - wy) * top + wy * bot);
        }
      }
    }
  }
  return out;
}

double psnr(const Sample& a, const Sample& b, double peak) {
  STRATA_CHECK_SHAPE(a.pixels.shape() == b.pixels.shape(), "psnr: shapes ",
                     to_string(a.pixels.shape()), " and ", to_string(b.pixels.shape()));
  double se = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Sample& a, const Sample& b) {
  STRATA_CHECK_SHAPE(a.pixels.shape() == b.pixels.shape(), "ssim: shapes ",
                     to_string(a.pixels.shape()), " and ", to_string(b.pixels.shape()));
  constexpr int R = 5;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double g[2 * R + 1];
  for (int i = -R; i <= R; ++i) g[i + R] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
  const ScaleSpec& s = a.scale;
  double total = 0;
  std::size_t count = 0;
  for (int f = 0; f < s.frames; ++f) {
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
          double wsum = 0, ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
          for (int dy = -R; dy <= R; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= s.height) continue;
            for (int dx = -R; dx <= R; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= s.width) continue;
              const double w = g[dy + R] * g[dx + R];
              const double va = a.at(f, yy, xx, ch), vb = b.at(f, yy, xx, ch);
              wsum += w;
              ma += w * va;
              mb += w * vb;
              aa += w * va * va;
              bb += w * vb * vb;
              ab += w * va * vb;
            }
          }
          ma /= wsum;
          mb /= wsum;
          const double va = aa / wsum - ma * ma, vb = bb / wsum - mb * mb;
          const double cov = ab / wsum - ma * mb;
          total += ((2 * ma * mb + C1) * (2 * cov + C2)) /
                   ((ma * ma + mb * mb + C1) * (va + vb + C2));
          ++count;
        }
      }
    }
  }
  return total / static_cast<double>(count);
}

SceneSpec make_scene(std::uint64_t seed, int class_id, int complexity, bool motion) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSpec s;
  s.seed = seed;
  s.class_id = class_id;
  // Classes differ by base hue; primitives vary around it.
  const double hue = 0.15 + 0.25 * class_id + 0.05 * (u(rng) - 0.5);
  s.background = hsv(hue, 0.35 + 0.3 * u(rng), 0.25 + 0.5 * u(rng));
  for (int i = 0; i < complexity; ++i) {
    Primitive p;
    const double kind = u(rng);
    p.kind = kind < 0.45 ? PrimitiveKind::Rect : kind < 0.85 ? PrimitiveKind::Circle
                                                             : PrimitiveKind::Gradient;
    p.color = hsv(hue + 0.3 * (u(rng) - 0.5), 0.4 + 0.6 * u(rng), 0.2 + 0.8 * u(rng));
    p.color2 = hsv(hue + 0.5 * (u(rng) - 0.5), 0.4 + 0.6 * u(rng), 0.2 + 0.8 * u(rng));
    p.angle = 2.0 * M_PI * u(rng);
    double x0, y0, x1, y1;
    if (p.kind == PrimitiveKind::Circle) {
      const double r = 0.08 + 0.17 * u(rng);
      const double cx = r + (1 - 2 * r) * u(rng), cy = r + (1 - 2 * r) * u(rng);
      p.box = {cx, cy, r, 0};
      x0 = cx - r, x1 = cx + r, y0 = cy - r, y1 = cy + r;
    } else {
      const double w = 0.15 + 0.45 * u(rng), h = 0.15 + 0.45 * u(rng);
      x0 = (1 - w) * u(rng), y0 = (1 - h) * u(rng);
      x1 = x0 + w, y1 = y0 + h;
      p.box = {x0, y0, x1, y1};
    }
    if (motion) {
      // Keep the bounding box inside the unit square for the longest clip.
      p.vx = (-x0 + (1 - x1 + x0) * u(rng)) / kMaxClipSeconds;
      p.vy = (-y0 + (1 - y1 + y0) * u(rng)) / kMaxClipSeconds;
    }
    s.primitives.push_back(p);
  }
  return s;
}

std::vector<SceneSpec> make_corpus(const CorpusOptions& opt) {
  STRATA_CHECK(opt.min_complexity >= 0 && opt.max_complexity >= opt.min_complexity,
               "invalid complexity range [", opt.min_complexity, ", ", opt.max_complexity, "]");
  STRATA_CHECK(opt.classes >= 1, "need at least one class");
  std::vector<SceneSpec> out;
  out.reserve(opt.count);
  std::mt19937_64 rng(opt.seed);
  const int strata = opt.max_complexity - opt.min_complexity + 1;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const int complexity = opt.min_complexity + static_cast<int>(i % strata);
    const int cls = static_cast<int>((i / strata) % opt.classes);
    out.push_back(make_scene(rng(), cls, complexity, opt.motion));
  }
  return out;
}

namespace {

const char* kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::Circle: return "circle";
    case PrimitiveKind::Gradient: return "gradient";
    default: return "rect";
  }
}

PrimitiveKind kind_from(const std::string& s) {
  if (s == "rect") return PrimitiveKind::Rect;
  if (s == "circle") return PrimitiveKind::Circle;
  if (s == "gradient") return PrimitiveKind::Gradient;
  throw Error("unknown primitive kind '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const SceneSpec& scene) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : scene.primitives) {
    prims.push_back({{"kind", kind_name(p.kind)},
                     {"box", p.box},
                     {"color", p.color},
                     {"color2", p.color2},
                     {"angle", p.angle},
                     {"velocity", {p.vx, p.vy}}});
  }
  return {{"seed", scene.seed},
          {"class_id", scene.class_id},
          {"background", scene.background},
          {"primitives", prims}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.class_id = j.at("class_id").get<int>();
  s.background = j.at("background").get<std::array<float, 3>>();
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    p.kind = kind_from(pj.at("kind").get<std::string>());
    p.box = pj.at("box").get<std::array<double, 4>>();
    p.color = pj.at("color").get<std::array<float, 3>>();
    p.color2 = pj.value("color2", p.color);
    p.angle = pj.value("angle", 0.0);
    if (pj.contains("velocity")) {
      const auto v = pj.at("velocity").get<std::array<double, 2>>();
      p.vx = v[0];
      p.vy = v[1];
    }
    s.primitives.push_back(p);
  }
  return s;
}

nlohmann::json corpus_to_json(const std::vector<SceneSpec>& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : corpus) arr.push_back(to_json(s));
  return arr;
}

std::vector<SceneSpec> corpus_from_json(const nlohmann::json& j) {
  STRATA_CHECK(j.is_array(), "corpus manifest must be a JSON list of scenes");
  std::vector<SceneSpec> out;
  for (const auto& e : j) out.push_back(scene_from_json(e));
  return out;
}

void save_corpus(const std::vector<SceneSpec>& corpus, const std::string& path) {
  std::ofstream f(path);
  STRATA_CHECK(f.good(), "cannot write corpus manifest ", path);
  f << corpus_to_json(corpus).dump(1) << "\n";
}

std::vector<SceneSpec> load_corpus(const std::string& path) {
  std::ifstream f(path);
  STRATA_CHECK(f.good(), "cannot read corpus manifest ", path);
  return corpus_from_json(nlohmann::json::parse(f));
}

}  // namespace strata
