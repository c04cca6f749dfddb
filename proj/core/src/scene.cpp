#include "vclab/scene.hpp"

#include <algorithm>
#include <cmath>

#include "vclab/color.hpp"
#include "vclab/image_io.hpp"

namespace vclab {

DomainConfig DomainConfig::desk() {
  DomainConfig c;
  c.image_size = 32;
  c.optional_presence = 0.5;
  c.jitter_extent = 1.0;
  c.axes = {
      {"background_color", {"white", "gray", "black", "navy"}, false},
      {"border_style", {"thin", "thick"}, true},
      {"object_color", {"red", "green", "blue", "yellow"}, false},
      {"shape", {"circle", "square", "triangle"}, false},
      {"size", {"small", "medium", "large"}, false},
      {"texture", {"plain", "striped", "dotted"}, true},
  };
  return c;
}

const AxisDef* DomainConfig::find_axis(const std::string& name) const {
  for (const auto& a : axes) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::vector<std::string> DomainConfig::mandatory_axes() const {
  std::vector<std::string> out;
  for (const auto& a : axes) {
    if (!a.optional) out.push_back(a.name);
  }
  return out;
}

SceneSpec sample_scene(const DomainConfig& config, Rng& rng, uint64_t id) {
  VCLAB_CHECK_ARG(!config.axes.empty(), "domain has no axes");
  SceneSpec spec;
  spec.id = id;
  for (const auto& axis : config.axes) {
    VCLAB_CHECK_ARG(!axis.categories.empty(),
                    "axis " << axis.name << " has no categories");
    bool present = true;
    if (axis.optional) present = rng.bernoulli(config.optional_presence);
    if (!present) continue;
    AxisValue v;
    v.category = axis.categories[rng.randint(axis.categories.size())];
    v.nuance = rng.uniform();
    spec.axes[axis.name] = v;
  }
  spec.jitter_x = rng.uniform(-config.jitter_extent, config.jitter_extent);
  spec.jitter_y = rng.uniform(-config.jitter_extent, config.jitter_extent);
  return spec;
}

namespace scene_detail {

double object_hue(const std::string& category, double nuance) {
  if (category == "red") return std::fmod(350.0 + 30.0 * nuance, 360.0);
  if (category == "yellow") return 45.0 + 30.0 * nuance;
  if (category == "green") return 100.0 + 40.0 * nuance;
  if (category == "blue") return 200.0 + 40.0 * nuance;
  fail(ErrorCode::kInvalidArgument, "unknown object color " + category);
}

double object_hue_to_nuance(const std::string& category, double hue) {
  if (category == "red") {
    // the band wraps through zero; unwrap relative to the category boundary
    double h = hue >= 335.0 ? hue - 350.0 : hue + 10.0;
    return h / 30.0;
  }
  if (category == "yellow") return (hue - 45.0) / 30.0;
  if (category == "green") return (hue - 100.0) / 40.0;
  if (category == "blue") return (hue - 200.0) / 40.0;
  return -1.0;
}

std::string object_hue_category(double hue) {
  if (hue >= 335.0 || hue < 32.5) return "red";
  if (hue >= 32.5 && hue < 87.5) return "yellow";
  if (hue >= 87.5 && hue < 170.0) return "green";
  return "blue";
}

BgColor background_color(const std::string& category, double nuance) {
  float u = static_cast<float>(nuance);
  if (category == "white") return {0.0f, 0.0f, 0.88f + 0.12f * u};
  if (category == "gray") return {0.0f, 0.0f, 0.42f + 0.16f * u};
  if (category == "black") return {0.0f, 0.0f, 0.02f + 0.12f * u};
  if (category == "navy") return {250.0f, 0.70f, 0.20f + 0.20f * u};
  fail(ErrorCode::kInvalidArgument, "unknown background color " + category);
}

std::string background_category(float, float s, float v) {
  if (s >= 0.2f) return "navy";
  if (v >= 0.75f) return "white";
  if (v >= 0.30f) return "gray";
  return "black";
}

double background_value_to_nuance(const std::string& category, double v) {
  if (category == "white") return (v - 0.88) / 0.12;
  if (category == "gray") return (v - 0.42) / 0.16;
  if (category == "black") return (v - 0.02) / 0.12;
  if (category == "navy") return (v - 0.20) / 0.20;
  return -1.0;
}

double size_radius(const std::string& category, double nuance) {
  if (category == "small") return 5.5 + nuance;
  if (category == "medium") return 7.5 + nuance;
  if (category == "large") return 9.5 + nuance;
  fail(ErrorCode::kInvalidArgument, "unknown size " + category);
}

double size_radius_to_nuance(const std::string& category, double s) {
  if (category == "small") return s - 5.5;
  if (category == "medium") return s - 7.5;
  if (category == "large") return s - 9.5;
  return -1.0;
}

std::string size_category(double s) {
  if (s < 7.0) return "small";
  if (s < 9.0) return "medium";
  return "large";
}

double area_factor(const std::string& shape_category) {
  if (shape_category == "circle") {
    return 3.14159265358979323846 * kCircleFactor * kCircleFactor;
  }
  if (shape_category == "square") return 4.0 * kSquareFactor * kSquareFactor;
  if (shape_category == "triangle") {
    // Equilateral triangle with circumradius R: area = 3*sqrt(3)/4 * R^2.
    return 0.75 * std::sqrt(3.0) * kTriangleFactor * kTriangleFactor;
  }
  fail(ErrorCode::kInvalidArgument, "unknown shape " + shape_category);
}

namespace {

// Antiderivative of sqrt(r^2 - x^2).
double half_chord_integral(double r, double x) {
  double c = std::clamp(x / r, -1.0, 1.0);
  return 0.5 * (x * std::sqrt(std::max(0.0, r * r - x * x)) +
                r * r * std::asin(c));
}

}  // namespace

double circle_rect_area(double r, double x1, double x2, double y1, double y2) {
  x1 = std::clamp(x1, -r, r);
  x2 = std::clamp(x2, -r, r);
  if (x2 <= x1 || y2 <= y1 || y1 >= r || y2 <= -r) return 0.0;

  // Integrate len(x) = max(0, min(y2, c) - max(y1, -c)) with c = sqrt(r^2-x^2)
  // piecewise; regime changes only where c crosses |y1| or |y2|.
  std::vector<double> cuts = {x1, x2};
  for (double y : {y1, y2}) {
    if (std::abs(y) < r) {
      double xc = std::sqrt(r * r - y * y);
      for (double s : {-xc, xc}) {
        if (s > x1 && s < x2) cuts.push_back(s);
      }
    }
  }
  std::sort(cuts.begin(), cuts.end());

  double area = 0.0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    double a = cuts[i], b = cuts[i + 1];
    if (b - a <= 0.0) continue;
    double xm = 0.5 * (a + b);
    double cm = std::sqrt(std::max(0.0, r * r - xm * xm));
    double top = std::min(y2, cm);
    double bottom = std::max(y1, -cm);
    if (top <= bottom) continue;
    double segment;
    if (top == cm && bottom == -cm) {
      segment = 2.0 * (half_chord_integral(r, b) - half_chord_integral(r, a));
    } else if (top == cm) {
      segment = (half_chord_integral(r, b) - half_chord_integral(r, a)) -
                bottom * (b - a);
    } else if (bottom == -cm) {
      segment = top * (b - a) +
                (half_chord_integral(r, b) - half_chord_integral(r, a));
    } else {
      segment = (top - bottom) * (b - a);
    }
    area += segment;
  }
  return area;
}

double polygon_rect_area(const std::vector<Vec2>& poly, double x1, double x2,
                         double y1, double y2) {
  // Sutherland-Hodgman clip against the four half planes of the rectangle,
  // then the shoelace formula.
  std::vector<Vec2> cur = poly;
  auto clip = [&cur](auto keep, auto lerp_t) {
    std::vector<Vec2> next;
    size_t n = cur.size();
    for (size_t i = 0; i < n; ++i) {
      const Vec2& a = cur[i];
      const Vec2& b = cur[(i + 1) % n];
      bool ka = keep(a), kb = keep(b);
      if (ka) next.push_back(a);
      if (ka != kb) {
        double t = lerp_t(a, b);
        next.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      }
    }
    cur = std::move(next);
  };
  clip([&](const Vec2& p) { return p.x >= x1; },
       [&](const Vec2& a, const Vec2& b) { return (x1 - a.x) / (b.x - a.x); });
  if (cur.empty()) return 0.0;
  clip([&](const Vec2& p) { return p.x <= x2; },
       [&](const Vec2& a, const Vec2& b) { return (x2 - a.x) / (b.x - a.x); });
  if (cur.empty()) return 0.0;
  clip([&](const Vec2& p) { return p.y >= y1; },
       [&](const Vec2& a, const Vec2& b) { return (y1 - a.y) / (b.y - a.y); });
  if (cur.empty()) return 0.0;
  clip([&](const Vec2& p) { return p.y <= y2; },
       [&](const Vec2& a, const Vec2& b) { return (y2 - a.y) / (b.y - a.y); });
  if (cur.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < cur.size(); ++i) {
    const Vec2& a = cur[i];
    const Vec2& b = cur[(i + 1) % cur.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return std::abs(s) * 0.5;
}

ObjectGeometry::ObjectGeometry(const std::string& shape_category, double s,
                               double f_in, double cx_in, double cy_in)
    : f(f_in), cx(cx_in), cy(cy_in) {
  if (shape_category == "circle") {
    kind = 0;
    r_circle = kCircleFactor * s;
  } else if (shape_category == "square") {
    kind = 1;
    half_square = kSquareFactor * s;
  } else if (shape_category == "triangle") {
    kind = 2;
    double R = kTriangleFactor * s;
    double h = std::sqrt(3.0) / 2.0;
    tri = {{0.0, -R}, {R * h, 0.5 * R}, {-R * h, 0.5 * R}};
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown shape " + shape_category);
  }
}

double ObjectGeometry::area() const {
  if (kind == 0) return 3.14159265358979323846 * r_circle * r_circle;
  if (kind == 1) return 4.0 * half_square * half_square;
  double R = -tri[0].y;
  return 0.75 * std::sqrt(3.0) * R * R;
}

double ObjectGeometry::center_sdf(int x, int y) const {
  double qx = (x + 0.5 - cx) / f;
  double qy = (y + 0.5 - cy) * f;
  if (kind == 0) return std::hypot(qx, qy) - r_circle;
  if (kind == 1) return std::max(std::abs(qx), std::abs(qy)) - half_square;
  double d = -1e30;
  for (size_t i = 0; i < 3; ++i) {
    const Vec2& a = tri[i];
    const Vec2& b = tri[(i + 1) % 3];
    double tx = b.x - a.x, ty = b.y - a.y;
    double len = std::hypot(tx, ty);
    double nx = ty / len, ny = -tx / len;
    if (nx * (0.0 - a.x) + ny * (0.0 - a.y) > 0.0) {
      nx = -nx;
      ny = -ny;
    }
    d = std::max(d, nx * (qx - a.x) + ny * (qy - a.y));
  }
  return d;
}

double ObjectGeometry::coverage(int x, int y) const {
  double d = center_sdf(x, y);
  if (d > 1.5) return 0.0;
  if (d < -1.5) return 1.0;
  double rx1 = (x - cx) / f, rx2 = (x + 1 - cx) / f;
  double ry1 = (y - cy) * f, ry2 = (y + 1 - cy) * f;
  double a;
  if (kind == 0) {
    a = circle_rect_area(r_circle, rx1, rx2, ry1, ry2);
  } else if (kind == 1) {
    double ox = std::min(rx2, half_square) - std::max(rx1, -half_square);
    double oy = std::min(ry2, half_square) - std::max(ry1, -half_square);
    a = std::max(0.0, ox) * std::max(0.0, oy);
  } else {
    a = polygon_rect_area(tri, rx1, rx2, ry1, ry2);
  }
  return std::clamp(a, 0.0, 1.0);
}

}  // namespace scene_detail

namespace {

using scene_detail::ObjectGeometry;

enum class TextureMode { kAbsent, kPlain, kStriped, kDotted };

struct TextureDraw {
  TextureMode mode = TextureMode::kAbsent;
  double plain_mult = 1.0, dark_mult = 1.0;

  double mult(int xi, int yi) const {
    auto mod4 = [](int v) { return ((v % 4) + 4) % 4; };
    switch (mode) {
      case TextureMode::kAbsent: return 1.0;
      case TextureMode::kPlain: return plain_mult;
      case TextureMode::kStriped: return mod4(xi) < 2 ? 1.0 : dark_mult;
      case TextureMode::kDotted:
        return (mod4(xi) < 2 && mod4(yi) < 2) ? dark_mult : 1.0;
    }
    return 1.0;
  }
};

}  // namespace

Tensor<float> render_scene(const DomainConfig& config, const SceneSpec& spec) {
  namespace sd = scene_detail;
  const int S = config.image_size;
  VCLAB_CHECK_ARG(S >= 16, "image size " << S << " too small to render");
  for (const char* name : {"shape", "object_color", "size", "background_color"}) {
    VCLAB_CHECK_ARG(spec.has(name), "scene " << spec.id << " misses mandatory axis "
                                             << name);
  }

  Tensor<float> image({S, S, 3});

  const auto& bg_axis = spec.axes.at("background_color");
  sd::BgColor bgc = sd::background_color(bg_axis.category, bg_axis.nuance);
  Rgb bg = hsv_to_rgb({bgc.h, bgc.s, bgc.v});
  for (int64_t y = 0; y < S; ++y) {
    for (int64_t x = 0; x < S; ++x) {
      image.at(y, x, 0) = bg.r;
      image.at(y, x, 1) = bg.g;
      image.at(y, x, 2) = bg.b;
    }
  }

  if (spec.has("border_style")) {
    const auto& bv = spec.axes.at("border_style");
    double base = bv.category == "thin" ? sd::kThinLo : sd::kThickLo;
    VCLAB_CHECK_ARG(bv.category == "thin" || bv.category == "thick",
                    "unknown border style " << bv.category);
    double w = base + sd::kWidthSpan * bv.nuance;
    Rgb bc = hsv_to_rgb({sd::kBorderH, sd::kBorderS, sd::kBorderV});
    for (int64_t y = 0; y < S; ++y) {
      for (int64_t x = 0; x < S; ++x) {
        double px = x + 0.5, py = y + 0.5;
        double e = std::min({px, py, S - px, S - py});
        double cov = std::clamp(w - (e - 0.5), 0.0, 1.0);
        if (cov <= 0.0) continue;
        float c = static_cast<float>(cov);
        image.at(y, x, 0) = c * bc.r + (1 - c) * image.at(y, x, 0);
        image.at(y, x, 1) = c * bc.g + (1 - c) * image.at(y, x, 1);
        image.at(y, x, 2) = c * bc.b + (1 - c) * image.at(y, x, 2);
      }
    }
  }

  double s = sd::size_radius(spec.axes.at("size").category,
                             spec.axes.at("size").nuance);
  double f = sd::kAspectLo + sd::kAspectSpan * spec.axes.at("shape").nuance;
  ObjectGeometry geom(spec.axes.at("shape").category, s, f,
                      S / 2.0 + spec.jitter_x, S / 2.0 + spec.jitter_y);
  double hue = sd::object_hue(spec.axes.at("object_color").category,
                              spec.axes.at("object_color").nuance);
  Rgb base = hsv_to_rgb({static_cast<float>(hue), sd::kObjectS, sd::kObjectV});
  TextureDraw tex;
  if (spec.has("texture")) {
    const auto& tv = spec.axes.at("texture");
    if (tv.category == "plain") {
      tex.mode = TextureMode::kPlain;
    } else if (tv.category == "striped") {
      tex.mode = TextureMode::kStriped;
    } else if (tv.category == "dotted") {
      tex.mode = TextureMode::kDotted;
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown texture " + tv.category);
    }
    tex.plain_mult = sd::kPlainLo + sd::kPlainSpan * tv.nuance;
    tex.dark_mult = sd::kDarkLo + sd::kDarkSpan * tv.nuance;
  }

  for (int64_t y = 0; y < S; ++y) {
    for (int64_t x = 0; x < S; ++x) {
      double alpha = geom.coverage(static_cast<int>(x), static_cast<int>(y));
      if (alpha <= 0.0) continue;
      int xi = static_cast<int>(std::floor(x + 0.5 - geom.cx));
      int yi = static_cast<int>(std::floor(y + 0.5 - geom.cy));
      double m = tex.mult(xi, yi);
      float a = static_cast<float>(alpha);
      float fr = static_cast<float>(base.r * m);
      float fg = static_cast<float>(base.g * m);
      float fb = static_cast<float>(base.b * m);
      image.at(y, x, 0) = a * fr + (1 - a) * image.at(y, x, 0);
      image.at(y, x, 1) = a * fg + (1 - a) * image.at(y, x, 1);
      image.at(y, x, 2) = a * fb + (1 - a) * image.at(y, x, 2);
    }
  }

  quantize_image(image);
  return image;
}

}  // namespace vclab
