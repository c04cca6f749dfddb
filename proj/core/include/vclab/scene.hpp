#pragma once

#include <map>
#include <string>
#include <vector>

#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// One attribute axis of a scene: a categorical value plus a continuous
// nuance in [0, 1) that modulates how the category is realized (hue within
// a color band, exact size within a size band, and so on).
struct AxisValue {
  std::string category;
  double nuance = 0.0;
};

struct SceneSpec {
  uint64_t id = 0;
  // Keyed by axis name; std::map keeps axes in lexicographic order, which is
  // the canonical order used everywhere downstream.
  std::map<std::string, AxisValue> axes;
  // Object center offset in pixels. Deliberately not an axis: it is the
  // nuisance factor nothing in the annotation describes.
  double jitter_x = 0.0;
  double jitter_y = 0.0;

  bool has(const std::string& axis) const { return axes.count(axis) != 0; }
};

struct AxisDef {
  std::string name;
  std::vector<std::string> categories;
  bool optional = false;
};

struct DomainConfig {
  int image_size = 32;
  double optional_presence = 0.5;
  double jitter_extent = 1.0;
  std::vector<AxisDef> axes;

  static DomainConfig desk();
  const AxisDef* find_axis(const std::string& name) const;
  std::vector<std::string> mandatory_axes() const;
};

SceneSpec sample_scene(const DomainConfig& config, Rng& rng, uint64_t id);

// Deterministic rasterization with exact analytic pixel coverage for the
// object silhouette; the same spec always yields the same bytes. Output is
// HWC float on the 8-bit grid.
Tensor<float> render_scene(const DomainConfig& config, const SceneSpec& spec);

namespace scene_detail {

// Realized draw parameters, shared between the renderer and the analytic
// extractors so the two always invert each other.
inline constexpr float kObjectS = 0.85f;
inline constexpr float kObjectV = 0.90f;
inline constexpr float kBorderH = 30.0f;
inline constexpr float kBorderS = 0.95f;
inline constexpr float kBorderV = 0.92f;
inline constexpr double kPlainLo = 0.80, kPlainSpan = 0.16;
inline constexpr double kDarkLo = 0.55, kDarkSpan = 0.15;
inline constexpr double kThinLo = 1.0, kThickLo = 2.2, kWidthSpan = 0.8;
inline constexpr double kAspectLo = 0.88, kAspectSpan = 0.24;
inline constexpr double kCircleFactor = 0.72;
inline constexpr double kSquareFactor = 0.64;
inline constexpr double kTriangleFactor = 0.95;

double object_hue(const std::string& category, double nuance);
// Inverse of object_hue; returns nuance in [0, 1) or a negative value when
// the hue falls in no band.
double object_hue_to_nuance(const std::string& category, double hue);
std::string object_hue_category(double hue);

struct BgColor {
  float h, s, v;
};
BgColor background_color(const std::string& category, double nuance);
std::string background_category(float h, float s, float v);
double background_value_to_nuance(const std::string& category, double v);

double size_radius(const std::string& category, double nuance);
double size_radius_to_nuance(const std::string& category, double s);
std::string size_category(double s);

// Area of the unit-density silhouette for a size parameter of 1; the
// rendered area is area_factor(shape) * s^2 independent of aspect.
double area_factor(const std::string& shape_category);

// Exact area of the intersection between an origin-centered circle of
// radius r and the axis-aligned rectangle [x1,x2] x [y1,y2].
double circle_rect_area(double r, double x1, double x2, double y1, double y2);

struct Vec2 {
  double x, y;
};
double polygon_rect_area(const std::vector<Vec2>& poly, double x1, double x2,
                         double y1, double y2);

// Object silhouette with exact per-pixel coverage, shared by the renderer
// and by extractors that fit the silhouette model back to pixels.
struct ObjectGeometry {
  ObjectGeometry(const std::string& shape_category, double s, double f,
                 double cx, double cy);
  // Analytic area of the whole silhouette.
  double area() const;
  // Approximate signed distance of the pixel center, conservative near zero.
  double center_sdf(int x, int y) const;
  // Exact covered fraction of pixel (x, y).
  double coverage(int x, int y) const;

  int kind;  // 0 circle, 1 square, 2 triangle
  double f, cx, cy;
  double r_circle = 0.0, half_square = 0.0;
  std::vector<Vec2> tri;
};

}  // namespace scene_detail

}  // namespace vclab
