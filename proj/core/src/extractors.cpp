#include "vclab/extractors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "vclab/color.hpp"

namespace vclab {

namespace {

namespace sd = scene_detail;

struct Px {
  int x, y;
  Rgb rgb;
};

Rgb pixel(const Tensor<float>& im, int y, int x) {
  return {im.at(y, x, 0), im.at(y, x, 1), im.at(y, x, 2)};
}

float channel_median(std::vector<float>& v) {
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  return v[mid];
}

double dot3(const Rgb& a, const Rgb& b) {
  return double(a.r) * b.r + double(a.g) * b.g + double(a.b) * b.b;
}

Rgb sub3(const Rgb& a, const Rgb& b) { return {a.r - b.r, a.g - b.g, a.b - b.b}; }

Rgb scale3(const Rgb& a, double m) {
  return {float(a.r * m), float(a.g * m), float(a.b * m)};
}

// Blend coefficient of p between background b and foreground f, with the
// residual distance from p to that blend line.
void blend_alpha(const Rgb& p, const Rgb& b, const Rgb& f, double* alpha,
                 double* residual) {
  Rgb d = sub3(f, b);
  double nn = dot3(d, d);
  if (nn < 1e-12) {
    *alpha = 0.0;
    *residual = 1e9;
    return;
  }
  Rgb pb = sub3(p, b);
  double a = std::clamp(dot3(pb, d) / nn, 0.0, 1.0);
  Rgb r = {float(pb.r - a * d.r), float(pb.g - a * d.g), float(pb.b - a * d.b)};
  *alpha = a;
  *residual = std::sqrt(dot3(r, r));
}

}  // namespace

ExtractionResult extract_scene(const DomainConfig& config,
                               const Tensor<float>& image) {
  ExtractionResult out;
  const int S = config.image_size;
  VCLAB_CHECK_ARG(image.rank() == 3 && image.dim(0) == S && image.dim(1) == S,
                  "image shape " << shape_to_string(image.shape)
                                 << " does not match domain size " << S);

  // Background from the ring three pixels in from the edge: always pure
  // background (the frame stops earlier, the object never reaches it).
  std::vector<float> rv, gv, bv;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      int e = std::min({x, y, S - 1 - x, S - 1 - y});
      if (e != 3) continue;
      Rgb p = pixel(image, y, x);
      rv.push_back(p.r);
      gv.push_back(p.g);
      bv.push_back(p.b);
    }
  }
  Rgb bg = {channel_median(rv), channel_median(gv), channel_median(bv)};
  Hsv bg_hsv = rgb_to_hsv(bg);
  {
    AxisValue v;
    v.category = sd::background_category(bg_hsv.h, bg_hsv.s, bg_hsv.v);
    v.nuance = std::clamp(
        sd::background_value_to_nuance(v.category, bg_hsv.v), 0.0, 1.0);
    out.axes["background_color"] = v;
  }

  // Frame detection at the top edge midline; rows 0..2 are out of the
  // object's reach, and row 0 is always fully covered when a frame exists.
  {
    int mx = S / 2;
    Rgb p0 = pixel(image, 0, mx);
    Hsv h0 = rgb_to_hsv(p0);
    bool present = h0.s >= 0.5f && h0.h >= 10.0f && h0.h <= 50.0f &&
                   h0.v >= 0.5f;
    if (present) {
      double c1, c2, res;
      blend_alpha(pixel(image, 1, mx), bg, p0, &c1, &res);
      blend_alpha(pixel(image, 2, mx), bg, p0, &c2, &res);
      double w = 1.0 + c1 + c2;
      AxisValue v;
      v.category = w < 2.0 ? "thin" : "thick";
      double base = v.category == "thin" ? sd::kThinLo : sd::kThickLo;
      v.nuance = std::clamp((w - base) / sd::kWidthSpan, 0.0, 1.0);
      out.axes["border_style"] = v;
    }
  }

  // Interior object pixels: saturated and bright separates the object from
  // every background (navy is saturated but dark), eroded so blends at the
  // silhouette and texture boundaries cannot leak in.
  std::vector<std::vector<bool>> cand(S, std::vector<bool>(S, false));
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (std::min({x, y, S - 1 - x, S - 1 - y}) < 3) continue;
      Hsv h = rgb_to_hsv(pixel(image, y, x));
      cand[y][x] = h.s >= 0.45f && h.v >= 0.45f;
    }
  }
  std::vector<Px> interior;
  for (int y = 1; y < S - 1; ++y) {
    for (int x = 1; x < S - 1; ++x) {
      bool keep = cand[y][x];
      for (int dy = -1; keep && dy <= 1; ++dy) {
        for (int dx = -1; keep && dx <= 1; ++dx) {
          keep = cand[y + dy][x + dx];
        }
      }
      if (keep) interior.push_back({x, y, pixel(image, y, x)});
    }
  }
  if (interior.size() < 5) {
    return out;
  }
  out.object_found = true;

  // Hue is invariant to the texture's value modulation, so every interior
  // pixel votes.
  double sh = 0.0, ch = 0.0;
  for (const auto& p : interior) {
    double h = rgb_to_hsv(p.rgb).h * (3.14159265358979323846 / 180.0);
    sh += std::sin(h);
    ch += std::cos(h);
  }
  double hue = std::atan2(sh, ch) * (180.0 / 3.14159265358979323846);
  if (hue < 0) hue += 360.0;
  std::string color_cat = sd::object_hue_category(hue);
  {
    AxisValue v;
    v.category = color_cat;
    v.nuance = std::clamp(sd::object_hue_to_nuance(color_cat, hue), 0.0, 1.0);
    out.axes["object_color"] = v;
  }

  // Texture from the value-multiplier statistics of interior pixels.
  double bright_mult = 1.0, dark_mult = 1.0;
  {
    std::vector<double> mults;
    for (const auto& p : interior) {
      mults.push_back(rgb_to_hsv(p.rgb).v / sd::kObjectV);
    }
    std::vector<double> sorted = mults;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&sorted](double q) {
      return sorted[size_t(q * double(sorted.size() - 1))];
    };
    double med = pct(0.5), p10 = pct(0.1), p90 = pct(0.9);
    if (p90 >= 0.975 && p10 < 0.80) {
      // Bimodal: columns are uniform for stripes, mixed for dots.
      std::map<int, std::pair<int, int>> col_counts;  // x -> (dark, total)
      double dark_sum = 0.0;
      int dark_n = 0;
      for (size_t i = 0; i < interior.size(); ++i) {
        bool dark = mults[i] < 0.85;
        auto& cc = col_counts[interior[i].x];
        cc.second += 1;
        if (dark) {
          cc.first += 1;
          dark_sum += mults[i];
          dark_n += 1;
        }
      }
      int mixed = 0, usable = 0;
      for (const auto& [x, cc] : col_counts) {
        if (cc.second < 2) continue;
        usable += 1;
        double frac = double(cc.first) / cc.second;
        if (frac > 0.2 && frac < 0.8) mixed += 1;
      }
      AxisValue v;
      v.category = (usable > 0 && mixed * 4 >= usable) ? "dotted" : "striped";
      double md = dark_n > 0 ? dark_sum / dark_n : sd::kDarkLo;
      v.nuance = std::clamp((md - sd::kDarkLo) / sd::kDarkSpan, 0.0, 1.0);
      out.axes["texture"] = v;
      dark_mult = md;
    } else if (med < 0.985) {
      AxisValue v;
      v.category = "plain";
      v.nuance = std::clamp((med - sd::kPlainLo) / sd::kPlainSpan, 0.0, 1.0);
      out.axes["texture"] = v;
      bright_mult = dark_mult = med;
    }
    // otherwise the multipliers sit at one: no texture axis
  }

  // Coverage map via two-hypothesis blend decomposition: each pixel near the
  // object lies on the line from background to either the bright or the dark
  // foreground color; the hypothesis with the smaller residual wins.
  Rgb base_bright, base_dark;
  {
    double h = sd::object_hue(color_cat,
                              out.axes.at("object_color").nuance);
    Rgb base = hsv_to_rgb({float(h), sd::kObjectS, sd::kObjectV});
    base_bright = scale3(base, bright_mult);
    base_dark = scale3(base, dark_mult);
  }
  double area = 0.0;
  double mx = 0.0, my = 0.0;
  std::vector<std::pair<Px, double>> alphas;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (std::min({x, y, S - 1 - x, S - 1 - y}) < 3) continue;
      Rgb p = pixel(image, y, x);
      Rgb d = sub3(p, bg);
      if (std::max({std::abs(d.r), std::abs(d.g), std::abs(d.b)}) < 2.5f / 255.0f) {
        continue;
      }
      double a1, r1, a2, r2;
      blend_alpha(p, bg, base_bright, &a1, &r1);
      blend_alpha(p, bg, base_dark, &a2, &r2);
      double a = r1 <= r2 ? a1 : a2;
      if (a <= 0.0) continue;
      area += a;
      mx += a * (x + 0.5);
      my += a * (y + 0.5);
      alphas.push_back({{x, y, p}, a});
    }
  }
  if (area < 4.0) {
    out.object_found = false;
    return out;
  }
  mx /= area;
  my /= area;
  out.jitter_x = mx - S / 2.0;
  out.jitter_y = my - S / 2.0;

  // Shape from alpha-weighted central moments: the triangle shows up in the
  // vertical skew, disk and square separate on whitened fourth moments, and
  // the aspect nuance is the fourth root of the variance ratio for all three.
  double sxx = 0, syy = 0, syyy = 0, sx4 = 0, sy4 = 0;
  for (const auto& [p, a] : alphas) {
    double dx = p.x + 0.5 - mx, dy = p.y + 0.5 - my;
    sxx += a * dx * dx;
    syy += a * dy * dy;
    syyy += a * dy * dy * dy;
    sx4 += a * dx * dx * dx * dx;
    sy4 += a * dy * dy * dy * dy;
  }
  sxx /= area;
  syy /= area;
  syyy /= area;
  sx4 /= area;
  sy4 /= area;
  // Sheppard's corrections: each pixel is a unit square sampled at its
  // center, which inflates the even moments of the underlying silhouette.
  sxx = std::max(sxx - 1.0 / 12.0, 1e-9);
  syy = std::max(syy - 1.0 / 12.0, 1e-9);
  sx4 = sx4 - 6.0 * sxx / 12.0 - 1.0 / 80.0;
  sy4 = sy4 - 6.0 * syy / 12.0 - 1.0 / 80.0;
  double skew_y = syyy / std::pow(syy, 1.5);
  double kurt = 0.5 * (sx4 / std::max(sxx * sxx, 1e-12) +
                       sy4 / std::max(syy * syy, 1e-12));
  std::string shape_cat;
  if (std::abs(skew_y) > 0.25) {
    shape_cat = "triangle";
  } else if (kurt < 1.9) {
    shape_cat = "square";
  } else {
    shape_cat = "circle";
  }

  // Moment estimates of size and aspect carry a lattice-phase bias of a few
  // percent on flat-edged shapes, so they only seed a least-squares fit of
  // the exact silhouette model against the observed coverage map.
  double p[4] = {std::sqrt(area / sd::area_factor(shape_cat)),
                 std::clamp(std::pow(sxx / syy, 0.25), 0.85, 1.15), mx, my};
  int ext = static_cast<int>(std::ceil(p[0] * 1.15 + 2.5));
  int bx1 = std::max(3, int(mx) - ext), bx2 = std::min(S - 4, int(mx) + ext);
  int by1 = std::max(3, int(my) - ext), by2 = std::min(S - 4, int(my) + ext);
  std::vector<std::pair<int, int>> pts;
  for (int y = by1; y <= by2; ++y) {
    for (int x = bx1; x <= bx2; ++x) pts.push_back({x, y});
  }

  auto fit_model = [&](const std::map<std::pair<int, int>, double>& obs) {
    auto residuals = [&](const double* q, std::vector<double>& r) {
      sd::ObjectGeometry g(shape_cat, q[0], q[1], q[2], q[3]);
      r.resize(pts.size());
      for (size_t i = 0; i < pts.size(); ++i) {
        auto it = obs.find(pts[i]);
        double o = it == obs.end() ? 0.0 : it->second;
        r[i] = g.coverage(pts[i].first, pts[i].second) - o;
      }
    };
    std::vector<double> r0, rp;
    for (int iter = 0; iter < 12; ++iter) {
      residuals(p, r0);
      const double eps = 1e-4;
      std::vector<std::array<double, 4>> jac(pts.size());
      for (int k = 0; k < 4; ++k) {
        double q[4] = {p[0], p[1], p[2], p[3]};
        q[k] += eps;
        residuals(q, rp);
        for (size_t i = 0; i < pts.size(); ++i) {
          jac[i][size_t(k)] = (rp[i] - r0[i]) / eps;
        }
      }
      double jtj[4][4] = {}, jtr[4] = {};
      for (size_t i = 0; i < pts.size(); ++i) {
        for (int a2 = 0; a2 < 4; ++a2) {
          jtr[a2] += jac[i][size_t(a2)] * r0[i];
          for (int b2 = a2; b2 < 4; ++b2) {
            jtj[a2][b2] += jac[i][size_t(a2)] * jac[i][size_t(b2)];
          }
        }
      }
      for (int a2 = 0; a2 < 4; ++a2) {
        for (int b2 = 0; b2 < a2; ++b2) jtj[a2][b2] = jtj[b2][a2];
        jtj[a2][a2] += 1e-6;
      }
      double step[4] = {jtr[0], jtr[1], jtr[2], jtr[3]};
      for (int c2 = 0; c2 < 4; ++c2) {
        int piv = c2;
        for (int r2 = c2 + 1; r2 < 4; ++r2) {
          if (std::abs(jtj[r2][c2]) > std::abs(jtj[piv][c2])) piv = r2;
        }
        std::swap(jtj[c2], jtj[piv]);
        std::swap(step[c2], step[piv]);
        for (int r2 = c2 + 1; r2 < 4; ++r2) {
          double m = jtj[r2][c2] / jtj[c2][c2];
          for (int k2 = c2; k2 < 4; ++k2) jtj[r2][k2] -= m * jtj[c2][k2];
          step[r2] -= m * step[c2];
        }
      }
      for (int c2 = 3; c2 >= 0; --c2) {
        for (int k2 = c2 + 1; k2 < 4; ++k2) step[c2] -= jtj[c2][k2] * step[k2];
        step[c2] /= jtj[c2][c2];
      }
      double norm = 0.0;
      for (int k = 0; k < 4; ++k) {
        p[k] -= step[k];
        norm += step[k] * step[k];
      }
      p[0] = std::clamp(p[0], 3.0, 13.0);
      p[1] = std::clamp(p[1], 0.80, 1.25);
      p[2] = std::clamp(p[2], mx - 4.0, mx + 4.0);
      p[3] = std::clamp(p[3], my - 4.0, my + 4.0);
      if (norm < 1e-14) break;
    }
  };

  std::map<std::pair<int, int>, double> obs;
  for (const auto& [px, a] : alphas) obs[{px.x, px.y}] = a;
  fit_model(obs);

  bool bimodal = out.axes.count("texture") != 0 &&
                 out.axes.at("texture").category != "plain";
  auto mod4 = [](int v) { return ((v % 4) + 4) % 4; };

  // The column statistics cannot separate stripes from dots when the
  // interior is only a handful of pixels, but the fitted center fixes the
  // pattern phase, and the two patterns darken disjoint cells. Re-vote each
  // interior pixel against both predictions. The center is only good to a
  // tenth of a pixel, so when a pattern coordinate sits near a cell edge
  // both roundings are admitted and a pattern is charged only when neither
  // explains the pixel.
  if (bimodal) {
    auto cells = [](double u) {
      std::vector<int> c;
      double r = std::round(u);
      if (std::abs(u - r) < 0.10) {
        c.push_back(static_cast<int>(r) - 1);
        c.push_back(static_cast<int>(r));
      } else {
        c.push_back(static_cast<int>(std::floor(u)));
      }
      return c;
    };
    int miss_striped = 0, miss_dotted = 0;
    for (const auto& ip : interior) {
      std::vector<int> xs = cells(ip.x + 0.5 - p[2]);
      std::vector<int> ys = cells(ip.y + 0.5 - p[3]);
      bool dark = rgb_to_hsv(ip.rgb).v / sd::kObjectV < 0.85;
      bool ok_striped = false, ok_dotted = false;
      for (int xi : xs) {
        if (dark == (mod4(xi) >= 2)) ok_striped = true;
        for (int yi : ys) {
          if (dark == (mod4(xi) < 2 && mod4(yi) < 2)) ok_dotted = true;
        }
      }
      if (!ok_striped) miss_striped += 1;
      if (!ok_dotted) miss_dotted += 1;
    }
    if (miss_striped != miss_dotted) {
      out.axes.at("texture").category =
          miss_dotted < miss_striped ? "dotted" : "striped";
    }
  }

  // On dark backgrounds the bright and dark foreground hypotheses are
  // colinear with the background, so the residual test above cannot tell
  // them apart at silhouette edges. With the center pinned by the first fit
  // the texture phase is known, which settles the hypothesis per pixel;
  // redo the coverage map and fit once more.
  if (bimodal) {
    bool dotted = out.axes.at("texture").category == "dotted";
    obs.clear();
    for (const auto& [px, a_old] : alphas) {
      (void)a_old;
      double ux = px.x + 0.5 - p[2], uy = px.y + 0.5 - p[3];
      int xi = static_cast<int>(std::floor(ux));
      int yi = static_cast<int>(std::floor(uy));
      bool dark = dotted ? (mod4(xi) < 2 && mod4(yi) < 2) : mod4(xi) >= 2;
      bool ambiguous = std::abs(ux - std::round(ux)) < 0.12 ||
                       (dotted && std::abs(uy - std::round(uy)) < 0.12);
      double a1, r1, a2, r2;
      blend_alpha(px.rgb, bg, base_bright, &a1, &r1);
      blend_alpha(px.rgb, bg, base_dark, &a2, &r2);
      double a;
      if (!ambiguous) {
        a = dark ? a2 : a1;
      } else {
        a = r1 <= r2 ? a1 : a2;
      }
      if (a > 0.0) obs[{px.x, px.y}] = a;
    }
    fit_model(obs);
  }
  out.jitter_x = p[2] - S / 2.0;
  out.jitter_y = p[3] - S / 2.0;
  {
    AxisValue v;
    v.category = shape_cat;
    v.nuance = std::clamp((p[1] - sd::kAspectLo) / sd::kAspectSpan, 0.0, 1.0);
    out.axes["shape"] = v;
  }
  {
    AxisValue v;
    v.category = sd::size_category(p[0]);
    v.nuance = std::clamp(sd::size_radius_to_nuance(v.category, p[0]), 0.0, 1.0);
    out.axes["size"] = v;
  }

  return out;
}

}  // namespace vclab
