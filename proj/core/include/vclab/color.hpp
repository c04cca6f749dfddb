#pragma once

#include <algorithm>
#include <cmath>

namespace vclab {

struct Rgb {
  float r = 0.0f, g = 0.0f, b = 0.0f;
};

struct Hsv {
  float h = 0.0f;  // degrees in [0, 360)
  float s = 0.0f;
  float v = 0.0f;
};

inline Rgb hsv_to_rgb(const Hsv& in) {
  float h = in.h;
  h = h - 360.0f * std::floor(h / 360.0f);
  float c = in.v * in.s;
  float hp = h / 60.0f;
  float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) {
    r1 = c; g1 = x;
  } else if (hp < 2) {
    r1 = x; g1 = c;
  } else if (hp < 3) {
    g1 = c; b1 = x;
  } else if (hp < 4) {
    g1 = x; b1 = c;
  } else if (hp < 5) {
    r1 = x; b1 = c;
  } else {
    r1 = c; b1 = x;
  }
  float m = in.v - c;
  return {r1 + m, g1 + m, b1 + m};
}

inline Hsv rgb_to_hsv(const Rgb& in) {
  float mx = std::max({in.r, in.g, in.b});
  float mn = std::min({in.r, in.g, in.b});
  float d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    out.h = 0.0f;
    return out;
  }
  float h;
  if (mx == in.r) {
    h = std::fmod((in.g - in.b) / d, 6.0f);
  } else if (mx == in.g) {
    h = (in.b - in.r) / d + 2.0f;
  } else {
    h = (in.r - in.g) / d + 4.0f;
  }
  h *= 60.0f;
  if (h < 0.0f) h += 360.0f;
  out.h = h;
  return out;
}

}  // namespace vclab
