#include "knotseg/augment.hpp"

#include <cmath>

namespace knotseg {

namespace {

using Mask = std::vector<std::uint8_t>;

// exact 90-degree-family permutations, one slice
void rotate_exact(const std::uint8_t* src, std::uint8_t* dst, int n,
                  int quarter_turns) {
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int sy = y, sx = x;
      switch (quarter_turns) {
        case 1: sy = n - 1 - x; sx = y; break;
        case 2: sy = n - 1 - y; sx = n - 1 - x; break;
        case 3: sy = x; sx = n - 1 - y; break;
        default: break;
      }
      dst[y * n + x] = src[sy * n + sx];
    }
  }
}

// nearest-neighbour resample about the raster center; out-of-frame reads are 0
void rotate_nn(const std::uint8_t* src, std::uint8_t* dst, int n,
               double angle_rad) {
  const double c = 0.5 * (n - 1);
  const double ca = std::cos(angle_rad);
  const double sa = std::sin(angle_rad);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // inverse rotation of the destination pixel
      const double rx = x - c, ry = y - c;
      const double sx = c + ca * rx + sa * ry;
      const double sy = c - sa * rx + ca * ry;
      const long ix = std::lround(sx);
      const long iy = std::lround(sy);
      std::uint8_t v = 0;
      if (ix >= 0 && ix < n && iy >= 0 && iy < n) {
        v = src[iy * n + ix] ? 1 : 0;  // re-binarize
      }
      dst[y * n + x] = v;
    }
  }
}

void hflip_slice(std::uint8_t* s, int n) {
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n / 2; ++x) {
      std::swap(s[y * n + x], s[y * n + (n - 1 - x)]);
    }
  }
}

void transform_stack(const Mask& src, Mask& dst, int t, int n, int angle_index,
                     bool hflip) {
  dst.resize(src.size());
  const double angle = angle_index * (3.14159265358979323846 / 4.0);
  for (int i = 0; i < t; ++i) {
    const std::uint8_t* sp = src.data() + static_cast<std::size_t>(i) * n * n;
    std::uint8_t* dp = dst.data() + static_cast<std::size_t>(i) * n * n;
    if (angle_index % 2 == 0) {
      rotate_exact(sp, dp, n, angle_index / 2);
    } else {
      rotate_nn(sp, dp, n, angle);
    }
    if (hflip) hflip_slice(dp, n);
  }
}

}  // namespace

VolumeSample apply_augment(const VolumeSample& sample, int angle_index,
                           bool hflip) {
  sample.validate();
  require(sample.h == sample.w, "augment: rasters must be square, got ",
          sample.h, "x", sample.w);
  require(angle_index >= 0 && angle_index < AugmentSpec::kNumAngles,
          "augment: angle index ", angle_index, " out of range");
  VolumeSample out = sample;
  transform_stack(sample.contour, out.contour, sample.t, sample.h, angle_index,
                  hflip);
  transform_stack(sample.knots, out.knots, sample.t, sample.h, angle_index,
                  hflip);
  return out;
}

VolumeSample augment_volume(const VolumeSample& sample, Rng& rng,
                            double hflip_prob) {
  const int angle_index =
      static_cast<int>(rng.below(AugmentSpec::kNumAngles));
  const bool flip = rng.bernoulli(hflip_prob);
  return apply_augment(sample, angle_index, flip);
}

}  // namespace knotseg
