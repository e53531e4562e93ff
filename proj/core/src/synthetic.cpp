#include "knotseg/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace knotseg {

const char* to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::TextureMosaic: return "texture-mosaic";
    case SyntheticKind::BlobWorld: return "blob-world";
    case SyntheticKind::AnisotropicVolume: return "anisotropic-volume";
  }
  return "?";
}

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "texture-mosaic") return SyntheticKind::TextureMosaic;
  if (s == "blob-world") return SyntheticKind::BlobWorld;
  if (s == "anisotropic-volume") return SyntheticKind::AnisotropicVolume;
  throw Error("unknown synthetic kind '" + s + "'");
}

double grating_value(const Grating& g, double x, double y, double phase) {
  const double theta = g.orientation_deg * std::numbers::pi / 180.0;
  const double u = x * std::cos(theta) + y * std::sin(theta);
  return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / g.wavelength + phase);
}

namespace {

void check(const SyntheticSpec& spec) {
  if (spec.size < 8) throw Error("synthetic size must be >= 8");
  if (spec.noise < 0) throw Error("synthetic noise must be >= 0");
}

void add_noise(ImagePlane& p, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : p.values()) v += n(rng);
}

}  // namespace

SyntheticImage texture_mosaic(const SyntheticSpec& spec) {
  check(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p_target = phase(rng);
  const double p_other = phase(rng);
  const int n = spec.size;
  const int half = n / 2;
  SyntheticImage out{ImagePlane(n, n), LabelMap(n, n, kNegative)};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool target = (x < half) == (y < half);
      out.image(x, y) = target ? grating_value(spec.target, x, y, p_target) : grating_value(spec.other, x, y, p_other);
      out.labels(x, y) = target ? kPositive : kNegative;
    }
  }
  add_noise(out.image, spec.noise, rng);
  return out;
}

SyntheticImage blob_world(const SyntheticSpec& spec) {
  check(spec);
  std::mt19937_64 rng(spec.seed);
  const int n = spec.size;
  std::normal_distribution<double> white(0.0, 1.0);
  ImagePlane field(n, n);
  for (double& v : field.values()) v = white(rng);
  const double sigma = spec.blob_scale > 0 ? spec.blob_scale : n / 16.0;
  field = gaussian_blur(field, sigma);

  SyntheticImage out{ImagePlane(n, n), LabelMap(n, n, kNegative)};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) out.labels(x, y) = field(x, y) > 0 ? kPositive : kNegative;

  const double lo = 0.5 - spec.contrast / 2, hi = 0.5 + spec.contrast / 2;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) out.image(x, y) = out.labels(x, y) == kPositive ? hi : lo;

  // Small background discs with foreground intensity.
  const int count = spec.distractors >= 0 ? spec.distractors : n * n / 2048;
  std::uniform_int_distribution<int> coord(0, n - 1);
  std::uniform_int_distribution<int> radius(1, 3);
  for (int d = 0; d < count; ++d) {
    const int cx = coord(rng), cy = coord(rng), r = radius(rng);
    for (int y = std::max(0, cy - r); y <= std::min(n - 1, cy + r); ++y)
      for (int x = std::max(0, cx - r); x <= std::min(n - 1, cx + r); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r && out.labels(x, y) == kNegative) out.image(x, y) = hi;
  }

  add_noise(out.image, spec.noise, rng);

  if (spec.band_width > 0 && spec.band_noise > 0) {
    std::normal_distribution<double> band(0.0, spec.band_noise);
    const int b = spec.band_width;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        bool edge = false;
        for (int dy = -b; dy <= b && !edge; ++dy)
          for (int dx = -b; dx <= b && !edge; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx >= 0 && yy >= 0 && xx < n && yy < n && out.labels(xx, yy) != out.labels(x, y)) edge = true;
          }
        if (edge) out.image(x, y) += band(rng);
      }
    }
  }
  return out;
}

SyntheticVolume anisotropic_volume(const SyntheticSpec& spec) {
  check(spec);
  if (spec.depth < 1) throw Error("synthetic volume depth must be >= 1");
  std::mt19937_64 rng(spec.seed);
  const int n = spec.size, d = spec.depth;
  std::vector<std::vector<std::uint8_t>> fg(d, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0));
  auto set = [&](int x, int y, int z) { fg[z][static_cast<std::size_t>(y) * n + x] = 1; };

  std::uniform_int_distribution<int> coord(4, n - 5);
  std::uniform_int_distribution<int> zc(0, d - 1);
  const int plates = std::max(1, n / 32);
  for (int p = 0; p < plates; ++p) {
    const int x0 = coord(rng);
    int y0 = coord(rng), y1 = coord(rng);
    int z0 = zc(rng), z1 = zc(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (z0 > z1) std::swap(z0, z1);
    y1 = std::max(y1, y0 + n / 4 < n ? y0 + n / 4 : n - 1);
    z1 = std::max(z1, std::min(d - 1, z0 + d / 2));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= std::min(y1, n - 1); ++y)
        for (int x = x0; x <= x0 + 1; ++x) set(x, y, z);
  }
  const int tubes = std::max(1, n / 32);
  std::uniform_int_distribution<int> rad(2, 4);
  for (int t = 0; t < tubes; ++t) {
    const int cx = coord(rng), cy = coord(rng), r = rad(rng);
    for (int z = 0; z < d; ++z)
      for (int y = std::max(0, cy - r); y <= std::min(n - 1, cy + r); ++y)
        for (int x = std::max(0, cx - r); x <= std::min(n - 1, cx + r); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) set(x, y, z);
  }

  SyntheticVolume out;
  const std::vector<double> along_x = gaussian_kernel_1d(1.5);
  const std::vector<double> identity{1.0};
  for (int z = 0; z < d; ++z) {
    ImagePlane slice(n, n);
    LabelMap labels(n, n, kNegative);
    for (std::size_t i = 0; i < slice.size(); ++i) {
      slice.values()[i] = fg[z][i] ? 0.75 : 0.3;
      labels.labels[i] = fg[z][i] ? kPositive : kNegative;
    }
    slice = separable_filter(slice, along_x, identity);
    add_noise(slice, spec.noise, rng);
    out.image.slices.push_back(std::move(slice));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

}  // namespace knotseg
