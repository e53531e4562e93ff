#include "knotseg/imagecore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace knotseg {

ImagePlane::ImagePlane(int width, int height, double fill) : width_(width), height_(height) {
  if (width < 1 || height < 1)
    throw Error("ImagePlane dimensions must be positive, got " + std::to_string(width) + "x" +
                std::to_string(height));
  values_.assign(static_cast<std::size_t>(width) * height, fill);
}

ImagePlane::ImagePlane(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width < 1 || height < 1)
    throw Error("ImagePlane dimensions must be positive, got " + std::to_string(width) + "x" +
                std::to_string(height));
  if (values_.size() != static_cast<std::size_t>(width) * height)
    throw Error("ImagePlane value count does not match " + std::to_string(width) + "x" +
                std::to_string(height));
}

void ImagePlane::require_finite(const std::string& what) const {
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (!std::isfinite((*this)(x, y))) {
        std::ostringstream os;
        os << what << ": non-finite value " << (*this)(x, y) << " at (" << x << ", " << y << ")";
        throw Error(os.str());
      }
    }
  }
}

const char* to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::Image: return "image";
    case ChannelKind::Feature: return "feature";
    case ChannelKind::Score: return "score";
    case ChannelKind::External: return "external";
  }
  return "?";
}

void ChannelStack::add(std::string name, ImagePlane plane, ChannelKind kind) {
  add(std::move(name), std::make_shared<const ImagePlane>(std::move(plane)), kind);
}

void ChannelStack::add(std::string name, std::shared_ptr<const ImagePlane> plane, ChannelKind kind) {
  if (!plane || plane->empty()) throw Error("channel '" + name + "' has no pixels");
  if (contains(name)) throw Error("duplicate channel name '" + name + "'");
  if (channels_.empty()) {
    width_ = plane->width();
    height_ = plane->height();
  } else if (plane->width() != width_ || plane->height() != height_) {
    throw Error("channel '" + name + "' is " + std::to_string(plane->width()) + "x" +
                std::to_string(plane->height()) + ", stack is " + std::to_string(width_) + "x" +
                std::to_string(height_));
  }
  if (kind == ChannelKind::Score) {
    for (double v : plane->values()) {
      if (!(v >= -1.0 && v <= 1.0)) throw Error("score channel '" + name + "' leaves [-1, 1]");
    }
  }
  channels_.push_back(Channel{std::move(name), std::move(plane), kind});
}

void ChannelStack::append(const ChannelStack& other) {
  for (const auto& c : other.channels_) add(c.name, c.plane, c.kind);
}

bool ChannelStack::contains(const std::string& name) const {
  return std::any_of(channels_.begin(), channels_.end(), [&](const Channel& c) { return c.name == name; });
}

const Channel& ChannelStack::channel(const std::string& name) const {
  for (const auto& c : channels_)
    if (c.name == name) return c;
  throw Error("missing channel '" + name + "'");
}

std::vector<std::string> ChannelStack::names() const {
  std::vector<std::string> out;
  out.reserve(channels_.size());
  for (const auto& c : channels_) out.push_back(c.name);
  return out;
}

std::vector<std::string> ChannelStack::names_of_kind(ChannelKind kind) const {
  std::vector<std::string> out;
  for (const auto& c : channels_)
    if (c.kind == kind) out.push_back(c.name);
  return out;
}

ChannelStack ChannelStack::select(const std::vector<std::string>& names) const {
  ChannelStack out;
  for (const auto& n : names) {
    const auto& c = channel(n);
    out.add(c.name, c.plane, c.kind);
  }
  return out;
}

void Volume::validate() const {
  if (slices.empty()) throw Error("volume has no slices");
  for (const auto& s : slices) {
    if (!s.same_shape(slices.front())) throw Error("volume slices differ in size");
  }
}

// --- normalization --------------------------------------------------------

double normalize_score(double raw) {
  // 2 * sigmoid(2 s) - 1 == tanh(s); tanh avoids the cancellation near 0.
  return std::tanh(raw);
}

ScoreMap normalize_scores(const ScoreMap& raw) {
  if (raw.normalized) throw Error("normalize_scores: map is already normalized");
  raw.plane.require_finite("normalize_scores");
  ScoreMap out{raw.plane, true};
  for (double& v : out.plane.values()) v = normalize_score(v);
  return out;
}

// --- filtering ------------------------------------------------------------

std::vector<double> gaussian_kernel_1d(double sigma) {
  if (!(sigma > 0)) throw Error("gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> gaussian_derivative_kernel_1d(double sigma, int order) {
  if (order != 1 && order != 2) throw Error("derivative order must be 1 or 2");
  const auto g = gaussian_kernel_1d(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  std::vector<double> k(g.size());
  if (order == 1) {
    // Correlation taps: response to f(x) = x is exactly 1.
    double moment = 0;
    for (int i = -radius; i <= radius; ++i) moment += static_cast<double>(i) * i * g[i + radius];
    for (int i = -radius; i <= radius; ++i) k[i + radius] = i * g[i + radius] / moment;
  } else {
    const double s2 = sigma * sigma;
    double mean = 0;
    for (int i = -radius; i <= radius; ++i) {
      k[i + radius] = (static_cast<double>(i) * i / (s2 * s2) - 1.0 / s2) * g[i + radius];
      mean += k[i + radius];
    }
    mean /= static_cast<double>(k.size());
    double moment = 0;
    for (int i = -radius; i <= radius; ++i) {
      k[i + radius] -= mean;
      moment += static_cast<double>(i) * i * k[i + radius];
    }
    // Response to f(x) = x^2 is exactly 2.
    for (double& v : k) v *= 2.0 / moment;
  }
  return k;
}

ImagePlane separable_filter(const ImagePlane& in, std::span<const double> kx, std::span<const double> ky) {
  if (kx.size() % 2 == 0 || ky.size() % 2 == 0) throw Error("separable_filter: kernels must have odd length");
  const int w = in.width();
  const int h = in.height();
  const int rx = static_cast<int>(kx.size() / 2);
  const int ry = static_cast<int>(ky.size() / 2);

  ImagePlane tmp(w, h);
  std::vector<double> padded(w + 2 * rx);
  for (int y = 0; y < h; ++y) {
    const auto src = in.row(y);
    for (int i = -rx; i < w + rx; ++i) padded[i + rx] = src[reflect_index(i, w)];
    auto dst = tmp.row(y);
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int t = 0; t <= 2 * rx; ++t) acc += kx[t] * padded[x + t];
      dst[x] = acc;
    }
  }

  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y) {
    auto dst = out.row(y);
    for (int t = 0; t <= 2 * ry; ++t) {
      const auto src = tmp.row(reflect_index(y + t - ry, h));
      const double c = ky[t];
      for (int x = 0; x < w; ++x) dst[x] += c * src[x];
    }
  }
  return out;
}

ImagePlane gaussian_blur(const ImagePlane& in, double sigma) {
  const auto g = gaussian_kernel_1d(sigma);
  return separable_filter(in, g, g);
}

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Gaussian: return "gaussian";
    case FeatureKind::GradientMagnitude: return "gradient-magnitude";
    case FeatureKind::Laplacian: return "laplacian";
    case FeatureKind::StructureTensorEigenvalue: return "structure-tensor-eigenvalues";
    case FeatureKind::HessianEigenvalue: return "hessian-eigenvalues";
  }
  return "?";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  for (auto k : {FeatureKind::Gaussian, FeatureKind::GradientMagnitude, FeatureKind::Laplacian,
                 FeatureKind::StructureTensorEigenvalue, FeatureKind::HessianEigenvalue}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown feature generator '" + s + "'");
}

FeatureSpec FeatureSpec::grid(const std::vector<FeatureKind>& kinds, const std::vector<double>& sigmas) {
  FeatureSpec spec;
  for (auto k : kinds)
    for (double s : sigmas) spec.generators.push_back({k, s});
  return spec;
}

std::string feature_channel_name(const FeatureGenerator& g) {
  std::ostringstream os;
  os << to_string(g.kind) << "@" << g.sigma;
  return os.str();
}

namespace {

struct Gradient {
  ImagePlane gx, gy;
};

Gradient gaussian_gradient(const ImagePlane& image, double sigma) {
  const auto g = gaussian_kernel_1d(sigma);
  const auto d = gaussian_derivative_kernel_1d(sigma, 1);
  return {separable_filter(image, d, g), separable_filter(image, g, d)};
}

ImagePlane larger_eigenvalue(const ImagePlane& a, const ImagePlane& b, const ImagePlane& c) {
  // Symmetric [[a, b], [b, c]].
  ImagePlane out(a.width(), a.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double av = a.values()[i], bv = b.values()[i], cv = c.values()[i];
    const double half_diff = 0.5 * (av - cv);
    out.values()[i] = 0.5 * (av + cv) + std::sqrt(half_diff * half_diff + bv * bv);
  }
  return out;
}

ImagePlane feature_plane(const ImagePlane& image, const FeatureGenerator& gen) {
  const double sigma = gen.sigma;
  switch (gen.kind) {
    case FeatureKind::Gaussian:
      return gaussian_blur(image, sigma);
    case FeatureKind::GradientMagnitude: {
      auto [gx, gy] = gaussian_gradient(image, sigma);
      ImagePlane out(image.width(), image.height());
      for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] = std::hypot(gx.values()[i], gy.values()[i]);
      return out;
    }
    case FeatureKind::Laplacian: {
      const auto g = gaussian_kernel_1d(sigma);
      const auto d2 = gaussian_derivative_kernel_1d(sigma, 2);
      auto xx = separable_filter(image, d2, g);
      const auto yy = separable_filter(image, g, d2);
      for (std::size_t i = 0; i < xx.size(); ++i) xx.values()[i] += yy.values()[i];
      return xx;
    }
    case FeatureKind::StructureTensorEigenvalue: {
      auto [gx, gy] = gaussian_gradient(image, std::max(0.3, 0.5 * sigma));
      ImagePlane xx(image.width(), image.height()), xy = xx, yy = xx;
      for (std::size_t i = 0; i < xx.size(); ++i) {
        xx.values()[i] = gx.values()[i] * gx.values()[i];
        xy.values()[i] = gx.values()[i] * gy.values()[i];
        yy.values()[i] = gy.values()[i] * gy.values()[i];
      }
      return larger_eigenvalue(gaussian_blur(xx, sigma), gaussian_blur(xy, sigma), gaussian_blur(yy, sigma));
    }
    case FeatureKind::HessianEigenvalue: {
      const auto g = gaussian_kernel_1d(sigma);
      const auto d1 = gaussian_derivative_kernel_1d(sigma, 1);
      const auto d2 = gaussian_derivative_kernel_1d(sigma, 2);
      return larger_eigenvalue(separable_filter(image, d2, g), separable_filter(image, d1, d1),
                               separable_filter(image, g, d2));
    }
  }
  throw Error("unknown feature kind");
}

}  // namespace

ChannelStack compute_feature_channels(const ImagePlane& image, const FeatureSpec& spec) {
  for (const auto& g : spec.generators) {
    if (!(g.sigma > 0)) throw Error("feature sigma must be positive, got " + std::to_string(g.sigma));
  }
  std::vector<ImagePlane> planes(spec.generators.size());
  parallel_for(planes.size(), [&](std::size_t i) { planes[i] = feature_plane(image, spec.generators[i]); });
  ChannelStack out;
  for (std::size_t i = 0; i < planes.size(); ++i)
    out.add(feature_channel_name(spec.generators[i]), std::move(planes[i]), ChannelKind::Feature);
  return out;
}

// --- pyramids -------------------------------------------------------------

int scaled_extent(int dim, double scale) {
  return std::max(1, static_cast<int>(std::ceil(dim * scale - 1e-9)));
}

namespace {
int coarse_to_fine(int k, double scale, int fine_dim) {
  return std::min(fine_dim - 1, static_cast<int>(std::floor(k / scale + 1e-9)));
}
int fine_to_coarse(int x, double scale, int coarse_dim) {
  return std::min(coarse_dim - 1, static_cast<int>(std::floor(x * scale + 1e-9)));
}
}  // namespace

ImagePlane downscale(const ImagePlane& image, double scale) {
  if (!(scale > 0 && scale <= 1)) throw Error("pyramid scale must lie in (0, 1]");
  if (scale == 1.0) return image;
  const auto blurred = gaussian_blur(image, 0.5 / scale);
  const int w = scaled_extent(image.width(), scale);
  const int h = scaled_extent(image.height(), scale);
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = coarse_to_fine(y, scale, image.height());
    for (int x = 0; x < w; ++x) out(x, y) = blurred(coarse_to_fine(x, scale, image.width()), sy);
  }
  return out;
}

ImagePlane upsample_nearest(const ImagePlane& coarse, int width, int height, double scale) {
  if (scale == 1.0 && coarse.width() == width && coarse.height() == height) return coarse;
  ImagePlane out(width, height);
  std::vector<int> xs(width);
  for (int x = 0; x < width; ++x) xs[x] = fine_to_coarse(x, scale, coarse.width());
  for (int y = 0; y < height; ++y) {
    const auto src = coarse.row(fine_to_coarse(y, scale, coarse.height()));
    auto dst = out.row(y);
    for (int x = 0; x < width; ++x) dst[x] = src[xs[x]];
  }
  return out;
}

std::vector<ImagePlane> build_pyramid(const ImagePlane& image, const std::vector<double>& scales) {
  if (scales.empty()) throw Error("build_pyramid: empty scale list");
  if (std::find(scales.begin(), scales.end(), 1.0) == scales.end())
    throw Error("build_pyramid: scale 1 must be present");
  std::vector<ImagePlane> out;
  out.reserve(scales.size());
  for (double s : scales) out.push_back(downscale(image, s));
  return out;
}

// --- volumes --------------------------------------------------------------

Volume reslice(const Volume& volume, ReslicePlane plane) {
  volume.validate();
  const int w = volume.width();
  const int h = volume.height();
  const int d = volume.depth();
  Volume out;
  const auto& a = volume.axes;
  if (plane == ReslicePlane::XZ) {
    out.axes = {a[0], a[2], a[1]};
    out.slices.assign(h, ImagePlane(w, d));
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.slices[y](x, z) = volume.slices[z](x, y);
  } else {
    out.axes = {a[2], a[1], a[0]};
    out.slices.assign(w, ImagePlane(d, h));
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.slices[x](z, y) = volume.slices[z](x, y);
  }
  return out;
}

}  // namespace knotseg
