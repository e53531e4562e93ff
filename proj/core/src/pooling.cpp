#include "knotseg/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace knotseg {

std::string PoolSpec::describe() const {
  std::ostringstream os;
  const char* ops[] = {"max", "mean"};
  const char* variants[] = {"whole", "eroded", "dilated"};
  const char* combiners[] = {"diff", "absdiff", "ratio"};
  switch (kind) {
    case PoolKind::None: os << "none"; break;
    case PoolKind::WindowMax: os << "max" << radius; break;
    case PoolKind::Superpixel:
      os << "sp-" << ops[static_cast<int>(op)] << "-" << variants[static_cast<int>(variant)];
      break;
    case PoolKind::SuperpixelContrast:
      os << "sp-" << ops[static_cast<int>(op)] << "-" << combiners[static_cast<int>(combiner)];
      break;
  }
  return os.str();
}

const std::vector<std::int32_t>& RegionTable::region(int sp, RegionVariant v) const {
  switch (v) {
    case RegionVariant::Whole: return original.at(sp);
    case RegionVariant::Eroded: return eroded_empty.at(sp) ? original.at(sp) : eroded.at(sp);
    case RegionVariant::Dilated: return dilated.at(sp);
  }
  return original.at(sp);
}

// --- window max -----------------------------------------------------------

namespace {

// out[i] = max(in[i-r .. i+r] clamped), strided access.
void sliding_max(const double* in, double* out, int n, int stride, int r, std::deque<int>& dq) {
  dq.clear();
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int hi = std::min(n - 1, i + r);
    while (next <= hi) {
      while (!dq.empty() && in[static_cast<std::size_t>(dq.back()) * stride] <= in[static_cast<std::size_t>(next) * stride])
        dq.pop_back();
      dq.push_back(next++);
    }
    while (dq.front() < i - r) dq.pop_front();
    out[static_cast<std::size_t>(i) * stride] = in[static_cast<std::size_t>(dq.front()) * stride];
  }
}

}  // namespace

ImagePlane max_pool(const ImagePlane& plane, int radius) {
  if (radius < 0) throw Error("max_pool: radius must be non-negative");
  if (radius == 0) return plane;
  const int w = plane.width();
  const int h = plane.height();
  ImagePlane tmp(w, h), out(w, h);
  std::deque<int> dq;
  for (int y = 0; y < h; ++y) sliding_max(plane.row(y).data(), tmp.row(y).data(), w, 1, radius, dq);
  for (int x = 0; x < w; ++x) sliding_max(tmp.values().data() + x, out.values().data() + x, h, w, radius, dq);
  return out;
}

// --- SLIC -----------------------------------------------------------------

namespace {

struct Center {
  double x, y, intensity;
};

void enforce_connectivity(SuperpixelMap& sp, int initial_count) {
  const int w = sp.width;
  const int h = sp.height;
  const std::size_t n = sp.labels.size();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::int32_t> comp_label;
  std::vector<std::int32_t> comp_size;
  std::vector<std::int32_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comp_label.size());
    const auto lab = sp.labels[start];
    comp_label.push_back(lab);
    comp_size.push_back(0);
    stack.assign(1, static_cast<std::int32_t>(start));
    comp[start] = id;
    while (!stack.empty()) {
      const auto p = stack.back();
      stack.pop_back();
      ++comp_size[id];
      const int x = p % w, y = p / w;
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= w || q[1] < 0 || q[1] >= h) continue;
        const auto qi = static_cast<std::size_t>(q[1]) * w + q[0];
        if (comp[qi] < 0 && sp.labels[qi] == lab) {
          comp[qi] = id;
          stack.push_back(static_cast<std::int32_t>(qi));
        }
      }
    }
  }

  // Keep the largest component of each label; everything else is an orphan.
  std::vector<std::int32_t> keeper(static_cast<std::size_t>(initial_count), -1);
  for (std::size_t c = 0; c < comp_label.size(); ++c) {
    auto& k = keeper[comp_label[c]];
    if (k < 0 || comp_size[c] > comp_size[k]) k = static_cast<std::int32_t>(c);
  }
  // owner[c] = kept component that c merges into (itself for keepers).
  std::vector<std::int32_t> owner(comp_label.size(), -1);
  std::vector<std::int64_t> owner_size(comp_label.size(), 0);
  for (auto k : keeper) {
    if (k >= 0) {
      owner[k] = k;
      owner_size[k] = comp_size[k];
    }
  }
  std::vector<std::vector<std::int32_t>> comp_pixels(comp_label.size());
  for (std::size_t i = 0; i < n; ++i)
    if (owner[comp[i]] < 0) comp_pixels[comp[i]].push_back(static_cast<std::int32_t>(i));

  bool pending = true;
  while (pending) {
    pending = false;
    bool progressed = false;
    for (std::size_t c = 0; c < comp_label.size(); ++c) {
      if (owner[c] >= 0) continue;
      std::int32_t best = -1;
      for (auto p : comp_pixels[c]) {
        const int x = p % w, y = p / w;
        const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[0] >= w || q[1] < 0 || q[1] >= h) continue;
          const auto o = owner[comp[static_cast<std::size_t>(q[1]) * w + q[0]]];
          if (o < 0 || static_cast<std::size_t>(o) == c) continue;
          if (best < 0 || owner_size[o] > owner_size[best] || (owner_size[o] == owner_size[best] && o < best))
            best = o;
        }
      }
      if (best < 0) {
        pending = true;
        continue;
      }
      owner[c] = best;
      owner_size[best] += comp_size[c];
      progressed = true;
    }
    if (pending && !progressed) throw Error("slic: connectivity repair did not converge");
  }

  // Compact relabel in raster order of first appearance.
  std::vector<std::int32_t> remap(comp_label.size(), -1);
  std::int32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = owner[comp[i]];
    if (remap[o] < 0) remap[o] = next++;
    sp.labels[i] = remap[o];
  }
  sp.count = next;
}

}  // namespace

SuperpixelMap slic(const ImagePlane& image, int region_size, double compactness, int iterations) {
  if (region_size < 2) throw Error("slic: region size must be at least 2");
  if (!(compactness > 0)) throw Error("slic: compactness must be positive");
  const int w = image.width();
  const int h = image.height();
  SuperpixelMap sp;
  sp.width = w;
  sp.height = h;
  sp.region_size = region_size;
  sp.compactness = compactness;
  sp.labels.assign(static_cast<std::size_t>(w) * h, 0);
  if (w < region_size || h < region_size) {
    sp.count = 1;
    return sp;
  }

  const int nx = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) / region_size)));
  const int ny = std::max(1, static_cast<int>(std::lround(static_cast<double>(h) / region_size)));
  auto gradient = [&](int x, int y) {
    const double dx = image(std::min(w - 1, x + 1), y) - image(std::max(0, x - 1), y);
    const double dy = image(x, std::min(h - 1, y + 1)) - image(x, std::max(0, y - 1));
    return dx * dx + dy * dy;
  };
  std::vector<Center> centers;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int cx = static_cast<int>((i + 0.5) * w / nx);
      const int cy = static_cast<int>((j + 0.5) * h / ny);
      int bx = cx, by = cy;
      double bg = gradient(cx, cy);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || x >= w || y < 0 || y >= h) continue;
          const double g = gradient(x, y);
          if (g < bg) {
            bg = g;
            bx = x;
            by = y;
          }
        }
      }
      centers.push_back({static_cast<double>(bx), static_cast<double>(by), image(bx, by)});
    }
  }

  const double spatial = (compactness / region_size) * (compactness / region_size);
  const std::size_t n = sp.labels.size();
  std::vector<double> dist(n);
  std::vector<std::int32_t>& labels = sp.labels;
  auto distance = [&](const Center& c, int x, int y) {
    const double di = image(x, y) - c.intensity;
    const double dx = x - c.x, dy = y - c.y;
    return di * di + spatial * (dx * dx + dy * dy);
  };
  for (int it = 0; it < std::max(1, iterations); ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x - region_size)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + region_size)));
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y - region_size)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + region_size)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double d = distance(c, x, y);
          const auto idx = static_cast<std::size_t>(y) * w + x;
          if (d < dist[idx]) {
            dist[idx] = d;
            labels[idx] = static_cast<std::int32_t>(k);
          }
        }
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto idx = static_cast<std::size_t>(y) * w + x;
        if (labels[idx] >= 0) continue;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < centers.size(); ++k) {
          const double d = distance(centers[k], x, y);
          if (d < best) {
            best = d;
            labels[idx] = static_cast<std::int32_t>(k);
          }
        }
      }
    }
    std::vector<Center> sums(centers.size(), Center{0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto l = labels[static_cast<std::size_t>(y) * w + x];
        sums[l].x += x;
        sums[l].y += y;
        sums[l].intensity += image(x, y);
        ++counts[l];
      }
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double c = static_cast<double>(counts[k]);
      centers[k] = {sums[k].x / c, sums[k].y / c, sums[k].intensity / c};
    }
  }

  // Labels of centres that lost all pixels would leave gaps; compact first.
  std::vector<std::int32_t> used(centers.size(), -1);
  std::int32_t count = 0;
  for (auto& l : labels) {
    if (used[l] < 0) used[l] = count++;
    l = used[l];
  }
  enforce_connectivity(sp, count);
  return sp;
}

// --- region variants ------------------------------------------------------

RegionTable region_variants(const SuperpixelMap& spmap, int erosion, int dilation) {
  if (erosion < 0 || dilation < 0) throw Error("region_variants: amounts must be non-negative");
  const int w = spmap.width;
  const int h = spmap.height;
  const auto k = static_cast<std::size_t>(spmap.count);
  RegionTable t;
  t.superpixels = spmap;
  t.erosion = erosion;
  t.dilation = dilation;
  t.original.resize(k);
  t.eroded.resize(k);
  t.dilated.resize(k);
  t.eroded_empty.assign(k, 0);

  struct Box {
    int x0 = std::numeric_limits<int>::max(), y0 = std::numeric_limits<int>::max(), x1 = -1, y1 = -1;
  };
  std::vector<Box> boxes(k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = static_cast<std::size_t>(spmap(x, y));
      t.original[l].push_back(y * w + x);
      auto& b = boxes[l];
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  }

  const int pad = std::max(erosion, dilation);
  std::vector<std::int32_t> integral;
  for (std::size_t s = 0; s < k; ++s) {
    const auto& b = boxes[s];
    // Local frame: box grown by pad on each side (may extend past the image).
    const int lx0 = b.x0 - pad, ly0 = b.y0 - pad;
    const int lw = b.x1 - b.x0 + 1 + 2 * pad, lh = b.y1 - b.y0 + 1 + 2 * pad;
    integral.assign(static_cast<std::size_t>(lw + 1) * (lh + 1), 0);
    auto at = [&](int i, int j) -> std::int32_t& { return integral[static_cast<std::size_t>(j) * (lw + 1) + i]; };
    for (int j = 0; j < lh; ++j) {
      for (int i = 0; i < lw; ++i) {
        const int x = lx0 + i, y = ly0 + j;
        const int in = (x >= 0 && x < w && y >= 0 && y < h && spmap(x, y) == static_cast<std::int32_t>(s)) ? 1 : 0;
        at(i + 1, j + 1) = in + at(i, j + 1) + at(i + 1, j) - at(i, j);
      }
    }
    auto window = [&](int x, int y, int r) {
      const int i0 = std::max(0, x - r - lx0), j0 = std::max(0, y - r - ly0);
      const int i1 = std::min(lw, x + r + 1 - lx0), j1 = std::min(lh, y + r + 1 - ly0);
      return at(i1, j1) - at(i0, j1) - at(i1, j0) + at(i0, j0);
    };
    const int full = (2 * erosion + 1) * (2 * erosion + 1);
    for (auto p : t.original[s]) {
      if (window(p % w, p / w, erosion) == full) t.eroded[s].push_back(p);
    }
    for (int y = std::max(0, b.y0 - dilation); y <= std::min(h - 1, b.y1 + dilation); ++y) {
      for (int x = std::max(0, b.x0 - dilation); x <= std::min(w - 1, b.x1 + dilation); ++x) {
        if (window(x, y, dilation) > 0) t.dilated[s].push_back(y * w + x);
      }
    }
    t.eroded_empty[s] = t.eroded[s].empty() ? 1 : 0;
  }
  return t;
}

ImagePlane superpixel_pool(const ImagePlane& plane, const RegionTable& regions, RegionOp op, RegionVariant variant) {
  const auto& sp = regions.superpixels;
  if (plane.width() != sp.width || plane.height() != sp.height)
    throw Error("superpixel_pool: plane and regions differ in size");
  std::vector<double> stat(static_cast<std::size_t>(sp.count));
  const auto values = plane.values();
  for (int s = 0; s < sp.count; ++s) {
    const auto& reg = regions.region(s, variant);
    if (op == RegionOp::Max) {
      double m = -std::numeric_limits<double>::infinity();
      for (auto p : reg) m = std::max(m, values[p]);
      stat[s] = m;
    } else {
      double sum = 0;
      for (auto p : reg) sum += values[p];
      stat[s] = sum / static_cast<double>(reg.size());
    }
  }
  ImagePlane out(plane.width(), plane.height());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = stat[sp.labels[i]];
  return out;
}

ImagePlane superpixel_feature(const ImagePlane& a, const ImagePlane& b, Combiner combiner) {
  if (!a.same_shape(b)) throw Error("superpixel_feature: planes differ in size");
  ImagePlane out(a.width(), a.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i], y = b.values()[i];
    switch (combiner) {
      case Combiner::Difference: out.values()[i] = x - y; break;
      case Combiner::AbsDifference: out.values()[i] = std::abs(x - y); break;
      case Combiner::RatioSafe: out.values()[i] = (x + kRatioEpsilon) / (y + kRatioEpsilon); break;
    }
  }
  return out;
}

ImagePlane apply_pool(const ImagePlane& plane, const PoolSpec& spec, const RegionTable* regions) {
  switch (spec.kind) {
    case PoolKind::None: return plane;
    case PoolKind::WindowMax: return max_pool(plane, spec.radius);
    case PoolKind::Superpixel:
      if (!regions) throw Error("superpixel pooling requested without superpixel regions");
      return superpixel_pool(plane, *regions, spec.op, spec.variant);
    case PoolKind::SuperpixelContrast:
      if (!regions) throw Error("superpixel pooling requested without superpixel regions");
      return superpixel_feature(superpixel_pool(plane, *regions, spec.op, RegionVariant::Eroded),
                                superpixel_pool(plane, *regions, spec.op, RegionVariant::Dilated), spec.combiner);
  }
  throw Error("unknown pool kind");
}

}  // namespace knotseg
