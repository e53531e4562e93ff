#include "knotseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "knotseg/serialize.hpp"

namespace knotseg {

namespace {

cv::Mat load_gray(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("image not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error("cannot decode image: " + path.string());
  if (m.depth() != CV_8U && m.depth() != CV_16U)
    throw Error("unsupported bit depth in " + path.string() + " (expected 8 or 16 bit)");
  return m;
}

void save(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image: " + path.string());
}

}  // namespace

ImagePlane read_image(const std::filesystem::path& path) {
  const cv::Mat m = load_gray(path);
  const double full = m.depth() == CV_8U ? 255.0 : 65535.0;
  ImagePlane out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      const double v = m.depth() == CV_8U ? m.at<std::uint8_t>(y, x) : m.at<std::uint16_t>(y, x);
      out(x, y) = v / full;
    }
  }
  return out;
}

void write_image_png16(const std::filesystem::path& path, const ImagePlane& plane) {
  cv::Mat m(plane.height(), plane.width(), CV_16U);
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x)
      m.at<std::uint16_t>(y, x) =
          static_cast<std::uint16_t>(std::lround(std::clamp(plane(x, y), 0.0, 1.0) * 65535.0));
  save(path, m);
}

RawLabels read_raw_labels(const std::filesystem::path& path) {
  const cv::Mat m = load_gray(path);
  RawLabels raw{m.cols, m.rows, std::vector<std::int32_t>(static_cast<std::size_t>(m.cols) * m.rows)};
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      raw.values[static_cast<std::size_t>(y) * m.cols + x] =
          m.depth() == CV_8U ? m.at<std::uint8_t>(y, x) : m.at<std::uint16_t>(y, x);
  return raw;
}

LabelMap binary_labels_from_raw(const RawLabels& raw, std::optional<std::int32_t> ignore_value) {
  LabelMap out(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const auto v = raw.values[i];
    if (ignore_value && v == *ignore_value)
      out.labels[i] = kIgnoreLabel;
    else
      out.labels[i] = v == 0 ? kNegative : kPositive;
  }
  return out;
}

LabelMap class_labels_from_raw(const RawLabels& raw, int class_count, std::optional<std::int32_t> ignore_value) {
  LabelMap out(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const auto v = raw.values[i];
    if (ignore_value && v == *ignore_value) {
      out.labels[i] = kIgnoreLabel;
    } else {
      if (v < 0 || v >= class_count)
        throw Error("label value " + std::to_string(v) + " outside class set of size " +
                    std::to_string(class_count));
      out.labels[i] = v;
    }
  }
  return out;
}

Mask read_mask(const std::filesystem::path& path) {
  const auto raw = read_raw_labels(path);
  Mask m(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.values.size(); ++i) m.usable[i] = raw.values[i] != 0 ? 1 : 0;
  return m;
}

void write_labels_png(const std::filesystem::path& path, const LabelMap& labels, bool binary,
                      std::uint8_t ignore_value) {
  cv::Mat m(labels.height, labels.width, CV_8U);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const auto v = labels(x, y);
      std::uint8_t out;
      if (v == kIgnoreLabel)
        out = ignore_value;
      else if (binary)
        out = v > 0 ? 255 : 0;
      else
        out = static_cast<std::uint8_t>(v);
      m.at<std::uint8_t>(y, x) = out;
    }
  }
  save(path, m);
}

std::vector<std::uint8_t> encode_float_plane(const ImagePlane& plane) {
  BinaryWriter w;
  w.bytes("KSEG", 4);
  w.u32(kFloatPlaneVersion);
  w.u32(static_cast<std::uint32_t>(plane.width()));
  w.u32(static_cast<std::uint32_t>(plane.height()));
  for (double v : plane.values()) w.f32(static_cast<float>(v));
  return w.take();
}

ImagePlane decode_float_plane(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string_view(magic, 4) != "KSEG") throw Error("float plane: bad magic");
  const auto version = r.u32();
  if (version != kFloatPlaneVersion)
    throw Error("float plane: unsupported version " + std::to_string(version));
  const auto w = r.u32();
  const auto h = r.u32();
  if (w == 0 || h == 0) throw Error("float plane: zero dimension");
  if (static_cast<std::uint64_t>(w) * h * 4 != r.remaining())
    throw Error("float plane: payload size does not match " + std::to_string(w) + "x" + std::to_string(h));
  std::vector<double> values(static_cast<std::size_t>(w) * h);
  for (auto& v : values) v = r.f32();
  return ImagePlane(static_cast<int>(w), static_cast<int>(h), std::move(values));
}

void write_float_plane(const std::filesystem::path& path, const ImagePlane& plane) {
  write_file_bytes(path, encode_float_plane(plane));
}

ImagePlane read_float_plane(const std::filesystem::path& path) {
  return decode_float_plane(read_file_bytes(path));
}

void write_visualization_png(const std::filesystem::path& path, const ImagePlane& plane, double lo, double hi) {
  cv::Mat m(plane.height(), plane.width(), CV_8U);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x)
      m.at<std::uint8_t>(y, x) =
          static_cast<std::uint8_t>(std::lround(std::clamp((plane(x, y) - lo) / span, 0.0, 1.0) * 255.0));
  save(path, m);
}

void write_label_index_png(const std::filesystem::path& path, int width, int height,
                           std::span<const std::int32_t> labels) {
  cv::Mat m(height, width, CV_16U);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto v = labels[static_cast<std::size_t>(y) * width + x];
      if (v < 0 || v > 65535) throw Error("label index outside 16-bit range");
      m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
    }
  }
  save(path, m);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace knotseg
