#pragma once

// TOML dataset manifest:
//
//   root = "data"                      # optional, relative to the manifest
//   classes = ["background", "cell"]   # two classes: binary, raw 0 -> -1, other -> +1
//   ignore_value = 128                 # optional
//   volume = false                     # items of a split are the slices of one volume
//   slice_order = "listed"             # or "filename"
//
//   [[train]]
//   image = "a.png"
//   labels = "a_gt.png"
//   mask = "a_mask.png"                # optional
//   externals = { membrane = "a_membrane.kseg" }
//
//   [[test]]
//   ...

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

enum class SliceOrder : std::uint8_t { Listed = 0, Filename = 1 };

struct ManifestItem {
  std::filesystem::path image;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> mask;
  std::map<std::string, std::filesystem::path> externals;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names{"background", "foreground"};
  std::optional<std::int32_t> ignore_value;
  bool volume = false;
  SliceOrder slice_order = SliceOrder::Listed;
  std::vector<ManifestItem> train;
  std::vector<ManifestItem> test;

  bool binary() const { return class_names.size() == 2; }
  /// Label values used by the loaded ground truth: {-1, +1} or 0..n-1.
  std::vector<std::int32_t> class_labels() const;
};

/// Paths are resolved against base_dir / root.
DatasetManifest parse_manifest(const std::string& toml_text, const std::filesystem::path& base_dir,
                               const std::string& source = "manifest");
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Checks that every referenced file exists and that all planes of an item
/// share the image's dimensions (and, for volumes, that slices agree).
void validate_manifest(const DatasetManifest& manifest);

struct DatasetItem {
  std::string name;  // image file stem
  ImagePlane image;
  LabelMap labels;
  std::optional<Mask> mask;
  std::map<std::string, ImagePlane> externals;

  /// External planes in the given channel order.
  std::vector<ImagePlane> externals_in(const std::vector<std::string>& names) const;
};

enum class Split : std::uint8_t { Train, Test };

std::vector<DatasetItem> load_split(const DatasetManifest& manifest, Split split);

}  // namespace knotseg
