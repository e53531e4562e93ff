#include "knotseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "knotseg/image_io.hpp"

namespace knotseg {

namespace fs = std::filesystem;

std::vector<std::int32_t> DatasetManifest::class_labels() const {
  if (binary()) return {kNegative, kPositive};
  std::vector<std::int32_t> out(class_names.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int32_t>(i);
  return out;
}

namespace {

std::string require_string(const toml::table& t, const char* key, const std::string& where) {
  auto v = t[key].value<std::string>();
  if (!v) throw Error(where + ": '" + key + "' must be a string");
  return *v;
}

void check_keys(const toml::table& t, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : t)
    if (!allowed.count(std::string(k.str()))) throw Error(where + ": unknown key '" + std::string(k.str()) + "'");
}

std::vector<ManifestItem> parse_items(const toml::node_view<const toml::node> node, const fs::path& root,
                                      const std::string& split) {
  std::vector<ManifestItem> items;
  if (!node) return items;
  const auto* arr = node.as_array();
  if (!arr) throw Error("manifest: '" + split + "' must be an array of tables ([[" + split + "]])");
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const auto* t = (*arr)[i].as_table();
    const std::string where = "manifest " + split + "[" + std::to_string(i) + "]";
    if (!t) throw Error(where + " must be a table");
    check_keys(*t, {"image", "labels", "mask", "externals"}, where);
    ManifestItem item;
    item.image = root / require_string(*t, "image", where);
    item.labels = root / require_string(*t, "labels", where);
    if (t->contains("mask")) item.mask = root / require_string(*t, "mask", where);
    if (const auto* ext = (*t)["externals"].as_table()) {
      for (const auto& [k, v] : *ext) {
        auto p = v.value<std::string>();
        if (!p) throw Error(where + ": external '" + std::string(k.str()) + "' must be a path");
        item.externals[std::string(k.str())] = root / *p;
      }
    } else if (t->contains("externals")) {
      throw Error(where + ": 'externals' must be a table of name = path");
    }
    items.push_back(std::move(item));
  }
  return items;
}

void sort_slices(std::vector<ManifestItem>& items) {
  std::stable_sort(items.begin(), items.end(),
                   [](const ManifestItem& a, const ManifestItem& b) { return a.image.filename() < b.image.filename(); });
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Error("manifest: " + what + " not found: " + p.string());
}

void require_dims(int w, int h, int ew, int eh, const fs::path& p) {
  if (w != ew || h != eh) {
    std::ostringstream os;
    os << "manifest: " << p.string() << " is " << w << "x" << h << ", expected " << ew << "x" << eh;
    throw Error(os.str());
  }
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir, const std::string& source) {
  toml::table t;
  try {
    t = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "manifest parse error in " << source << ": " << e.description() << " at line " << e.source().begin.line;
    throw Error(os.str());
  }
  check_keys(t, {"root", "classes", "ignore_value", "volume", "slice_order", "train", "test"}, "manifest");

  DatasetManifest m;
  m.root = base_dir;
  if (t.contains("root")) m.root = base_dir / require_string(t, "root", "manifest");
  if (t.contains("classes")) {
    const auto* arr = t["classes"].as_array();
    if (!arr) throw Error("manifest: 'classes' must be an array of names");
    m.class_names.clear();
    for (const auto& c : *arr) {
      auto s = c.value<std::string>();
      if (!s) throw Error("manifest: class names must be strings");
      m.class_names.push_back(*s);
    }
    if (m.class_names.size() < 2) throw Error("manifest: at least two classes are required");
  }
  if (t.contains("ignore_value")) {
    auto v = t["ignore_value"].value<std::int64_t>();
    if (!v || *v < 0 || *v > 65535) throw Error("manifest: 'ignore_value' must be an integer in [0, 65535]");
    m.ignore_value = static_cast<std::int32_t>(*v);
  }
  if (t.contains("volume")) {
    auto v = t["volume"].value<bool>();
    if (!v) throw Error("manifest: 'volume' must be a boolean");
    m.volume = *v;
  }
  if (t.contains("slice_order")) {
    const auto s = require_string(t, "slice_order", "manifest");
    if (s == "listed")
      m.slice_order = SliceOrder::Listed;
    else if (s == "filename")
      m.slice_order = SliceOrder::Filename;
    else
      throw Error("manifest: unknown slice_order '" + s + "' (expected listed or filename)");
  }
  m.train = parse_items(std::as_const(t)["train"], m.root, "train");
  m.test = parse_items(std::as_const(t)["test"], m.root, "test");
  if (m.slice_order == SliceOrder::Filename) {
    sort_slices(m.train);
    sort_slices(m.test);
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), path.string());
}

void validate_manifest(const DatasetManifest& m) {
  for (const auto* items : {&m.train, &m.test}) {
    int vw = -1, vh = -1;
    std::set<std::string> external_names;
    for (std::size_t i = 0; i < items->size(); ++i) {
      const auto& item = (*items)[i];
      require_file(item.image, "image");
      require_file(item.labels, "label map");
      if (item.mask) require_file(*item.mask, "mask");
      for (const auto& [name, p] : item.externals) require_file(p, "external channel '" + name + "'");

      const auto image = read_image(item.image);
      const int w = image.width(), h = image.height();
      const auto raw = read_raw_labels(item.labels);
      require_dims(raw.width, raw.height, w, h, item.labels);
      if (item.mask) {
        const auto mask = read_mask(*item.mask);
        require_dims(mask.width, mask.height, w, h, *item.mask);
      }
      for (const auto& [name, p] : item.externals) {
        const auto plane = read_float_plane(p);
        require_dims(plane.width(), plane.height(), w, h, p);
      }
      std::set<std::string> names;
      for (const auto& [name, p] : item.externals) names.insert(name);
      if (i == 0)
        external_names = names;
      else if (names != external_names)
        throw Error("manifest: " + item.image.string() + " lists different external channels");
      if (m.volume) {
        if (i == 0) {
          vw = w;
          vh = h;
        }
        require_dims(w, h, vw, vh, item.image);
      }
    }
  }
}

std::vector<ImagePlane> DatasetItem::externals_in(const std::vector<std::string>& names) const {
  std::vector<ImagePlane> out;
  for (const auto& n : names) {
    auto it = externals.find(n);
    if (it == externals.end()) throw Error("item '" + name + "' has no external channel '" + n + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<DatasetItem> load_split(const DatasetManifest& m, Split split) {
  const auto& items = split == Split::Train ? m.train : m.test;
  std::vector<DatasetItem> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    DatasetItem d;
    d.name = item.image.stem().string();
    d.image = read_image(item.image);
    const auto raw = read_raw_labels(item.labels);
    require_dims(raw.width, raw.height, d.image.width(), d.image.height(), item.labels);
    d.labels = m.binary() ? binary_labels_from_raw(raw, m.ignore_value)
                          : class_labels_from_raw(raw, static_cast<int>(m.class_names.size()), m.ignore_value);
    if (item.mask) {
      d.mask = read_mask(*item.mask);
      require_dims(d.mask->width, d.mask->height, d.image.width(), d.image.height(), *item.mask);
    }
    for (const auto& [name, p] : item.externals) {
      auto plane = read_float_plane(p);
      require_dims(plane.width(), plane.height(), d.image.width(), d.image.height(), p);
      d.externals.emplace(name, std::move(plane));
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace knotseg
