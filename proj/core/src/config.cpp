#include "knotseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

namespace knotseg {

const char* to_string(ThresholdMode m) {
  switch (m) {
    case ThresholdMode::PerImage: return "per-image";
    case ThresholdMode::Global: return "global";
    case ThresholdMode::Fixed: return "fixed";
  }
  return "?";
}

ThresholdMode threshold_mode_from_string(const std::string& s) {
  if (s == "per-image") return ThresholdMode::PerImage;
  if (s == "global") return ThresholdMode::Global;
  if (s == "fixed") return ThresholdMode::Fixed;
  throw Error("unknown threshold mode '" + s + "'");
}

namespace {

LambdaMode lambda_mode_from_string(const std::string& s) {
  if (s == "absolute") return LambdaMode::Absolute;
  if (s == "trace-normalized") return LambdaMode::TraceNormalized;
  throw Error("unknown lambda mode '" + s + "'");
}

const char* to_string(LambdaMode m) { return m == LambdaMode::Absolute ? "absolute" : "trace-normalized"; }

ChannelKind channel_kind_from_string(const std::string& s) {
  for (auto k : {ChannelKind::Image, ChannelKind::Feature, ChannelKind::Score, ChannelKind::External})
    if (s == to_string(k)) return k;
  throw Error("unknown channel kind '" + s + "'");
}

/// One TOML table; records which keys were read so leftovers can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void get(const char* key, T& out) {
    const toml::node* node = find(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) fail(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value<std::string>();
      if (!v) fail(key, "a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(key, "a number");
      out = *v;
    } else {
      auto v = node->value<std::int64_t>();
      if (!v || (!std::is_signed_v<T> && *v < 0)) fail(key, "an integer");
      out = static_cast<T>(*v);
    }
  }

  template <typename T>
  void get_list(const char* key, std::vector<T>& out) {
    const toml::node* node = find(key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr) fail(key, "an array");
    std::vector<T> v;
    for (const auto& item : *arr) {
      if constexpr (std::is_same_v<T, std::string>) {
        auto x = item.value<std::string>();
        if (!x) fail(key, "an array of strings");
        v.push_back(*x);
      } else if constexpr (std::is_floating_point_v<T>) {
        auto x = item.value<double>();
        if (!x) fail(key, "an array of numbers");
        v.push_back(*x);
      } else {
        auto x = item.value<std::int64_t>();
        if (!x) fail(key, "an array of integers");
        v.push_back(static_cast<T>(*x));
      }
    }
    out = std::move(v);
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      if (!used_.count(std::string(k.str()))) throw Error("unknown key '" + name_ + "." + std::string(k.str()) + "'");
  }

 private:
  const toml::node* find(const char* key) {
    if (!table_) return nullptr;
    used_.insert(key);
    return table_->get(key);
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw Error("config key '" + name_ + "." + key + "' must be " + expected);
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename T>
toml::array to_array(const std::vector<T>& v) {
  toml::array a;
  for (const auto& x : v) {
    if constexpr (std::is_integral_v<T>)
      a.push_back(static_cast<std::int64_t>(x));
    else
      a.push_back(x);
  }
  return a;
}

}  // namespace

AppConfig parse_config(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error in " << source << ": " << e.description() << " at line " << e.source().begin.line;
    throw Error(os.str());
  }
  static const std::set<std::string> known{"pipeline", "boost", "kernelbank", "superpixels", "features",
                                           "context",  "fusion", "evaluation"};
  for (const auto& [k, v] : root) {
    if (!known.count(std::string(k.str()))) throw Error("unknown config section '" + std::string(k.str()) + "'");
    if (!v.is_table()) throw Error("config section '" + std::string(k.str()) + "' must be a table");
  }
  auto table = [&](const char* name) { return root[name].as_table(); };

  AppConfig cfg;
  auto& b = cfg.context.boost;
  {
    Section s(table("pipeline"), "pipeline");
    s.get("architecture", cfg.architecture);
    if (cfg.architecture != "none") cfg.context.architecture = architecture_from_string(cfg.architecture);
    std::vector<std::int64_t> classes;
    s.get_list("classes", classes);
    cfg.context.classes.assign(classes.begin(), classes.end());
    s.finish();
  }
  {
    Section s(table("boost"), "boost");
    s.get("rounds", b.rounds);
    s.get("depth", b.depth);
    s.get("shrinkage", b.shrinkage);
    s.get("thresholds", b.thresholds);
    s.get("leaf_cap", b.leaf_cap);
    s.get("n_pos", b.n_pos);
    s.get("n_neg", b.n_neg);
    s.get("sample_margin", b.sample_margin);
    s.get("clustering", b.clustering);
    s.get("clusters", b.clusters);
    s.get("cluster_patch_side", b.cluster_patch_side);
    s.get("window_pooling", b.window_pooling);
    s.get("pool_radius", b.pool_radius);
    s.get("superpixel_pooling", b.superpixel_pooling);
    s.get("seed", b.seed);
    s.finish();
  }
  {
    Section s(table("kernelbank"), "kernelbank");
    s.get("bank_size", b.bank.bank_size);
    s.get_list("filter_sizes", b.bank.filter_sizes);
    s.get("lambda", b.bank.lambda);
    std::string mode = to_string(b.bank.lambda_mode);
    s.get("lambda_mode", mode);
    b.bank.lambda_mode = lambda_mode_from_string(mode);
    s.get_list("scales", b.bank.scales);
    s.get("max_negatives", b.bank.max_negatives);
    s.get_list("channels", b.bank.channels);
    std::vector<std::string> kinds;
    s.get_list("kernel_kinds", kinds);
    for (const auto& k : kinds) b.kernel_kinds.push_back(channel_kind_from_string(k));
    kinds.clear();
    s.get_list("later_kernel_kinds", kinds);
    for (const auto& k : kinds) cfg.context.later_kernel_kinds.push_back(channel_kind_from_string(k));
    s.finish();
  }
  {
    Section s(table("superpixels"), "superpixels");
    s.get("region_size", b.superpixels.region_size);
    s.get("compactness", b.superpixels.compactness);
    s.get("iterations", b.superpixels.iterations);
    s.get("erosion", b.superpixels.erosion);
    s.get("dilation", b.superpixels.dilation);
    s.finish();
  }
  {
    Section s(table("features"), "features");
    std::vector<std::string> kinds;
    std::vector<double> sigmas = FeatureSpec::default_sigmas();
    s.get_list("kinds", kinds);
    s.get_list("sigmas", sigmas);
    std::vector<FeatureKind> fk;
    for (const auto& k : kinds) fk.push_back(feature_kind_from_string(k));
    cfg.recipe.features = fk.empty() ? FeatureSpec{} : FeatureSpec::grid(fk, sigmas);
    s.get("image_channel", cfg.recipe.image_channel);
    s.get_list("externals", cfg.recipe.externals);
    s.finish();
  }
  {
    auto& sp = cfg.context.split;
    Section s(table("context"), "context");
    s.get("epsilon", sp.epsilon);
    s.get("max_levels", sp.max_levels);
    s.get("min_misclassified_fraction", sp.min_misclassified_fraction);
    s.get("min_samples", sp.min_samples);
    s.get("min_class_samples", sp.min_class_samples);
    s.get("normalize", sp.normalize);
    s.get("stages", cfg.context.stages);
    s.finish();
    sp.validate();
  }
  {
    auto& f = cfg.context.fusion;
    Section s(table("fusion"), "fusion");
    s.get_list("half_sides", f.snowflake.half_sides);
    s.get("include_center", f.snowflake.include_center);
    s.get("n_trees", f.forest.n_trees);
    s.get("min_leaf", f.forest.min_leaf);
    s.get("max_depth", f.forest.max_depth);
    s.get("m_try", f.forest.m_try);
    s.get("bootstrap", f.forest.bootstrap);
    s.get("max_per_class", f.forest.max_per_class);
    s.get("seed", f.forest.seed);
    s.get("fake3d", f.fake3d);
    s.finish();
    f.snowflake.validate();
  }
  {
    Section s(table("evaluation"), "evaluation");
    std::string metric = to_string(cfg.eval.metric), mode = to_string(cfg.eval.mode);
    s.get("threshold_metric", metric);
    s.get("threshold_mode", mode);
    s.get("fixed_threshold", cfg.eval.fixed_threshold);
    cfg.eval.metric = threshold_metric_from_string(metric);
    cfg.eval.mode = threshold_mode_from_string(mode);
    s.finish();
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_toml(const AppConfig& cfg) {
  const auto& b = cfg.context.boost;
  const auto& sp = cfg.context.split;
  const auto& f = cfg.context.fusion;

  toml::array classes;
  for (auto c : cfg.context.classes) classes.push_back(static_cast<std::int64_t>(c));
  toml::table pipeline{{"architecture", cfg.architecture}, {"classes", classes}};

  toml::table boost{{"rounds", b.rounds},
                    {"depth", b.depth},
                    {"shrinkage", b.shrinkage},
                    {"thresholds", b.thresholds},
                    {"leaf_cap", b.leaf_cap},
                    {"n_pos", static_cast<std::int64_t>(b.n_pos)},
                    {"n_neg", static_cast<std::int64_t>(b.n_neg)},
                    {"sample_margin", b.sample_margin},
                    {"clustering", b.clustering},
                    {"clusters", b.clusters},
                    {"cluster_patch_side", b.cluster_patch_side},
                    {"window_pooling", b.window_pooling},
                    {"pool_radius", b.pool_radius},
                    {"superpixel_pooling", b.superpixel_pooling},
                    {"seed", static_cast<std::int64_t>(b.seed)}};

  toml::array kinds, later;
  for (auto k : b.kernel_kinds) kinds.push_back(to_string(k));
  for (auto k : cfg.context.later_kernel_kinds) later.push_back(to_string(k));
  toml::table bank{{"bank_size", b.bank.bank_size},
                   {"filter_sizes", to_array(b.bank.filter_sizes)},
                   {"lambda", b.bank.lambda},
                   {"lambda_mode", to_string(b.bank.lambda_mode)},
                   {"scales", to_array(b.bank.scales)},
                   {"max_negatives", static_cast<std::int64_t>(b.bank.max_negatives)},
                   {"channels", to_array(b.bank.channels)},
                   {"kernel_kinds", kinds},
                   {"later_kernel_kinds", later}};

  toml::table superpixels{{"region_size", b.superpixels.region_size},
                          {"compactness", b.superpixels.compactness},
                          {"iterations", b.superpixels.iterations},
                          {"erosion", b.superpixels.erosion},
                          {"dilation", b.superpixels.dilation}};

  // Feature generators are written as a kinds x sigmas grid.
  std::vector<std::string> fkinds;
  std::vector<double> fsigmas;
  for (const auto& g : cfg.recipe.features.generators) {
    if (std::find(fkinds.begin(), fkinds.end(), to_string(g.kind)) == fkinds.end()) fkinds.push_back(to_string(g.kind));
    if (std::find(fsigmas.begin(), fsigmas.end(), g.sigma) == fsigmas.end()) fsigmas.push_back(g.sigma);
  }
  if (fsigmas.empty()) fsigmas = FeatureSpec::default_sigmas();
  toml::table features{{"kinds", to_array(fkinds)},
                       {"sigmas", to_array(fsigmas)},
                       {"image_channel", cfg.recipe.image_channel},
                       {"externals", to_array(cfg.recipe.externals)}};

  toml::table context{{"epsilon", sp.epsilon},
                      {"max_levels", sp.max_levels},
                      {"min_misclassified_fraction", sp.min_misclassified_fraction},
                      {"min_samples", static_cast<std::int64_t>(sp.min_samples)},
                      {"min_class_samples", static_cast<std::int64_t>(sp.min_class_samples)},
                      {"normalize", sp.normalize},
                      {"stages", cfg.context.stages}};

  toml::table fusion{{"half_sides", to_array(f.snowflake.half_sides)},
                     {"include_center", f.snowflake.include_center},
                     {"n_trees", f.forest.n_trees},
                     {"min_leaf", f.forest.min_leaf},
                     {"max_depth", f.forest.max_depth},
                     {"m_try", f.forest.m_try},
                     {"bootstrap", f.forest.bootstrap},
                     {"max_per_class", static_cast<std::int64_t>(f.forest.max_per_class)},
                     {"seed", static_cast<std::int64_t>(f.forest.seed)},
                     {"fake3d", f.fake3d}};

  toml::table evaluation{{"threshold_metric", to_string(cfg.eval.metric)},
                         {"threshold_mode", to_string(cfg.eval.mode)},
                         {"fixed_threshold", cfg.eval.fixed_threshold}};

  toml::table root{{"pipeline", pipeline}, {"boost", boost},     {"kernelbank", bank},
                   {"superpixels", superpixels}, {"features", features}, {"context", context},
                   {"fusion", fusion},     {"evaluation", evaluation}};
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

std::string defaults_toml() { return to_toml(AppConfig{}); }

namespace {

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

double parse_number(const std::string& s, const char* flag) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(std::string(flag) + ": '" + s + "' is not a number");
  }
}

}  // namespace

void apply_superpixel_flag(AppConfig& cfg, const std::string& value) {
  const auto parts = split_commas(value);
  if (parts.size() != 2) throw Error("--superpixels expects S,m");
  const double s = parse_number(parts[0], "--superpixels");
  if (s < 2 || s != static_cast<int>(s)) throw Error("--superpixels: S must be an integer >= 2");
  cfg.context.boost.superpixels.region_size = static_cast<int>(s);
  cfg.context.boost.superpixels.compactness = parse_number(parts[1], "--superpixels");
  cfg.context.boost.superpixel_pooling = true;
}

void apply_snowflake_flag(AppConfig& cfg, const std::string& value) {
  std::vector<int> sides;
  for (const auto& p : split_commas(value)) {
    const double h = parse_number(p, "--snowflake");
    if (h != static_cast<int>(h)) throw Error("--snowflake: half-sides must be integers");
    sides.push_back(static_cast<int>(h));
  }
  SnowflakeSpec spec = cfg.context.fusion.snowflake;
  spec.half_sides = sides;
  spec.validate();
  cfg.context.fusion.snowflake = spec;
}

}  // namespace knotseg
