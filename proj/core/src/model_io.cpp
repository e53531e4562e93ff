#include "knotseg/model_io.hpp"

#include "knotseg/image_io.hpp"
#include "knotseg/serialize.hpp"

namespace knotseg {

namespace {

constexpr char kMagic[4] = {'K', 'B', 'S', 'T'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename E>
E checked_enum(std::uint8_t v, std::uint8_t max, const char* what) {
  if (v > max) throw Error(std::string("corrupt model: bad ") + what + " value " + std::to_string(v));
  return static_cast<E>(v);
}

// --- writers ----------------------------------------------------------------

void put(BinaryWriter& w, const std::vector<std::string>& v) {
  w.u64(v.size());
  for (const auto& s : v) w.str(s);
}

void put(BinaryWriter& w, const std::vector<int>& v) {
  w.u64(v.size());
  for (int x : v) w.i32(x);
}

void put(BinaryWriter& w, const PoolSpec& p) {
  w.u8(static_cast<std::uint8_t>(p.kind));
  w.i32(p.radius);
  w.u8(static_cast<std::uint8_t>(p.op));
  w.u8(static_cast<std::uint8_t>(p.variant));
  w.u8(static_cast<std::uint8_t>(p.combiner));
}

void put(BinaryWriter& w, const TrainConfig& c) {
  w.i32(c.rounds);
  w.i32(c.depth);
  w.f64(c.shrinkage);
  w.i32(c.thresholds);
  w.f64(c.leaf_cap);
  w.u64(c.n_pos);
  w.u64(c.n_neg);
  w.i32(c.sample_margin);
  w.i32(c.bank.bank_size);
  put(w, c.bank.filter_sizes);
  w.f64(c.bank.lambda);
  w.u8(static_cast<std::uint8_t>(c.bank.lambda_mode));
  put(w, c.bank.channels);
  w.f64s(c.bank.scales);
  w.u64(c.bank.max_negatives);
  w.u64(c.kernel_kinds.size());
  for (auto k : c.kernel_kinds) w.u8(static_cast<std::uint8_t>(k));
  w.boolean(c.clustering);
  w.i32(c.clusters);
  w.i32(c.cluster_patch_side);
  w.boolean(c.window_pooling);
  w.i32(c.pool_radius);
  w.boolean(c.superpixel_pooling);
  w.i32(c.superpixels.region_size);
  w.f64(c.superpixels.compactness);
  w.i32(c.superpixels.iterations);
  w.i32(c.superpixels.erosion);
  w.i32(c.superpixels.dilation);
  w.u64(c.seed);
}

void put(BinaryWriter& w, const Kernel& k) {
  w.i32(k.id);
  w.i32(k.side);
  w.f64s(k.weights);
  w.f64(k.bias);
  w.str(k.channel);
  w.f64(k.scale);
}

void put(BinaryWriter& w, const RegressionTree& t) {
  w.i32(t.max_depth);
  w.u64(t.nodes.size());
  for (const auto& n : t.nodes) {
    w.boolean(n.leaf);
    w.f64(n.value);
    if (n.leaf) continue;
    w.str(n.test.channel);
    w.i32(n.test.kernel_id);
    w.u8(static_cast<std::uint8_t>(n.test.part));
    put(w, n.test.pool);
    w.f64(n.test.threshold);
    w.i32(n.left);
    w.i32(n.right);
  }
}

void put(BinaryWriter& w, const BoostModel& m) {
  w.f64(m.base_score);
  w.f64(m.shrinkage);
  w.str(m.loss);
  put(w, m.config);
  w.u64(m.kernels.size());
  for (const auto& k : m.kernels) put(w, k);
  w.u64(m.trees.size());
  for (const auto& t : m.trees) put(w, t);
}

void put(BinaryWriter& w, const SnowflakeSpec& s) {
  put(w, s.half_sides);
  w.boolean(s.include_center);
}

void put(BinaryWriter& w, const ForestConfig& c) {
  w.i32(c.n_trees);
  w.i32(c.min_leaf);
  w.i32(c.max_depth);
  w.i32(c.m_try);
  w.boolean(c.bootstrap);
  w.u64(c.max_per_class);
  w.u64(c.seed);
}

void put(BinaryWriter& w, const ForestModel& f) {
  w.u64(f.dim);
  w.u64(f.classes.size());
  for (auto c : f.classes) w.i32(c);
  put(w, f.config);
  w.u64(f.trees.size());
  for (const auto& t : f.trees) {
    w.u64(t.nodes.size());
    for (const auto& n : t.nodes) {
      w.i32(n.feature);
      if (n.feature < 0) {
        w.f64s(n.distribution);
      } else {
        w.f64(n.threshold);
        w.i32(n.left);
        w.i32(n.right);
      }
    }
  }
}

void put(BinaryWriter& w, const StackRecipe& r) {
  w.str(r.image_channel);
  w.u64(r.features.generators.size());
  for (const auto& g : r.features.generators) {
    w.u8(static_cast<std::uint8_t>(g.kind));
    w.f64(g.sigma);
  }
  put(w, r.externals);
}

void put(BinaryWriter& w, const ContextModel& m) {
  w.u8(static_cast<std::uint8_t>(m.architecture));
  w.f64(m.split.epsilon);
  w.i32(m.split.max_levels);
  w.f64(m.split.min_misclassified_fraction);
  w.u64(m.split.min_samples);
  w.u64(m.split.min_class_samples);
  w.boolean(m.split.normalize);
  put(w, m.recipe);
  put(w, m.base_channels);
  put(w, m.fusion_channels);
  w.u64(m.classes.size());
  for (auto c : m.classes) w.i32(c);
  w.u64(m.tasks.size());
  for (const auto& t : m.tasks) {
    w.i32(t.target);
    w.u64(t.nodes.size());
    for (const auto& n : t.nodes) {
      w.str(n.name);
      w.str(n.map);
      w.i32(n.level);
      w.i32(n.parent);
      put(w, n.inputs);
      w.boolean(n.copied);
      put(w, n.model);
    }
  }
  put(w, m.fusion.snowflake);
  put(w, m.fusion.forest);
  w.i32(m.fusion.fake3d);
  put(w, m.forest);
}

void put(BinaryWriter& w, const ZcutModel& m) {
  w.u64(m.planes.size());
  for (auto p : m.planes) w.u8(static_cast<std::uint8_t>(p));
  w.u64(m.models.size());
  for (const auto& c : m.models) put(w, c);
  put(w, m.snowflake);
  put(w, m.forest);
}

// --- readers ----------------------------------------------------------------

std::vector<std::string> get_strings(BinaryReader& r) {
  std::vector<std::string> v(r.count(4));
  for (auto& s : v) s = r.str();
  return v;
}

std::vector<int> get_ints(BinaryReader& r) {
  std::vector<int> v(r.count(4));
  for (auto& x : v) x = r.i32();
  return v;
}

PoolSpec get_pool(BinaryReader& r) {
  PoolSpec p;
  p.kind = checked_enum<PoolKind>(r.u8(), 3, "pool kind");
  p.radius = r.i32();
  p.op = checked_enum<RegionOp>(r.u8(), 1, "region op");
  p.variant = checked_enum<RegionVariant>(r.u8(), 2, "region variant");
  p.combiner = checked_enum<Combiner>(r.u8(), 2, "combiner");
  return p;
}

TrainConfig get_train_config(BinaryReader& r) {
  TrainConfig c;
  c.rounds = r.i32();
  c.depth = r.i32();
  c.shrinkage = r.f64();
  c.thresholds = r.i32();
  c.leaf_cap = r.f64();
  c.n_pos = r.u64();
  c.n_neg = r.u64();
  c.sample_margin = r.i32();
  c.bank.bank_size = r.i32();
  c.bank.filter_sizes = get_ints(r);
  c.bank.lambda = r.f64();
  c.bank.lambda_mode = checked_enum<LambdaMode>(r.u8(), 1, "lambda mode");
  c.bank.channels = get_strings(r);
  c.bank.scales = r.f64s();
  c.bank.max_negatives = r.u64();
  c.kernel_kinds.resize(r.count(1));
  for (auto& k : c.kernel_kinds) k = checked_enum<ChannelKind>(r.u8(), 3, "channel kind");
  c.clustering = r.boolean();
  c.clusters = r.i32();
  c.cluster_patch_side = r.i32();
  c.window_pooling = r.boolean();
  c.pool_radius = r.i32();
  c.superpixel_pooling = r.boolean();
  c.superpixels.region_size = r.i32();
  c.superpixels.compactness = r.f64();
  c.superpixels.iterations = r.i32();
  c.superpixels.erosion = r.i32();
  c.superpixels.dilation = r.i32();
  c.seed = r.u64();
  return c;
}

Kernel get_kernel(BinaryReader& r) {
  Kernel k;
  k.id = r.i32();
  k.side = r.i32();
  k.weights = r.f64s();
  k.bias = r.f64();
  k.channel = r.str();
  k.scale = r.f64();
  if (k.side < 1 || k.weights.size() != static_cast<std::size_t>(k.side) * k.side)
    throw Error("corrupt model: kernel " + std::to_string(k.id) + " has inconsistent size");
  return k;
}

RegressionTree get_tree(BinaryReader& r) {
  RegressionTree t;
  t.max_depth = r.i32();
  t.nodes.resize(r.count(9));
  for (auto& n : t.nodes) {
    n.leaf = r.boolean();
    n.value = r.f64();
    if (n.leaf) continue;
    n.test.channel = r.str();
    n.test.kernel_id = r.i32();
    n.test.part = checked_enum<ResponsePart>(r.u8(), 2, "response part");
    n.test.pool = get_pool(r);
    n.test.threshold = r.f64();
    n.left = r.i32();
    n.right = r.i32();
  }
  const int size = static_cast<int>(t.nodes.size());
  if (size == 0) throw Error("corrupt model: empty regression tree");
  for (int i = 0; i < size; ++i) {
    const auto& n = t.nodes[i];
    if (!n.leaf && (n.left <= i || n.right <= i || n.left >= size || n.right >= size))
      throw Error("corrupt model: regression tree child index out of range");
  }
  return t;
}

BoostModel get_boost(BinaryReader& r) {
  BoostModel m;
  m.base_score = r.f64();
  m.shrinkage = r.f64();
  m.loss = r.str();
  if (m.loss != "binomial-deviance") throw Error("unsupported loss '" + m.loss + "'");
  m.config = get_train_config(r);
  m.kernels.resize(r.count(8));
  for (auto& k : m.kernels) k = get_kernel(r);
  m.trees.resize(r.count(13));
  for (auto& t : m.trees) t = get_tree(r);
  for (const auto& t : m.trees)
    for (const auto& n : t.nodes)
      if (!n.leaf) m.kernel(n.test.kernel_id);  // throws for unknown ids
  return m;
}

SnowflakeSpec get_snowflake(BinaryReader& r) {
  SnowflakeSpec s;
  s.half_sides = get_ints(r);
  s.include_center = r.boolean();
  s.validate();
  return s;
}

ForestConfig get_forest_config(BinaryReader& r) {
  ForestConfig c;
  c.n_trees = r.i32();
  c.min_leaf = r.i32();
  c.max_depth = r.i32();
  c.m_try = r.i32();
  c.bootstrap = r.boolean();
  c.max_per_class = r.u64();
  c.seed = r.u64();
  return c;
}

ForestModel get_forest(BinaryReader& r) {
  ForestModel f;
  f.dim = r.u64();
  f.classes.resize(r.count(4));
  for (auto& c : f.classes) c = r.i32();
  f.config = get_forest_config(r);
  f.trees.resize(r.count(8));
  for (auto& t : f.trees) {
    t.nodes.resize(r.count(4));
    for (auto& n : t.nodes) {
      n.feature = r.i32();
      if (n.feature < 0) {
        n.distribution = r.f64s();
        if (n.distribution.size() != f.classes.size()) throw Error("corrupt model: forest leaf size mismatch");
      } else {
        if (static_cast<std::size_t>(n.feature) >= f.dim) throw Error("corrupt model: forest feature out of range");
        n.threshold = r.f64();
        n.left = r.i32();
        n.right = r.i32();
      }
    }
    const int size = static_cast<int>(t.nodes.size());
    if (size == 0) throw Error("corrupt model: empty forest tree");
    for (int i = 0; i < size; ++i) {
      const auto& n = t.nodes[i];
      if (n.feature >= 0 && (n.left <= i || n.right <= i || n.left >= size || n.right >= size))
        throw Error("corrupt model: forest child index out of range");
    }
  }
  return f;
}

StackRecipe get_recipe(BinaryReader& r) {
  StackRecipe s;
  s.image_channel = r.str();
  s.features.generators.resize(r.count(9));
  for (auto& g : s.features.generators) {
    g.kind = checked_enum<FeatureKind>(r.u8(), 4, "feature kind");
    g.sigma = r.f64();
  }
  s.externals = get_strings(r);
  return s;
}

ContextModel get_context(BinaryReader& r) {
  ContextModel m;
  m.architecture = checked_enum<Architecture>(r.u8(), 2, "architecture");
  m.split.epsilon = r.f64();
  m.split.max_levels = r.i32();
  m.split.min_misclassified_fraction = r.f64();
  m.split.min_samples = r.u64();
  m.split.min_class_samples = r.u64();
  m.split.normalize = r.boolean();
  m.recipe = get_recipe(r);
  m.base_channels = get_strings(r);
  m.fusion_channels = get_strings(r);
  m.classes.resize(r.count(4));
  for (auto& c : m.classes) c = r.i32();
  m.tasks.resize(r.count(12));
  for (auto& t : m.tasks) {
    t.target = r.i32();
    t.nodes.resize(r.count(8));
    for (auto& n : t.nodes) {
      n.name = r.str();
      n.map = r.str();
      n.level = r.i32();
      n.parent = r.i32();
      n.inputs = get_strings(r);
      n.copied = r.boolean();
      n.model = get_boost(r);
    }
  }
  m.fusion.snowflake = get_snowflake(r);
  m.fusion.forest = get_forest_config(r);
  m.fusion.fake3d = r.i32();
  m.forest = get_forest(r);
  return m;
}

ZcutModel get_zcut(BinaryReader& r) {
  ZcutModel m;
  m.planes.resize(r.count(1));
  for (auto& p : m.planes) p = checked_enum<CutPlane>(r.u8(), 2, "cut plane");
  m.models.resize(r.count(8));
  for (auto& c : m.models) c = get_context(r);
  m.snowflake = get_snowflake(r);
  m.forest = get_forest(r);
  return m;
}

}  // namespace

ModelKind model_kind(const PipelineModel& model) {
  return static_cast<ModelKind>(model.index() + 1);
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Boost: return "boost";
    case ModelKind::Context: return "context";
    case ModelKind::Zcut: return "zcut";
  }
  return "?";
}

std::vector<std::uint8_t> encode_model(const PipelineModel& model) {
  BinaryWriter payload;
  std::visit([&](const auto& m) { put(payload, m); }, model);
  BinaryWriter w;
  w.bytes(kMagic, 4);
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>(model_kind(model)));
  w.u64(payload.buffer().size());
  w.bytes(payload.buffer().data(), payload.buffer().size());
  w.u64(fnv1a(payload.buffer()));
  return w.take();
}

PipelineModel decode_model(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw Error("not a model file (bad magic)");
  const auto version = r.u32();
  if (version != kModelVersion)
    throw Error("model format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kModelVersion) + ")");
  const auto kind = r.u8();
  const auto size = r.u64();
  if (size > r.remaining()) throw Error("truncated model: payload is " + std::to_string(size) + " bytes");
  const auto payload = bytes.subspan(r.position(), static_cast<std::size_t>(size));
  r.skip(payload.size());
  BinaryReader body(payload);
  const auto checksum = r.u64();
  if (!r.at_end()) throw Error("corrupt model: trailing bytes after checksum");
  if (checksum != fnv1a(payload)) throw Error("corrupt model: checksum mismatch");

  PipelineModel out;
  switch (kind) {
    case static_cast<std::uint8_t>(ModelKind::Boost): out = get_boost(body); break;
    case static_cast<std::uint8_t>(ModelKind::Context): out = get_context(body); break;
    case static_cast<std::uint8_t>(ModelKind::Zcut): out = get_zcut(body); break;
    default: throw Error("corrupt model: unknown payload kind " + std::to_string(kind));
  }
  if (!body.at_end()) throw Error("corrupt model: payload has trailing bytes");
  return out;
}

void save_model(const std::filesystem::path& path, const PipelineModel& model) {
  write_file_bytes(path, encode_model(model));
}

PipelineModel load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

}  // namespace knotseg
