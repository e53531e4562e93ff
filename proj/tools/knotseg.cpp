#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "knotseg/config.hpp"
#include "knotseg/dataset.hpp"
#include "knotseg/evaluation.hpp"
#include "knotseg/image_io.hpp"
#include "knotseg/model_io.hpp"
#include "knotseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace knotseg;

namespace {

struct ConfigFlags {
  std::string config;
  std::string architecture;
  std::string superpixels;
  std::string snowflake;
  std::optional<int> fake3d;
  std::optional<int> rounds;
  std::optional<std::uint64_t> seed;
  bool no_normalize = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("-c,--config", f.config, "TOML configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-a,--architecture", f.architecture, "autocontext | expanded | knotted | none");
  cmd->add_option("--superpixels", f.superpixels, "enable superpixel pooling with region size and compactness S,m");
  cmd->add_option("--snowflake", f.snowflake, "fusion descriptor half-sides h1,h2,...");
  cmd->add_option("--fake3d", f.fake3d, "fusion slice offset D (volumes)");
  cmd->add_option("--rounds", f.rounds, "boosting rounds per classifier");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_flag("--no-normalize", f.no_normalize, "feed raw scores to later classifiers");
}

AppConfig resolve_config(const ConfigFlags& f) {
  AppConfig cfg = f.config.empty() ? AppConfig{} : load_config(f.config);
  if (!f.architecture.empty()) {
    if (f.architecture != "none") cfg.context.architecture = architecture_from_string(f.architecture);
    cfg.architecture = f.architecture;
  }
  if (!f.superpixels.empty()) apply_superpixel_flag(cfg, f.superpixels);
  if (!f.snowflake.empty()) apply_snowflake_flag(cfg, f.snowflake);
  if (f.fake3d) cfg.context.fusion.fake3d = *f.fake3d;
  if (f.rounds) cfg.context.boost.rounds = *f.rounds;
  if (f.seed) cfg.context.boost.seed = *f.seed;
  if (f.no_normalize) cfg.context.split.normalize = false;
  return cfg;
}

ChannelStack stack_for(const DatasetItem& item, const StackRecipe& recipe) {
  return make_base_stack(item.image, recipe, item.externals_in(recipe.externals));
}

Volume volume_of(const std::vector<DatasetItem>& items) {
  Volume v;
  for (const auto& it : items) v.slices.push_back(it.image);
  v.validate();
  return v;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags flags;
  std::string manifest;
  std::string out;
  std::string log;
  bool zcut = false;
};

int run_train(const TrainArgs& a) {
  AppConfig cfg = resolve_config(a.flags);
  const auto manifest = load_manifest(a.manifest);
  validate_manifest(manifest);
  if (manifest.train.empty()) throw Error("manifest lists no training items");
  const auto items = load_split(manifest, Split::Train);
  if (!manifest.binary()) cfg.context.classes = manifest.class_labels();

  PipelineModel model;
  std::string log_csv;
  if (a.zcut) {
    if (!manifest.volume) throw Error("--zcut needs a volume manifest");
    if (!manifest.binary()) throw Error("--zcut supports binary tasks only");
    std::vector<LabelMap> labels;
    for (const auto& it : items) labels.push_back(it.labels);
    const std::vector<CutPlane> planes{CutPlane::XY, CutPlane::XZ, CutPlane::YZ};
    model = train_zcut(volume_of(items), labels, planes, cfg.recipe, cfg.context);
  } else if (cfg.architecture == "none") {
    if (!manifest.binary()) throw Error("a single boosted classifier needs binary labels");
    if (!cfg.recipe.features.generators.empty() || !cfg.recipe.externals.empty())
      throw Error("a single boosted classifier reads the image channel only; use a context architecture for "
                  "feature or external channels");
    std::vector<ChannelStack> stacks;
    for (const auto& it : items) stacks.push_back(stack_for(it, cfg.recipe));
    std::vector<BoostInput> inputs(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      inputs[i].stack = &stacks[i];
      inputs[i].labels = &items[i].labels;
      inputs[i].mask = items[i].mask ? &*items[i].mask : nullptr;
    }
    auto result = train_kernelboost(inputs, cfg.context.boost);
    std::ostringstream os;
    os << "round,loss_before,loss_after,kernels,tree_nodes\n";
    for (const auto& r : result.rounds)
      os << r.round << ',' << r.loss_before << ',' << r.loss_after << ',' << r.kernels << ',' << r.tree_nodes << '\n';
    log_csv = os.str();
    for (const auto& n : result.notes) std::cerr << "note: " << n << '\n';
    model = std::move(result.model);
  } else {
    std::vector<ContextImage> data;
    for (const auto& it : items) data.push_back({stack_for(it, cfg.recipe), it.labels, it.mask});
    auto result = train_context(data, cfg.recipe, cfg.context);
    log_csv = training_log_csv(result);
    for (const auto& n : result.notes) std::cerr << "note: " << n << '\n';
    for (const auto& l : result.levels)
      std::cerr << "task " << (l.task.empty() ? "binary" : l.task) << " level " << l.level << ": misclassified " << l.misclassified << " of "
                << l.eligible << '\n';
    model = std::move(result.model);
  }
  save_model(a.out, model);
  if (!a.log.empty()) {
    std::ofstream log(a.log);
    if (!log) throw Error("cannot write " + a.log);
    log << log_csv;
  }
  std::cerr << "saved " << to_string(model_kind(model)) << " model to " << a.out << '\n';
  return 0;
}

// --- predict / evaluate ---------------------------------------------------------

struct Prediction {
  std::string name;
  ImagePlane score;  // [-1, 1]
  LabelMap labels;
};

std::vector<Prediction> predict_items(const PipelineModel& model, const DatasetManifest& manifest,
                                      const std::vector<DatasetItem>& items) {
  std::vector<Prediction> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) out[i].name = items[i].name;

  if (const auto* boost = std::get_if<BoostModel>(&model)) {
    const StackRecipe recipe;
    for (const auto& name : boost->required_channels())
      if (name != recipe.image_channel) throw Error("boost model needs unknown channel '" + name + "'");
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto stack = make_base_stack(items[i].image, recipe);
      out[i].score = normalize_scores(predict_scores(*boost, stack)).plane;
      out[i].labels = threshold_labels(out[i].score, 0.0);
    }
  } else if (const auto* ctx = std::get_if<ContextModel>(&model)) {
    std::vector<ChannelStack> stacks;
    for (const auto& it : items) stacks.push_back(stack_for(it, ctx->recipe));
    std::vector<ContextPrediction> preds;
    if (manifest.volume) {
      preds = predict_context_volume(*ctx, stacks);
    } else {
      for (const auto& s : stacks) preds.push_back(predict_context(*ctx, s));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i].score = std::move(preds[i].final.plane);
      out[i].labels = std::move(preds[i].labels);
    }
  } else {
    const auto& z = std::get<ZcutModel>(model);
    if (!manifest.volume) throw Error("z-cut models need a volume manifest");
    auto preds = predict_zcut(z, volume_of(items));
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i].score = std::move(preds[i].final.plane);
      out[i].labels = std::move(preds[i].labels);
    }
  }
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + s + "'");
}

struct PredictArgs {
  std::string model;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

int run_predict(const PredictArgs& a) {
  const auto model = load_model(a.model);
  const auto manifest = load_manifest(a.manifest);
  validate_manifest(manifest);
  const auto items = load_split(manifest, parse_split(a.split));
  const auto preds = predict_items(model, manifest, items);
  fs::create_directories(a.out);
  for (const auto& p : preds) {
    const fs::path base = fs::path(a.out) / p.name;
    write_float_plane(base.string() + "_score.kseg", p.score);
    write_visualization_png(base.string() + "_score.png", p.score, -1.0, 1.0);
    write_labels_png(base.string() + "_labels.png", p.labels, manifest.binary());
  }
  std::cerr << "wrote " << preds.size() << " predictions to " << a.out << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string model;
  std::string manifest;
  std::string config;
  std::string split = "test";
  std::string metric;
  std::string mode;
  std::optional<double> threshold;
  std::string csv;
};

int run_evaluate(const EvaluateArgs& a) {
  EvalConfig eval = a.config.empty() ? EvalConfig{} : load_config(a.config).eval;
  if (!a.metric.empty()) eval.metric = threshold_metric_from_string(a.metric);
  if (!a.mode.empty()) eval.mode = threshold_mode_from_string(a.mode);
  if (a.threshold) {
    eval.mode = ThresholdMode::Fixed;
    eval.fixed_threshold = *a.threshold;
  }

  const auto model = load_model(a.model);
  const auto manifest = load_manifest(a.manifest);
  validate_manifest(manifest);
  const auto items = load_split(manifest, parse_split(a.split));
  if (items.empty()) throw Error("split '" + a.split + "' lists no items");
  const auto preds = predict_items(model, manifest, items);

  std::vector<EvalItem> eval_items(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    eval_items[i] = {items[i].name, &preds[i].score, &preds[i].labels, &items[i].labels,
                     items[i].mask ? &*items[i].mask : nullptr};
  }
  auto reports = evaluate_items(eval_items, manifest.binary(), eval);
  if (reports.size() > 1) reports.push_back(mean_report(reports));
  std::cout << metrics_table(reports);
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    if (!csv) throw Error("cannot write " + a.csv);
    csv << metrics_csv_header();
    for (const auto& r : reports) csv << metrics_csv_row(r);
  }
  return 0;
}

// --- gen-synthetic ----------------------------------------------------------

struct SynthArgs {
  std::string kind = "texture-mosaic";
  int size = 256;
  int depth = 24;
  double noise = 0.08;
  std::uint64_t seed = 0;
  int train = 1;
  int test = 1;
  std::string out;
};

std::string item_toml(const std::string& split, const std::string& image, const std::string& labels) {
  return "[[" + split + "]]\nimage = \"" + image + "\"\nlabels = \"" + labels + "\"\n\n";
}

int run_gen_synthetic(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.kind = synthetic_kind_from_string(a.kind);
  spec.size = a.size;
  spec.depth = a.depth;
  spec.noise = a.noise;
  fs::create_directories(a.out);

  std::ostringstream manifest;
  manifest << "classes = [\"background\", \"foreground\"]\n";
  if (spec.kind == SyntheticKind::AnisotropicVolume) manifest << "volume = true\nslice_order = \"listed\"\n";
  manifest << '\n';

  auto emit = [&](const std::string& split, int count, std::uint64_t base_seed) {
    for (int i = 0; i < count; ++i) {
      spec.seed = base_seed + static_cast<std::uint64_t>(i);
      char stem[64];
      if (spec.kind == SyntheticKind::AnisotropicVolume) {
        if (i > 0) throw Error("volume manifests hold one volume per split");
        const auto v = anisotropic_volume(spec);
        for (int z = 0; z < v.image.depth(); ++z) {
          std::snprintf(stem, sizeof stem, "%s_z%03d", split.c_str(), z);
          write_image_png16(fs::path(a.out) / (std::string(stem) + ".png"), v.image.slices[z]);
          write_labels_png(fs::path(a.out) / (std::string(stem) + "_gt.png"), v.labels[z], true);
          manifest << item_toml(split, std::string(stem) + ".png", std::string(stem) + "_gt.png");
        }
      } else {
        const auto s = spec.kind == SyntheticKind::TextureMosaic ? texture_mosaic(spec) : blob_world(spec);
        std::snprintf(stem, sizeof stem, "%s_%03d", split.c_str(), i);
        write_image_png16(fs::path(a.out) / (std::string(stem) + ".png"), s.image);
        write_labels_png(fs::path(a.out) / (std::string(stem) + "_gt.png"), s.labels, true);
        manifest << item_toml(split, std::string(stem) + ".png", std::string(stem) + "_gt.png");
      }
    }
  };
  const bool volume = spec.kind == SyntheticKind::AnisotropicVolume;
  emit("train", volume ? std::min(a.train, 1) : a.train, a.seed);
  emit("test", volume ? std::min(a.test, 1) : a.test, a.seed + 1000);

  std::ofstream out(fs::path(a.out) / "manifest.toml");
  if (!out) throw Error("cannot write manifest in " + a.out);
  out << manifest.str();
  std::cerr << "wrote " << a.kind << " dataset to " << a.out << '\n';
  return 0;
}

// --- dump-kernels -----------------------------------------------------------

struct NamedBoost {
  std::string name;
  const BoostModel* model;
};

std::vector<NamedBoost> boost_models(const PipelineModel& model) {
  std::vector<NamedBoost> out;
  auto add_context = [&](const ContextModel& c, const std::string& prefix) {
    for (std::size_t t = 0; t < c.tasks.size(); ++t)
      for (const auto& n : c.tasks[t].nodes)
        if (!n.copied) out.push_back({prefix + "t" + std::to_string(t) + "_" + n.name, &n.model});
  };
  if (const auto* b = std::get_if<BoostModel>(&model)) {
    out.push_back({"boost", b});
  } else if (const auto* c = std::get_if<ContextModel>(&model)) {
    add_context(*c, "");
  } else {
    const auto& z = std::get<ZcutModel>(model);
    for (std::size_t k = 0; k < z.models.size(); ++k) add_context(z.models[k], std::string(to_string(z.planes[k])) + "_");
  }
  return out;
}

int run_dump_kernels(const std::string& model_path, const std::string& out_dir) {
  const auto model = load_model(model_path);
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "kernels.csv");
  if (!csv) throw Error("cannot write kernels.csv in " + out_dir);
  csv.precision(17);
  csv << "classifier,id,side,channel,scale,bias,weights\n";
  std::size_t count = 0;
  for (const auto& [name, boost] : boost_models(model)) {
    for (const auto& k : boost->kernels) {
      csv << name << ',' << k.id << ',' << k.side << ',' << k.channel << ',' << k.scale << ',' << k.bias << ',';
      for (std::size_t i = 0; i < k.weights.size(); ++i) csv << (i ? ";" : "") << k.weights[i];
      csv << '\n';
      ImagePlane plane(k.side, k.side, k.weights);
      const auto [lo, hi] = std::minmax_element(k.weights.begin(), k.weights.end());
      const double l = *lo, h = *hi > *lo ? *hi : *lo + 1.0;
      write_visualization_png(fs::path(out_dir) / (name + "_k" + std::to_string(k.id) + ".png"), plane, l, h);
      ++count;
    }
  }
  std::cerr << "wrote " << count << " kernels to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knotseg: boosted pixel classifiers with learned kernels and context trees"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset manifest");
  add_config_flags(train_cmd, train.flags);
  train_cmd->add_option("-m,--manifest", train.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--out", train.out, "model file to write")->required();
  train_cmd->add_option("--log", train.log, "training diagnostics CSV");
  train_cmd->add_flag("--zcut", train.zcut, "train one pipeline per cutting plane (volume manifests)");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "write score maps and labels for a split");
  predict_cmd->add_option("--model", predict.model, "model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("-m,--manifest", predict.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--split", predict.split, "train | test");
  predict_cmd->add_option("-o,--out", predict.out, "output directory")->required();

  EvaluateArgs evaluate;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a model against ground truth");
  eval_cmd->add_option("--model", evaluate.model, "model file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-m,--manifest", evaluate.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-c,--config", evaluate.config, "configuration with an [evaluation] table")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", evaluate.split, "train | test");
  eval_cmd->add_option("--threshold-metric", evaluate.metric, "accuracy | voc");
  eval_cmd->add_option("--threshold-mode", evaluate.mode, "per-image | global | fixed");
  eval_cmd->add_option("--threshold", evaluate.threshold, "fixed cut on the final score");
  eval_cmd->add_option("--csv", evaluate.csv, "metrics CSV output");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("gen-synthetic", "generate a procedural dataset and manifest");
  synth_cmd->add_option("-k,--kind", synth.kind, "texture-mosaic | blob-world | anisotropic-volume");
  synth_cmd->add_option("--size", synth.size, "image side in pixels")->check(CLI::Range(16, 8192));
  synth_cmd->add_option("--depth", synth.depth, "volume slices")->check(CLI::Range(1, 4096));
  synth_cmd->add_option("--noise", synth.noise, "Gaussian noise sigma")->check(CLI::Range(0.0, 10.0));
  synth_cmd->add_option("--seed", synth.seed, "first training seed; test items start at seed + 1000");
  synth_cmd->add_option("--train", synth.train, "training images")->check(CLI::Range(0, 10000));
  synth_cmd->add_option("--test", synth.test, "test images")->check(CLI::Range(0, 10000));
  synth_cmd->add_option("-o,--out", synth.out, "output directory")->required();

  std::string dump_model, dump_out;
  auto* dump_cmd = app.add_subcommand("dump-kernels", "export learned kernels as CSV and PNG");
  dump_cmd->add_option("--model", dump_model, "model file")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("-o,--out", dump_out, "output directory")->required();

  auto* defaults_cmd = app.add_subcommand("defaults", "print every default setting as TOML");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train);
    if (*predict_cmd) return run_predict(predict);
    if (*eval_cmd) return run_evaluate(evaluate);
    if (*synth_cmd) return run_gen_synthetic(synth);
    if (*dump_cmd) return run_dump_kernels(dump_model, dump_out);
    if (*defaults_cmd) {
      std::cout << defaults_toml();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
