#include "cmwnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cmwnet/binding.hpp"
#include "cmwnet/data.hpp"
#include "cmwnet/errors.hpp"
#include "cmwnet/image_io.hpp"
#include "cmwnet/kernels/kernels.hpp"
#include "cmwnet/metrics.hpp"
#include "cmwnet/network.hpp"
#include "cmwnet/run_manifest.hpp"
#include "cmwnet/trainer.hpp"

namespace cmwnet::cli {
namespace fs = std::filesystem;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Network/ablation/train/loss settings shared by train, ablate and shapes.
struct Settings {
  std::string config_path;
  std::string ablation = "full";
  bool toy = false;
  std::size_t resolution = 0;
  std::string dtype;
  std::uint64_t seed = 0;
  bool seed_set = false;

  double lr = NAN, momentum = NAN, weight_decay = NAN;
  std::size_t iters = 0, lr_drop_at = 0, iter_size = 0, batch_size = 0;

  NetworkConfig network;
  AblationSpec abl;
  trainer::TrainConfig train;
  loss::LossConfig loss;

  void add_network_flags(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with network/ablation/train/loss sections");
    app->add_option("--ablation", ablation, "ablation variant name (e.g. full, w/o-RW, ReD)");
    app->add_flag("--toy", toy, "desk-scale widths (4,8,8,8,8)");
    app->add_option("--resolution", resolution, "input resolution (multiple of 16)");
    app->add_option("--dtype", dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    app->add_option("--seed", seed, "seed for initialization and data order")
        ->each([this](const std::string&) { seed_set = true; });
  }
  void add_train_flags(CLI::App* app) {
    app->add_option("--lr", lr, "base learning rate");
    app->add_option("--iters", iters, "parameter updates");
    app->add_option("--lr-drop-at", lr_drop_at, "update after which lr is divided by 10");
    app->add_option("--iter-size", iter_size, "accumulated samples per update");
    app->add_option("--batch-size", batch_size, "samples per forward pass group");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--weight-decay", weight_decay, "weight decay on kernels");
  }

  void resolve() {
    json file = json::object();
    if (!config_path.empty()) file = read_json_file(config_path);
    for (const auto& [key, _] : file.items()) {
      if (key != "network" && key != "ablation" && key != "train" && key != "loss") {
        throw ConfigError("unknown config section '" + key + "'");
      }
    }
    if (toy) network = NetworkConfig::toy(resolution ? resolution : 32);
    if (file.contains("network")) {
      json merged = to_json(network);
      for (const auto& [k, v] : file["network"].items()) merged[k] = v;
      network = network_config_from_json(merged);
    }
    if (resolution) network.input_resolution = resolution;
    if (!dtype.empty()) network.dtype = dtype == "f64" ? DType::f64 : DType::f32;
    if (file.contains("ablation")) {
      abl = ablation_from_json(file["ablation"]);
      if (ablation != "full") throw ConfigError("give the ablation either in --config or --ablation");
    } else {
      abl = ablation_from_name(ablation);
    }
    if (file.contains("train")) train = trainer::train_config_from_json(file["train"]);
    if (file.contains("loss")) loss = loss::loss_config_from_json(file["loss"]);
    if (!std::isnan(lr)) train.lr = lr;
    if (!std::isnan(momentum)) train.momentum = momentum;
    if (!std::isnan(weight_decay)) train.weight_decay = weight_decay;
    if (iters) train.total_iters = iters;
    if (lr_drop_at) train.lr_drop_at = lr_drop_at;
    if (iter_size) train.iter_size = iter_size;
    if (batch_size) train.batch_size = batch_size;
    if (seed_set) {
      network.seed = seed;
      train.seed = seed;
    }
    network.validate();
    abl.validate();
    train.validate();
    loss.validate();
  }

  json to_json_all() const {
    return json{{"network", to_json(network)},
                {"ablation", to_json(abl)},
                {"train", trainer::to_json(train)},
                {"loss", loss::to_json(loss)}};
  }
};

std::vector<RGBDTriplet> prepare_training_set(const fs::path& root, bool invert_depth,
                                              bool augment, std::size_t resolution) {
  data::DatasetManifest m = data::scan(root);
  if (invert_depth) m.invert_depth = true;
  std::vector<RGBDTriplet> items;
  for (const auto& t : data::load(m)) items.push_back(data::resize_triplet(t, resolution));
  return augment ? data::augment_all(items) : items;
}

std::vector<std::string> args_of(const std::vector<std::string>& args) { return args; }

// ---- train ----

template <typename T>
std::vector<fs::path> do_train(const Settings& s, const std::vector<RGBDTriplet>& dataset,
                               const fs::path& out_dir, const InitOptions& init,
                               const std::string& resume, std::size_t checkpoint_every,
                               std::ostream& out) {
  trainer::TrainState<T> state;
  if (!resume.empty()) {
    trainer::CheckpointMeta meta;
    state = trainer::load_checkpoint<T>(resume, &meta);
    if (!(meta.network == s.network) || !(meta.ablation == s.abl)) {
      throw ConfigError("checkpoint " + resume + " was trained with a different network or ablation");
    }
  } else {
    state = trainer::initial_state<T>(s.network, s.abl, init);
  }
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "checkpoint.bin";
  const fs::path log_path = out_dir / "loss_log.csv";
  trainer::CheckpointMeta meta{s.network, s.abl, s.train, s.loss, 0, sizeof(T)};
  std::vector<trainer::LossRecord> log;
  trainer::TrainHooks<T> hooks;
  const std::size_t every = std::max<std::size_t>(1, s.train.total_iters / 20);
  hooks.on_update = [&](const trainer::LossRecord& r) {
    log.push_back(r);
    if (r.iter % every == 0 || r.iter == s.train.total_iters) {
      out << "update " << r.iter << "/" << s.train.total_iters << " lr " << r.lr << " loss "
          << r.loss << "\n";
    }
  };
  hooks.checkpoint_every = checkpoint_every;
  hooks.on_checkpoint = [&](const trainer::TrainState<T>& st) {
    trainer::save_checkpoint(ckpt, st, meta);
    write_text(log_path, trainer::loss_log_csv(log));
  };
  auto result = trainer::train<T>(s.network, s.abl, s.train, s.loss, dataset, std::move(state), hooks);
  trainer::save_checkpoint(ckpt, result.state, meta);
  write_text(log_path, trainer::loss_log_csv(log));
  return {ckpt, log_path};
}

int cmd_train(const Settings& s, const std::string& data_dir, const std::string& out_dir,
              bool no_augment, bool invert_depth, const std::string& init_source,
              const std::string& vgg_path, bool random_fallback, const std::string& resume,
              std::size_t checkpoint_every, bool dry_run, RunManifest& manifest, std::ostream& out) {
  json configs = s.to_json_all();
  configs["data"] = {{"root", data_dir}, {"augment", !no_augment}, {"invert_depth", invert_depth}};
  configs["init"] = {{"source", init_source}, {"vgg16_path", vgg_path}, {"random_fallback", random_fallback}};
  manifest.configs = configs;
  manifest.seed = s.train.seed;
  if (dry_run) {
    out << configs.dump(2) << "\n";
    return kExitOk;
  }
  InitOptions init;
  init.source = init_source == "vgg16" ? InitSource::vgg16_file : InitSource::random;
  init.vgg16_path = vgg_path;
  init.random_fallback = random_fallback;
  const auto dataset = prepare_training_set(data_dir, invert_depth, !no_augment, s.network.input_resolution);
  out << "training on " << dataset.size() << " items, " << parameter_count(s.network, s.abl)
      << " parameters, kernels " << kernels::backend_name(kernels::active_backend()) << "\n";
  manifest.artifacts = s.network.dtype == DType::f64
                           ? do_train<double>(s, dataset, out_dir, init, resume, checkpoint_every, out)
                           : do_train<float>(s, dataset, out_dir, init, resume, checkpoint_every, out);
  return kExitOk;
}

// ---- predict ----

Tensor<float> feature_grid(const Tensor<double>& f) {
  const std::size_t c = f.channels(), h = f.height(), w = f.width();
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c))));
  const std::size_t rows = (c + cols - 1) / cols;
  Tensor<float> grid({1, rows * h, cols * w});
  for (std::size_t k = 0; k < c; ++k) {
    const double* p = f.channel(k);
    const auto [lo, hi] = std::minmax_element(p, p + h * w);
    const double range = *hi - *lo;
    const std::size_t oy = (k / cols) * h, ox = (k % cols) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        grid.at(0, oy + y, ox + x) = range > 0 ? static_cast<float>((p[y * w + x] - *lo) / range) : 0.0f;
      }
    }
  }
  return grid;
}

template <typename T>
std::vector<fs::path> do_predict(const fs::path& ckpt, const trainer::CheckpointMeta& meta,
                                 const data::DatasetManifest& m, const fs::path& out_dir,
                                 const std::string& dump_dir) {
  const auto state = trainer::load_checkpoint<T>(ckpt);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  const std::size_t r = meta.network.input_resolution;
  for (const auto& id : m.items) {
    const RGBDTriplet t = data::load_item(m, id);
    const RGBDTriplet small = data::resize_triplet(t, r);
    Graph<T> g(false);
    Binding<T> b(g, state.params, meta.network, meta.ablation);
    Var rgb = g.constant(small.rgb.cast<T>());
    Var depth = meta.ablation.use_depth ? g.constant(small.depth.cast<T>()) : Var{};
    const ForwardPass pass = forward(b, rgb, depth);
    const SaliencyMap s = decoder::to_saliency(g.value(pass.dec.predictions[0]));
    Tensor<float> map({1, r, r});
    for (std::size_t i = 0; i < s.size(); ++i) map[i] = static_cast<float>(s[i]);
    const Tensor<float> full = data::resize_bilinear(map, t.height(), t.width());
    const fs::path path = out_dir / (id + ".png");
    io::write_png(path, io::from_tensor(full));
    written.push_back(path);
    if (!dump_dir.empty()) {
      const fs::path dir = fs::path(dump_dir) / id;
      fs::create_directories(dir);
      for (const auto& [name, v] : pass.cmw.intermediates) {
        if (name.rfind("r_dw", 0) != 0 && name.rfind("r_rw", 0) != 0 && name.rfind("f_de", 0) != 0) {
          continue;
        }
        io::write_png(dir / (name + ".png"), io::from_tensor(feature_grid(g.value(v).template cast<double>())));
      }
    }
  }
  return written;
}

int cmd_predict(const std::string& ckpt, const std::string& input_dir, const std::string& out_dir,
                const std::string& ablation_name, const std::string& config_path, bool invert_depth,
                const std::string& dump_dir, RunManifest& manifest) {
  const trainer::CheckpointMeta meta = trainer::read_checkpoint_meta(ckpt);
  if (!ablation_name.empty() && !(ablation_from_name(ablation_name) == meta.ablation)) {
    throw ConfigError("checkpoint ablation hash " + hex64(config_hash(to_json(meta.ablation))) +
                      " does not match --ablation " + ablation_name);
  }
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    if (j.contains("network")) {
      json merged = to_json(meta.network);
      for (const auto& [k, v] : j["network"].items()) merged[k] = v;
      if (config_hash(merged) != config_hash(to_json(meta.network))) {
        throw ConfigError("network config hash " + hex64(config_hash(merged)) +
                          " does not match the checkpoint's " +
                          hex64(config_hash(to_json(meta.network))));
      }
    }
  }
  data::DatasetManifest m = data::scan(input_dir, false);
  if (invert_depth) m.invert_depth = true;
  manifest.configs = {{"network", to_json(meta.network)},
                      {"ablation", to_json(meta.ablation)},
                      {"checkpoint", ckpt},
                      {"checkpoint_iteration", meta.iteration},
                      {"input", input_dir}};
  manifest.seed = meta.network.seed;
  manifest.artifacts = meta.element_bytes == 8
                           ? do_predict<double>(ckpt, meta, m, out_dir, dump_dir)
                           : do_predict<float>(ckpt, meta, m, out_dir, dump_dir);
  return kExitOk;
}

// ---- evaluate ----

int cmd_evaluate(const std::string& pred, std::string gt, const std::string& report,
                 std::string curves, std::string per_image, bool skip_missing,
                 RunManifest& manifest, std::ostream& out, std::ostream& err) {
  if (fs::is_directory(fs::path(gt) / "GT")) gt = (fs::path(gt) / "GT").string();
  std::vector<std::string> skipped;
  const metrics::MetricReport r = metrics::evaluate_dataset(pred, gt, {skip_missing}, &skipped);
  for (const auto& s : skipped) err << "skipped " << s << "\n";
  const fs::path rp(report);
  if (curves.empty()) curves = (rp.parent_path() / (rp.stem().string() + "_curves.csv")).string();
  if (per_image.empty()) per_image = (rp.parent_path() / (rp.stem().string() + "_per_image.csv")).string();
  write_text(rp, metrics::report_json(r).dump(2) + "\n");
  write_text(curves, metrics::curves_csv(r));
  write_text(per_image, metrics::per_image_csv(r));
  out << metrics::report_json(r).dump(2) << "\n";
  manifest.configs = {{"pred", pred}, {"gt", gt}, {"images", r.images.size()}, {"skip_missing", skip_missing}};
  manifest.artifacts = {rp, curves, per_image};
  return kExitOk;
}

// ---- shapes ----

int cmd_shapes(const Settings& s, bool as_json, std::ostream& out) {
  const ShapeTable t = expected_shapes(s.network, s.abl);
  if (as_json) {
    json j = json::object();
    for (const auto& [name, shape] : t.entries()) j[name] = shape;
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  for (const auto& [name, shape] : t.entries()) out << name << "\t" << shape_string(shape) << "\n";
  out << "parameters\t" << parameter_count(s.network, s.abl) << "\n";
  return kExitOk;
}

// ---- ablate ----

template <typename T>
std::vector<trainer::GridRow> do_ablate(const Settings& s, const std::vector<std::string>& variants,
                                        const std::vector<RGBDTriplet>& dataset,
                                        const std::vector<RGBDTriplet>& eval, std::ostream& out) {
  return trainer::run_ablation_grid<T>(variants, s.network, s.train, s.loss, dataset, eval,
                                       [&](const std::string& v) { out << "variant " << v << "\n"; });
}

int cmd_ablate(const Settings& s, std::vector<std::string> variants, const std::string& data_dir,
               const std::string& eval_dir, const std::string& out_dir, bool no_augment,
               RunManifest& manifest, std::ostream& out) {
  if (variants.empty()) variants = ablation_variant_names();
  for (const auto& v : variants) ablation_from_name(v).validate();
  const auto dataset = prepare_training_set(data_dir, false, !no_augment, s.network.input_resolution);
  std::vector<RGBDTriplet> eval;
  if (!eval_dir.empty()) eval = prepare_training_set(eval_dir, false, false, s.network.input_resolution);
  const auto rows = s.network.dtype == DType::f64 ? do_ablate<double>(s, variants, dataset, eval, out)
                                                  : do_ablate<float>(s, variants, dataset, eval, out);
  const fs::path dir(out_dir);
  write_text(dir / "ablation.md", trainer::grid_table(rows));
  write_text(dir / "ablation.json", trainer::grid_json(rows).dump(2) + "\n");
  out << trainer::grid_table(rows);
  manifest.configs = s.to_json_all();
  manifest.configs["variants"] = variants;
  manifest.seed = s.train.seed;
  manifest.artifacts = {dir / "ablation.md", dir / "ablation.json"};
  return kExitOk;
}

// ---- make-synthetic ----

int cmd_make_synthetic(const data::SynthSpec& spec, const std::string& out_dir,
                       RunManifest& manifest) {
  spec.validate();
  const auto items = data::synth_generate(spec);
  manifest.artifacts = data::write_dataset(out_dir, items);
  manifest.configs = {{"synthetic", data::to_json(spec)}};
  manifest.seed = spec.seed;
  return kExitOk;
}

int exit_code_of(const std::exception& e) {
  if (const auto* c = dynamic_cast<const Error*>(&e)) return c->exit_code();
  return kExitData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CMW RGB-D saliency network: synthesize data, train, predict, evaluate"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunManifest manifest;
  manifest.argv = args_of(args);

  // make-synthetic
  data::SynthSpec synth;
  std::string synth_out;
  auto* make = app.add_subcommand("make-synthetic", "write a synthetic RGB-D dataset");
  make->add_option("--seed", synth.seed);
  make->add_option("--count", synth.count);
  make->add_option("--resolution", synth.resolution);
  make->add_option("--min-shapes", synth.min_shapes);
  make->add_option("--max-shapes", synth.max_shapes);
  make->add_option("--min-contrast", synth.min_contrast);
  make->add_option("--max-contrast", synth.max_contrast);
  make->add_option("--out", synth_out)->required();

  // train
  Settings train_s;
  std::string train_data, train_out, init_source = "random", vgg_path, resume;
  bool no_augment = false, invert_depth = false, random_fallback = false, dry_run = false;
  std::size_t checkpoint_every = 0;
  auto* train = app.add_subcommand("train", "train a network variant");
  train_s.add_network_flags(train);
  train_s.add_train_flags(train);
  train->add_option("--data", train_data, "dataset root")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--no-augment", no_augment, "skip the rotation/mirror augmentation");
  train->add_flag("--invert-depth", invert_depth, "invert depth after normalization");
  train->add_option("--init", init_source, "random or vgg16")->check(CLI::IsMember({"random", "vgg16"}));
  train->add_option("--vgg16", vgg_path, "VGG16 weights container");
  train->add_flag("--random-fallback", random_fallback, "random backbone when the VGG16 file is missing");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--checkpoint-every", checkpoint_every, "also checkpoint every N updates");
  train->add_flag("--dry-run", dry_run, "print the resolved configuration and exit");

  // predict
  std::string ckpt, pred_in, pred_out, pred_ablation, pred_config, dump_dir;
  bool pred_invert = false;
  auto* predict = app.add_subcommand("predict", "write saliency maps for a dataset");
  predict->add_option("--checkpoint", ckpt)->required();
  predict->add_option("--input-dir", pred_in)->required();
  predict->add_option("--out-dir", pred_out)->required();
  predict->add_option("--ablation", pred_ablation, "expected ablation; must match the checkpoint");
  predict->add_option("--config", pred_config, "expected network config; must match the checkpoint");
  predict->add_flag("--invert-depth", pred_invert);
  predict->add_option("--dump-dir", dump_dir, "write r_dw/r_rw/f_de feature grids here");

  // evaluate
  std::string eval_pred, eval_gt, report, curves, per_image;
  bool skip_missing = false;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  evaluate->add_option("--pred", eval_pred)->required();
  evaluate->add_option("--gt", eval_gt)->required();
  evaluate->add_option("--report", report)->required();
  evaluate->add_option("--curves", curves, "PR/F curve CSV (default <report>_curves.csv)");
  evaluate->add_option("--per-image", per_image, "per-image CSV (default <report>_per_image.csv)");
  evaluate->add_flag("--skip-missing", skip_missing);

  // shapes
  Settings shape_s;
  bool as_json = false;
  std::string shape_manifest;
  auto* shapes = app.add_subcommand("shapes", "print the expected tensor shapes");
  shape_s.add_network_flags(shapes);
  shapes->add_flag("--json", as_json);
  shapes->add_option("--manifest", shape_manifest, "also write a run manifest here");

  // ablate
  Settings abl_s;
  std::vector<std::string> variants;
  std::string abl_data, abl_eval, abl_out;
  bool abl_no_augment = false;
  auto* ablate = app.add_subcommand("ablate", "train and score a list of ablation variants");
  abl_s.add_network_flags(ablate);
  abl_s.add_train_flags(ablate);
  ablate->add_option("--variants", variants, "comma-separated variant names (default: all)")->delimiter(',');
  ablate->add_option("--data", abl_data)->required();
  ablate->add_option("--eval-data", abl_eval);
  ablate->add_option("--out", abl_out)->required();
  ablate->add_flag("--no-augment", abl_no_augment);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    manifest.start();
    fs::path manifest_path;
    int code = kExitOk;
    if (make->parsed()) {
      manifest.command = "make-synthetic";
      code = cmd_make_synthetic(synth, synth_out, manifest);
      manifest_path = fs::path(synth_out) / "run_manifest.json";
    } else if (train->parsed()) {
      manifest.command = "train";
      train_s.resolve();
      if (train_out.empty() && !dry_run) throw ConfigError("train needs --out");
      code = cmd_train(train_s, train_data, train_out, no_augment, invert_depth, init_source,
                       vgg_path, random_fallback, resume, checkpoint_every, dry_run, manifest, out);
      if (!dry_run) manifest_path = fs::path(train_out) / "run_manifest.json";
    } else if (predict->parsed()) {
      manifest.command = "predict";
      code = cmd_predict(ckpt, pred_in, pred_out, pred_ablation, pred_config, pred_invert, dump_dir,
                         manifest);
      manifest_path = fs::path(pred_out) / "run_manifest.json";
    } else if (evaluate->parsed()) {
      manifest.command = "evaluate";
      code = cmd_evaluate(eval_pred, eval_gt, report, curves, per_image, skip_missing, manifest, out, err);
      const fs::path rp(report);
      manifest_path = rp.parent_path() / (rp.stem().string() + "_run_manifest.json");
    } else if (shapes->parsed()) {
      manifest.command = "shapes";
      shape_s.resolve();
      code = cmd_shapes(shape_s, as_json, out);
      manifest.configs = shape_s.to_json_all();
      if (!shape_manifest.empty()) manifest_path = shape_manifest;
    } else if (ablate->parsed()) {
      manifest.command = "ablate";
      abl_s.resolve();
      code = cmd_ablate(abl_s, variants, abl_data, abl_eval, abl_out, abl_no_augment, manifest, out);
      manifest_path = fs::path(abl_out) / "run_manifest.json";
    }
    manifest.finish();
    if (!manifest_path.empty()) manifest.write(manifest_path);
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_of(e);
  }
}

}  // namespace cmwnet::cli
