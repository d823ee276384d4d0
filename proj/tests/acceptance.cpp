// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cmwnet/data.hpp"
#include "cmwnet/loss.hpp"
#include "cmwnet/metrics.hpp"
#include "cmwnet/network.hpp"
#include "cmwnet/trainer.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

using namespace cmwnet;
namespace fs = std::filesystem;
using Shape = std::vector<std::size_t>;

namespace {

// Tolerances and budgets.
constexpr double kShapeBudgetSec = 60;
constexpr std::size_t kIdentityTensors = 100;
constexpr std::size_t kGradSamples = 324;
constexpr double kGradStep = 3e-4;
constexpr double kGradFloor = 1e-6;
constexpr double kGradTol = 1e-5;
constexpr double kGradBudgetSec = 600;
constexpr std::size_t kOverfitItems = 8;
constexpr std::size_t kOverfitRes = 64;
constexpr std::size_t kOverfitUpdates = 300;
constexpr double kOverfitLossRatio = 0.10;
constexpr double kOverfitMae = 0.1;
constexpr double kOverfitBudgetSec = 1800;
constexpr std::size_t kSweepMaps = 1000;
constexpr double kMaxETol = 1e-12;
constexpr std::size_t kDenseMaps = 100;
constexpr double kDenseTol = 1e-9;
constexpr double kPerfectTol = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Outcome fail(std::string why) { return {false, std::move(why)}; }

// ---- shapes ----

Outcome shape_suite() {
  const auto t0 = Clock::now();
  const NetworkConfig c;
  const AblationSpec a;
  const auto params = init_parameters<float>(c, a);
  Graph<float> g(false);
  Binding<float> b(g, params, c, a);
  Var rgb = g.constant(testutil::random_tensor<float>({3, 288, 288}, 1, 0, 1));
  Var depth = g.constant(testutil::random_tensor<float>({1, 288, 288}, 2, 0, 1));
  const ForwardPass p = forward(b, rgb, depth);
  const ShapeTable measured = measured_shapes(g, p, a);
  const ShapeTable expected = expected_shapes(c, a);
  if (measured.entries() != expected.entries()) return fail("measured shapes differ from the table");

  const std::vector<std::pair<std::string, Shape>> fixed = {
      {"R-E1", {64, 288, 288}},  {"R-E2", {128, 144, 144}}, {"R-E3", {256, 72, 72}},
      {"R-E4", {512, 36, 36}},   {"R-E5", {512, 18, 18}},   {"f_cmw1", {192, 288, 288}},
      {"f_cmw2", {768, 72, 72}}, {"f_de5", {512, 18, 18}},  {"S1", {288, 288}},
      {"S2", {72, 72}},          {"S3", {18, 18}},          {"S4", {18, 18}}};
  for (const auto& [name, shape] : fixed) {
    if (expected.at(name) != shape) return fail(name + " is " + shape_string(expected.at(name)));
  }
  const double sec = seconds_since(t0);
  if (sec > kShapeBudgetSec) return fail("took " + fmt(sec) + " s");
  return {true, std::to_string(measured.entries().size()) + " tensors match, " + fmt(sec) + " s"};
}

// ---- enhance identities ----

Outcome identities() {
  std::mt19937_64 rng(11);
  for (std::size_t k = 0; k < kIdentityTensors; ++k) {
    const Shape shape{4 + rng() % 5, 2 + rng() % 15, 2 + rng() % 15};
    FeatureMap<double> f{testutil::random_tensor<double>(shape, 1000 + k, -3, 3)};
    ResponseMap<double> zero{Tensor<double>(shape)};
    ResponseMap<double> one{Tensor<double>(shape, 1.0)};
    if (!(cmw::enhance(f, zero, zero).data == f.data)) return fail("enhance(F,0,0) != F");
    const auto three = cmw::enhance(f, one, one).data;
    for (std::size_t i = 0; i < three.size(); ++i) {
      if (three[i] != 3.0 * f.data[i]) return fail("enhance(F,1,1) != 3F");
    }
    ResponseMap<double> r1{testutil::random_tensor<double>(shape, 2000 + k, 0, 1)};
    ResponseMap<double> r2{testutil::random_tensor<double>(shape, 3000 + k, 0, 1)};
    const auto agg = cmw::aggregate(f.data, cmw::modulate(f.data, r1.data), cmw::modulate(f.data, r2.data));
    if (!(agg == cmw::enhance(f, r1, r2).data)) return fail("aggregate differs from enhance");
  }
  return {true, std::to_string(kIdentityTensors) + " tensors, bitwise equal"};
}

// ---- gradient check ----

struct Eval {
  double loss;
  std::uint64_t kinks;
};

Eval network_loss(const ParameterStore<double>& params, const NetworkConfig& c, const RGBDTriplet& item,
                  std::map<std::string, Tensor<double>>* grads) {
  const AblationSpec full;
  Graph<double> g(grads != nullptr);
  Binding<double> b(g, params, c, full);
  const ForwardPass p = forward(b, g.constant(item.rgb.cast<double>()), g.constant(item.depth.cast<double>()));
  const auto terms = loss::total_loss(g, p.dec.predictions, loss::scale_ground_truth(item.gt, c), {}, {});
  if (grads) {
    g.backward(terms.total);
    g.for_each_parameter_grad([&](const std::string& n, const Tensor<double>& t) { grads->emplace(n, t); });
  }
  return {g.value(terms.total)[0], g.kink_signature()};
}

std::string group_of(const std::string& name) {
  if (name.find(".fuse.") != std::string::npos || name.rfind("cmw.pair", 0) == 0) return "fusion";
  if (name.rfind("cmw.dw", 0) == 0) return "dw";
  if (name.rfind("cmw.rw", 0) == 0) return "rw";
  if (name.rfind("decoder.", 0) == 0) return "decoder";
  if (name.rfind("head.", 0) == 0) return "head";
  return {};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const NetworkConfig c = NetworkConfig::toy(32);
  auto params = init_parameters<double>(c, {});
  // Zero biases leave exact-zero pre-activations, where any perturbation
  // flips a ReLU; jitter them.
  std::mt19937_64 jitter(13);
  std::uniform_real_distribution<double> small(-0.2, 0.2);
  for (auto& [name, t] : params.tensors()) {
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
      for (auto& v : t.values()) v = small(jitter);
    }
  }
  data::SynthSpec spec;
  spec.count = 1;
  spec.resolution = 32;
  spec.seed = 21;
  const RGBDTriplet item = data::synth_generate(spec)[0];

  std::map<std::string, Tensor<double>> grads;
  network_loss(params, c, item, &grads);
  const Eval base = network_loss(params, c, item, nullptr);
  std::vector<std::string> names;
  for (const auto& k : params.keys()) {
    if (!group_of(k).empty()) names.push_back(k);
  }
  std::mt19937_64 rng(5);
  std::map<std::string, std::size_t> per_group;
  std::size_t checked = 0, attempts = 0, resampled = 0;
  double worst = 0;
  std::string worst_at;
  while (checked < kGradSamples && attempts < 20 * kGradSamples) {
    ++attempts;
    const std::string& name = names[checked % names.size()];
    auto& t = params.at(name);
    const std::size_t i = rng() % t.size();
    const double orig = t[i];
    // Five-point central stencil.
    double f[4];
    bool kinked = false;
    const double offsets[4] = {-2, -1, 1, 2};
    for (int j = 0; j < 4; ++j) {
      t[i] = orig + offsets[j] * kGradStep;
      const Eval e = network_loss(params, c, item, nullptr);
      f[j] = e.loss;
      kinked = kinked || e.kinks != base.kinks;
    }
    t[i] = orig;
    if (kinked) {
      ++resampled;
      continue;
    }
    const double numeric = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * kGradStep);
    const auto it = grads.find(name);
    const double analytic = it == grads.end() ? 0.0 : it->second[i];
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
    if (rel > worst) {
      worst = rel;
      worst_at = name + "[" + std::to_string(i) + "]";
    }
    ++per_group[group_of(name)];
    ++checked;
  }
  const double sec = seconds_since(t0);
  std::ostringstream d;
  d << checked << " entries (";
  for (const auto& [grp, n] : per_group) d << grp << " " << n << ", ";
  d << resampled << " redrawn), max rel " << fmt(worst) << " at " << worst_at << ", " << fmt(sec) << " s";
  if (checked < kGradSamples || per_group.size() != 5) return fail(d.str());
  if (worst >= kGradTol || sec > kGradBudgetSec) return fail(d.str());
  return {true, d.str()};
}

// ---- overfit ----

double dataset_loss(const ParameterStore<float>& p, const NetworkConfig& c, const std::vector<RGBDTriplet>& items) {
  double sum = 0;
  for (const auto& it : items) sum += trainer::sample_gradient<float>(p, c, {}, {}, it).loss.loss;
  return sum / static_cast<double>(items.size());
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const NetworkConfig c = NetworkConfig::toy(kOverfitRes);
  data::SynthSpec spec;
  spec.count = kOverfitItems;
  spec.resolution = kOverfitRes;
  spec.seed = 1;
  const auto items = data::synth_generate(spec);
  trainer::TrainConfig cfg;
  cfg.lr = 0.005;
  cfg.iter_size = kOverfitItems;
  cfg.total_iters = kOverfitUpdates;
  cfg.lr_drop_at = 200;
  cfg.seed = 1;
  const auto init = trainer::initial_state<float>(c, {});
  const double initial = dataset_loss(init.params, c, items);
  const auto r = trainer::train<float>(c, {}, cfg, {}, items, init);
  const double final_loss = dataset_loss(r.state.params, c, items);
  double mae = 0;
  for (const auto& it : items) {
    SaliencyMap g({it.height(), it.width()});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = it.gt[i];
    mae += metrics::mae(predict_saliency(r.state.params, c, {}, it.rgb, it.depth), g);
  }
  mae /= static_cast<double>(items.size());
  const double sec = seconds_since(t0);
  const bool ok = final_loss <= kOverfitLossRatio * initial && mae < kOverfitMae && sec < kOverfitBudgetSec;
  return {ok, "loss " + fmt(initial) + " -> " + fmt(final_loss) + " in " + std::to_string(kOverfitUpdates) +
                  " updates, MAE " + fmt(mae) + ", " + fmt(sec) + " s"};
}

// ---- metrics ----

Outcome metric_oracles() {
  std::mt19937_64 rng(17);
  double worst_e = 0;
  for (std::size_t k = 0; k < kSweepMaps; ++k) {
    const std::size_t h = 1 + rng() % 8, w = h == 1 ? 2 + rng() % 7 : 1 + rng() % 8;
    const auto [s, g] = oracle::random_pair(h, w, rng, true);
    const auto pr = metrics::pr_curve(s, g);
    const auto ref = oracle::pr_sweep(s, g);
    for (int t = 0; t < 256; ++t) {
      if (pr[t].precision != ref[t].p || pr[t].recall != ref[t].r) return fail("PR differs at map " + std::to_string(k));
    }
    if (metrics::max_f(pr) != oracle::max_f(s, g)) return fail("max F differs at map " + std::to_string(k));
    worst_e = std::max(worst_e, std::abs(metrics::max_e(s, g) - oracle::max_e(s, g)));
  }
  if (worst_e > kMaxETol) return fail("max E off by " + fmt(worst_e));

  SaliencyMap zero({2, 2}), one({2, 2}, 1.0), g({2, 2}, {1, 0, 1, 0});
  if (metrics::mae(g, g) != 0 || metrics::mae(zero, one) != 1) return fail("MAE hand cases");
  SaliencyMap p3({2, 2}, {0.7, 0.3, 0.7, 0.3});
  if (std::abs(metrics::mae(p3, g) - 0.3) > 1e-15) return fail("MAE 0.3 case");

  double worst_w = 0, worst_s = 0, worst_perfect = 0;
  for (std::size_t k = 0; k < kDenseMaps; ++k) {
    const auto [s, gt] = oracle::random_pair(16, 16, rng, false);
    worst_w = std::max(worst_w, std::abs(metrics::weighted_f(s, gt) - oracle::weighted_f(s, gt)));
    worst_s = std::max(worst_s, std::abs(metrics::s_measure(s, gt) - oracle::s_measure(s, gt)));
    const auto sc = metrics::evaluate_image(gt, gt);
    for (double v : {sc.s_measure, sc.max_f, sc.weighted_f, sc.max_e}) worst_perfect = std::max(worst_perfect, 1 - v);
    worst_perfect = std::max(worst_perfect, sc.mae);
  }
  if (worst_w > kDenseTol) return fail("weighted F off by " + fmt(worst_w));
  if (worst_s > kDenseTol) return fail("S-measure off by " + fmt(worst_s));
  if (worst_perfect > kPerfectTol) return fail("perfect prediction off by " + fmt(worst_perfect));
  return {true, std::to_string(kSweepMaps) + " sweeps exact (max E within " + fmt(worst_e) + "), wF " +
                    fmt(worst_w) + ", S " + fmt(worst_s) + ", perfect " + fmt(worst_perfect)};
}

// ---- ablation structure ----

// Parameter counts written out from the layer definitions, independent of
// the architecture tables.
std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

struct Counter {
  NetworkConfig c;
  std::size_t ch(int l) const { return c.block_channels[l - 1]; }
  std::size_t res(int l) const { return c.input_resolution >> (l - 1); }
  std::size_t bw(int l) const { return std::max<std::size_t>(4, ch(l) / 2); }

  std::size_t branches(int l, bool global) const {
    std::size_t n = 2 * conv_params(ch(l), bw(l), 3);
    if (global) n += conv_params(ch(l), bw(l), 7) + conv_params(ch(l), bw(l), 3);
    return n;
  }
  std::size_t dw(int l, int target, bool global) const {
    const std::size_t in = bw(l) * (global ? 4 : 2);
    std::size_t fuse;
    if (res(l) == res(target)) {
      fuse = conv_params(in, ch(target), 3);
    } else if (res(l) > res(target)) {
      fuse = conv_params(in, ch(target), 2 * (res(l) / res(target)) - 1);
    } else {
      fuse = conv_params(in, ch(target), res(target) / res(l));
    }
    return branches(l, global) + fuse;
  }
  std::size_t rw(int l, bool global) const {
    return branches(l, global) + conv_params(bw(l) * (global ? 4 : 2), ch(l), 3);
  }
};

long delta(long a, long b) { return a - b; }

Outcome ablation_structure() {
  const NetworkConfig toy = NetworkConfig::toy(16);
  data::SynthSpec spec;
  spec.count = 1;
  spec.resolution = 16;
  const auto items = data::synth_generate(spec);
  trainer::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.iter_size = 1;
  cfg.total_iters = 1;
  cfg.lr_drop_at = 0;
  for (const auto& name : ablation_variant_names()) {
    const AblationSpec a = ablation_from_name(name);
    try {
      const auto init = trainer::initial_state<float>(toy, a);
      if (init.params.parameter_count() != parameter_count(toy, a)) return fail(name + " count mismatch");
      const auto r = trainer::train<float>(toy, a, cfg, {}, items, init);
      if (r.state.iteration != 1 || r.state.params == init.params) return fail(name + " did not update");
    } catch (const std::exception& e) {
      return fail(name + ": " + e.what());
    }
  }

  const Counter k{NetworkConfig{}};
  const int adj[6] = {0, 2, 1, 4, 3, 5};
  const int two[6] = {0, 3, 4, 1, 2, 5};
  long dw_all = 0, rw_all = 0, dw_lm = 0, rw_lm = 0, nogf = 0, rwgf = 0, same = 0, c2s = 0, cat = 0;
  for (int l = 1; l <= 5; ++l) {
    const long d = static_cast<long>(k.dw(l, adj[l], true)), r = static_cast<long>(k.rw(l, false));
    dw_all += d;
    rw_all += r;
    if (l < 5) {
      dw_lm += d;
      rw_lm += r;
    }
    nogf += static_cast<long>(k.dw(l, adj[l], false)) - d;
    rwgf += static_cast<long>(k.rw(l, true)) - r;
    same += static_cast<long>(k.dw(l, l, true)) - d;
    c2s += static_cast<long>(k.dw(l, two[l], true)) - d;
    cat += static_cast<long>(conv_params(2 * k.ch(l), k.ch(l), 1)) - d - r;
  }
  const auto [d5, d34, d12] = k.c.decoder_channels;
  const long heads = static_cast<long>(conv_params(d34, 2, 3) + conv_params(d5, 2, 3) + conv_params(k.ch(5), 2, 3));
  const std::map<std::string, long> expect = {
      {"full", 0},
      {"ReD", 0},
      {"w/o-depth", -dw_all - static_cast<long>(conv_params(1, k.ch(1), 3))},
      {"w/o-CMW-L&M", -dw_lm - rw_lm},
      {"w/o-CMW-H", -(dw_all - dw_lm) - (rw_all - rw_lm)},
      {"w/o-RW", -rw_all},
      {"w/o-Wei", cat},
      {"DW-w/o-GF", nogf},
      {"RW-w/-GF", rwgf},
      {"w/o-CS", same},
      {"C2S", c2s},
      {"w/o-DS", -heads}};
  const long full = static_cast<long>(parameter_count(k.c, {}));
  for (const auto& [name, e] : expect) {
    const long got = delta(static_cast<long>(parameter_count(k.c, ablation_from_name(name))), full);
    if (got != e) return fail(name + " delta " + std::to_string(got) + ", expected " + std::to_string(e));
  }
  if (!(expect.at("w/o-RW") < 0 && expect.at("DW-w/o-GF") < 0 && expect.at("RW-w/-GF") > 0)) {
    return fail("sign relations");
  }
  return {true, std::to_string(ablation_variant_names().size()) +
                    " variants train one update; deltas match (w/o-RW " + std::to_string(expect.at("w/o-RW")) +
                    ", ReD 0)"};
}

// ---- protocol ----

Outcome protocol() {
  const trainer::TrainConfig c;
  const bool cfg_ok = c.lr == 1e-7 && c.batch_size == 1 && c.iter_size == 8 && c.momentum == 0.9 &&
                      c.weight_decay == 1e-4 && c.total_iters == 22500 && c.lr_drop_at == 12500 &&
                      c.lr_drop_factor == 10 && c.lr_at(12500) == 1e-7 && c.lr_at(12501) == 1e-8;
  if (!cfg_ok) return fail("train config defaults");
  if (NetworkConfig{}.input_resolution != 288) return fail("input resolution");
  RGBDTriplet t;
  t.rgb = Tensor<float>({3, 2, 2});
  t.depth = Tensor<float>({1, 2, 2});
  t.gt = Tensor<float>({1, 2, 2});
  const std::vector<RGBDTriplet> items(2050, t);
  const std::size_t n = data::augment_all(items).size();
  if (n != 10250) return fail("augmented size " + std::to_string(n));
  return {true, "defaults match; 2050 -> " + std::to_string(n)};
}

// ---- determinism ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const auto dir = testutil::scratch_dir("acceptance_det");
  const NetworkConfig c = NetworkConfig::toy(16);
  data::SynthSpec spec;
  spec.count = 4;
  spec.resolution = 16;
  spec.seed = 3;
  trainer::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.iter_size = 2;
  cfg.total_iters = 4;
  cfg.lr_drop_at = 2;
  cfg.seed = 8;
  std::vector<std::string> ckpts;
  std::vector<SaliencyMap> maps;
  for (int run = 0; run < 2; ++run) {
    const auto items = data::synth_generate(spec);
    const auto r = trainer::train<double>(c, {}, cfg, {}, items, trainer::initial_state<double>(c, {}));
    const fs::path p = dir / ("run" + std::to_string(run) + ".bin");
    trainer::save_checkpoint(p, r.state, {c, {}, cfg, {}, 0, 8});
    ckpts.push_back(slurp(p));
    const auto loaded = trainer::load_checkpoint<double>(p);
    maps.push_back(predict_saliency(loaded.params, c, {}, items[0].rgb, items[0].depth));
  }
  if (ckpts[0].empty() || ckpts[0] != ckpts[1]) return fail("checkpoints differ");
  if (maps[0].values() != maps[1].values()) return fail("predictions differ");
  return {true, "checkpoints (" + std::to_string(ckpts[0].size()) + " bytes) and predictions identical"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by name.
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"shape-suite", shape_suite},       {"algebraic-identities", identities},
      {"gradient-check", gradient_check}, {"overfit", overfit},
      {"metric-oracles", metric_oracles}, {"ablation-structure", ablation_structure},
      {"protocol-fidelity", protocol},    {"determinism", determinism}};
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
