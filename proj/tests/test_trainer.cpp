#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cmwnet/data.hpp"
#include "cmwnet/errors.hpp"
#include "cmwnet/serialize.hpp"
#include "cmwnet/trainer.hpp"
#include "test_util.hpp"

using namespace cmwnet;
using namespace cmwnet::trainer;

namespace {

std::vector<RGBDTriplet> toy_data(std::size_t n, std::size_t res = 16) {
  data::SynthSpec spec;
  spec.count = n;
  spec.resolution = res;
  spec.seed = 9;
  return data::synth_generate(spec);
}

TrainConfig quick(std::size_t iters, std::size_t iter_size = 2) {
  TrainConfig c;
  c.lr = 0.01;
  c.iter_size = iter_size;
  c.total_iters = iters;
  c.lr_drop_at = iters - 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("default protocol values") {
  const TrainConfig c;
  CHECK(c.lr == 1e-7);
  CHECK(c.batch_size == 1);
  CHECK(c.iter_size == 8);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.total_iters == 22500);
  CHECK(c.lr_drop_at == 12500);
  CHECK(c.lr_drop_factor == 10.0);
  CHECK(c.samples_per_update() == 8);
  CHECK(c.lr_at(1) == 1e-7);
  CHECK(c.lr_at(12500) == 1e-7);
  CHECK(c.lr_at(12501) == 1e-8);
  CHECK(c.lr_at(22500) == 1e-8);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr_drop_at = c.total_iters;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.iter_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr = 0;
  CHECK_NOTHROW(c.validate());
  c = quick(7, 3);
  CHECK(train_config_from_json(to_json(c)) == c);
  CHECK_THROWS_AS(train_config_from_json(json{{"epochs", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(json{{"lr", "fast"}}), ConfigError);
}

TEST_CASE("SGD step by hand") {
  TrainState<double> s;
  s.params.insert("a.weight", Tensor<double>({2}, {1.0, -2.0}), "t");
  s.params.insert("a.bias", Tensor<double>({1}, {0.5}), "t");
  std::map<std::string, Tensor<double>> g{{"a.weight", Tensor<double>({2}, {0.2, 0.4})},
                                          {"a.bias", Tensor<double>({1}, {-1.0})}};
  const double lr = 0.1, m = 0.9, wd = 0.01;
  sgd_step(s, g, lr, m, wd);
  // v1 = g + wd*theta (weights only); theta1 = theta - lr*v1
  const double v_w0 = 0.2 + wd * 1.0, v_w1 = 0.4 + wd * -2.0, v_b = -1.0;
  CHECK(s.params.at("a.weight")[0] == doctest::Approx(1.0 - lr * v_w0).epsilon(1e-15));
  CHECK(s.params.at("a.weight")[1] == doctest::Approx(-2.0 - lr * v_w1).epsilon(1e-15));
  CHECK(s.params.at("a.bias")[0] == doctest::Approx(0.5 - lr * v_b).epsilon(1e-15));
  const double w0 = 1.0 - lr * v_w0;
  sgd_step(s, g, lr, m, wd);
  const double v2 = m * v_w0 + 0.2 + wd * w0;
  CHECK(s.params.at("a.weight")[0] == doctest::Approx(w0 - lr * v2).epsilon(1e-15));
  CHECK(s.momentum.at("a.weight")[0] == doctest::Approx(v2).epsilon(1e-15));
  // Parameters without a gradient still feel momentum and decay.
  sgd_step(s, {}, lr, m, wd);
  CHECK(s.momentum.at("a.bias")[0] == doctest::Approx(m * m * v_b + m * v_b).epsilon(1e-14));
}

TEST_CASE("sample order is a seeded permutation per epoch") {
  std::vector<std::size_t> first;
  for (std::size_t s = 0; s < 7; ++s) first.push_back(sample_index(4, 7, s));
  CHECK(std::set<std::size_t>(first.begin(), first.end()).size() == 7);
  std::vector<std::size_t> second;
  for (std::size_t s = 7; s < 14; ++s) second.push_back(sample_index(4, 7, s));
  CHECK(std::set<std::size_t>(second.begin(), second.end()).size() == 7);
  CHECK(first != second);
  CHECK(sample_index(4, 7, 3) == first[3]);
  CHECK_THROWS_AS(sample_index(4, 0, 0), DataError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto net = NetworkConfig::toy(16);
  auto cfg = quick(3);
  cfg.lr = 0;
  const auto init = initial_state<double>(net, {});
  const auto r = train<double>(net, {}, cfg, {}, toy_data(3), init);
  CHECK(r.state.params == init.params);
  CHECK(r.state.iteration == 3);
  CHECK(r.log.size() == 3);
}

TEST_CASE("accumulated update equals the mean of per-sample gradients") {
  const auto net = NetworkConfig::toy(16);
  auto cfg = quick(2, 3);
  cfg.total_iters = 1;
  cfg.lr_drop_at = 0;
  cfg.lr = 1.0;
  cfg.lr_drop_factor = 1.0;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  const auto items = toy_data(5);
  const auto init = initial_state<double>(net, {});
  const auto r = train<double>(net, {}, cfg, {}, items, init);

  std::map<std::string, Tensor<double>> mean;
  double loss = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto sg = sample_gradient<double>(init.params, net, {}, {}, items[sample_index(cfg.seed, 5, s)]);
    loss += sg.loss.loss / 3;
    for (const auto& [k, g] : sg.grads) {
      auto& m = mean.try_emplace(k, Tensor<double>(g.shape())).first->second;
      for (std::size_t i = 0; i < g.size(); ++i) m[i] += g[i] / 3;
    }
  }
  CHECK(r.log[0].loss == doctest::Approx(loss).epsilon(1e-12));
  double worst = 0;
  for (const auto& [k, theta] : r.state.params.tensors()) {
    const auto& t0 = init.params.at(k);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double expect = t0[i] - (mean.count(k) ? mean.at(k)[i] : 0.0);
      worst = std::max(worst, std::abs(theta[i] - expect) / std::max(1.0, std::abs(expect)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto dir = testutil::scratch_dir("trainer_resume");
  const auto net = NetworkConfig::toy(16);
  const auto cfg = quick(3);
  const auto items = toy_data(4);
  const CheckpointMeta meta{net, {}, cfg, {}, 0, 8};
  TrainHooks<double> hooks;
  hooks.checkpoint_every = 2;
  hooks.on_checkpoint = [&](const TrainState<double>& s) { save_checkpoint(dir / "k2.bin", s, meta); };
  const auto full = train<double>(net, {}, cfg, {}, items, initial_state<double>(net, {}), hooks);

  CheckpointMeta read;
  auto resumed_state = load_checkpoint<double>(dir / "k2.bin", &read);
  CHECK(read.iteration == 2);
  CHECK(read.train == cfg);
  CHECK(read.element_bytes == 8);
  const auto resumed = train<double>(net, {}, cfg, {}, items, std::move(resumed_state));
  CHECK(resumed.log.size() == 1);
  CHECK(resumed.log[0].iter == 3);
  CHECK(resumed.state.params == full.state.params);
  CHECK(resumed.state.momentum == full.state.momentum);
  CHECK(resumed.log[0].loss == full.log[2].loss);

  // Same seeds and configs give the same bytes.
  save_checkpoint(dir / "a.bin", full.state, meta);
  save_checkpoint(dir / "b.bin", resumed.state, meta);
  const auto a = read_tensor_file<double>(dir / "a.bin", kCheckpointMagic);
  const auto b = read_tensor_file<double>(dir / "b.bin", kCheckpointMagic);
  CHECK(a.tensors == b.tensors);
  CHECK(a.header == b.header);
}

TEST_CASE("checkpoint integrity checks") {
  const auto dir = testutil::scratch_dir("trainer_ckpt");
  const auto net = NetworkConfig::toy(16);
  const auto state = initial_state<float>(net, {});
  save_checkpoint(dir / "c.bin", state, {net, {}, quick(2), {}, 0, 4});
  CHECK(read_checkpoint_meta(dir / "c.bin").element_bytes == 4);
  auto file = read_tensor_file<float>(dir / "c.bin", kCheckpointMagic);

  json header = file.header;
  header["train"]["lr"] = 0.5;
  write_tensor_file(dir / "tampered.bin", kCheckpointMagic, header, file.tensors);
  CHECK_THROWS_AS(read_checkpoint_meta(dir / "tampered.bin"), ConfigError);

  auto tensors = file.tensors;
  tensors.erase("head.s1.weight");
  write_tensor_file(dir / "partial.bin", kCheckpointMagic, file.header, tensors);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "partial.bin"), ConfigError);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "nothing.bin"), DataError);
}

TEST_CASE("non-finite losses name the offending term") {
  const auto net = NetworkConfig::toy(16);
  auto init = initial_state<double>(net, {});
  init.params.at("head.s2.bias")[0] = NAN;
  try {
    train<double>(net, {}, quick(2), {}, toy_data(2), init);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("S2") != std::string::npos);
  }
}

TEST_CASE("training input checks") {
  const auto net = NetworkConfig::toy(16);
  CHECK_THROWS_AS(train<double>(net, {}, quick(2), {}, toy_data(2, 32), initial_state<double>(net, {})), DataError);
  CHECK_THROWS_AS(train<double>(net, {}, quick(2), {}, {}, initial_state<double>(net, {})), DataError);
  auto items = toy_data(2);
  items[0].gt = Tensor<float>();
  CHECK_THROWS_AS(train<double>(net, {}, quick(2), {}, items, initial_state<double>(net, {})), DataError);
}

TEST_CASE("loss log columns follow the active terms") {
  const auto net = NetworkConfig::toy(16);
  const auto nods = ablation_from_name("w/o-DS");
  const auto r = train<float>(net, nods, quick(2), {}, toy_data(2), initial_state<float>(net, nods));
  const std::string csv = loss_log_csv(r.log);
  CHECK(csv.substr(0, csv.find('\n')) == "iter,lr,loss,loss_s1");
  for (const auto& rec : r.log) {
    CHECK(rec.active == std::array<bool, 4>{true, false, false, false});
    CHECK(rec.loss == doctest::Approx(rec.terms[0]).epsilon(1e-6));
  }
  const auto full = train<float>(net, {}, quick(2), {}, toy_data(2), initial_state<float>(net, {}));
  const std::string csv2 = loss_log_csv(full.log);
  CHECK(csv2.substr(0, csv2.find('\n')) == "iter,lr,loss,loss_s1,loss_s2,loss_s3,loss_s4");
}

TEST_CASE("ablation grid") {
  const auto net = NetworkConfig::toy(16);
  std::vector<std::string> seen;
  const auto rows = run_ablation_grid<float>({"full", "w/o-RW"}, net, quick(1, 1), {}, toy_data(2), {},
                                             [&](const std::string& v) { seen.push_back(v); });
  REQUIRE(rows.size() == 2);
  CHECK(seen == std::vector<std::string>{"full", "w/o-RW"});
  CHECK(rows[0].parameters > rows[1].parameters);
  CHECK(rows[1].ablation.use_rw == false);
  CHECK(rows[0].report.images.size() == 2);
  CHECK(grid_table(rows).find("| w/o-RW |") != std::string::npos);
  CHECK(grid_json(rows).size() == 2);
  CHECK_THROWS_AS(run_ablation_grid<float>({"full", "bogus"}, net, quick(1, 1), {}, toy_data(2)), ConfigError);
}
