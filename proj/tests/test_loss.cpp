#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmwnet/errors.hpp"
#include "cmwnet/loss.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace cmwnet;
using testutil::random_tensor;

namespace {

Tensor<float> random_mask(std::size_t h, std::size_t w, std::uint64_t seed) {
  auto t = random_tensor<float>({1, h, w}, seed, 0, 1);
  for (auto& v : t.values()) v = v > 0.5f ? 1.0f : 0.0f;
  return t;
}

// Logits strongly favouring the mask's label.
Tensor<double> confident(const Tensor<float>& gt, double margin) {
  const std::size_t n = gt.size();
  Tensor<double> z({2, gt.height(), gt.width()});
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = gt[i] > 0.5f ? 0 : margin;
    z[n + i] = gt[i] > 0.5f ? margin : 0;
  }
  return z;
}

// Four predictions at the pyramid sizes of a 32 input.
std::array<Tensor<double>, 4> pyramid(std::uint64_t seed) {
  return {random_tensor<double>({2, 32, 32}, seed), random_tensor<double>({2, 8, 8}, seed + 1),
          random_tensor<double>({2, 2, 2}, seed + 2), random_tensor<double>({2, 2, 2}, seed + 3)};
}

}  // namespace

TEST_CASE("ground truth downscaling") {
  const auto gt = random_mask(16, 16, 1);
  CHECK(loss::downscale_gt(gt, 16, 16) == gt);
  const Tensor<float> ones({1, 12, 8}, 1.0f);
  CHECK(loss::downscale_gt(ones, 3, 2) == Tensor<float>({1, 3, 2}, 1.0f));

  // 4x4 checkerboard, top-left 1: every even offset lands on the same colour.
  Tensor<float> cb({1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) cb.at(0, y, x) = (x + y) % 2 == 0 ? 1.0f : 0.0f;
  CHECK(loss::downscale_gt(cb, 2, 2).values() == std::vector<float>{1, 1, 1, 1});
  Tensor<float> shifted = cb;
  for (auto& v : shifted.values()) v = 1.0f - v;
  CHECK(loss::downscale_gt(shifted, 2, 2).values() == std::vector<float>{0, 0, 0, 0});

  Tensor<float> m({1, 4, 4});
  m.at(0, 0, 2) = 1;
  m.at(0, 3, 3) = 1;
  CHECK(loss::downscale_gt(m, 2, 2).values() == std::vector<float>{0, 1, 0, 0});
  CHECK_THROWS_AS(loss::downscale_gt(m, 3, 3), ShapeError);
}

TEST_CASE("pyramid of masks") {
  const auto s = loss::scale_ground_truth(random_mask(32, 32, 2), NetworkConfig::toy(32));
  CHECK(s.levels[0].shape() == std::vector<std::size_t>{1, 32, 32});
  CHECK(s.levels[1].shape() == std::vector<std::size_t>{1, 8, 8});
  CHECK(s.levels[2].shape() == std::vector<std::size_t>{1, 2, 2});
  CHECK(s.levels[3] == s.levels[2]);
  CHECK_THROWS_AS(loss::scale_ground_truth(random_mask(16, 16, 2), NetworkConfig::toy(32)), ShapeError);
}

TEST_CASE("softmax loss values") {
  const auto gt = random_mask(6, 5, 3);
  CHECK(loss::softmax_loss(confident(gt, 20.0), gt) < 1e-3);
  CHECK(loss::softmax_loss(Tensor<double>({2, 6, 5}, 0.4), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss::softmax_loss(Tensor<float>({2, 6, 5}, -3.0f), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-7));

  const Tensor<double> z({2, 1, 1}, {0.0, 1.0});
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(loss::softmax_loss(z, Tensor<float>({1, 1, 1}, 1.0f)) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.3133).epsilon(1e-4));
  // Mean, not sum: tiling the pixel leaves the value unchanged.
  Tensor<double> tiled({2, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) tiled[9 + i] = 1.0;
  CHECK(loss::softmax_loss(tiled, Tensor<float>({1, 3, 3}, 1.0f)) == doctest::Approx(expect).epsilon(1e-14));
  CHECK_THROWS_AS(loss::softmax_loss(Tensor<double>({2, 3, 3}), Tensor<float>({1, 3, 2})), ShapeError);
}

TEST_CASE("softmax loss is invariant to pixel permutation") {
  const auto z = random_tensor<double>({2, 4, 4}, 4, -3, 3);
  const auto gt = random_mask(4, 4, 5);
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
  Tensor<double> zp({2, 4, 4});
  Tensor<float> gp({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    zp[i] = z[perm[i]];
    zp[16 + i] = z[16 + perm[i]];
    gp[i] = gt[perm[i]];
  }
  CHECK(loss::softmax_loss(zp, gp) == doctest::Approx(loss::softmax_loss(z, gt)).epsilon(1e-14));
}

TEST_CASE("weighted total loss") {
  const auto gt = loss::scale_ground_truth(random_mask(32, 32, 6), NetworkConfig::toy(32));
  const auto p = pyramid(10);
  auto run = [&](const loss::LossConfig& cfg, const AblationSpec& a, int terms = 4) {
    Graph<double> g(false);
    std::array<Var, 4> preds;
    for (int t = 0; t < terms; ++t) preds[t] = g.constant(p[t]);
    const auto l = loss::total_loss(g, preds, gt, cfg, a);
    return g.value(l.total)[0];
  };
  double per[4];
  for (int t = 0; t < 4; ++t) per[t] = loss::softmax_loss(p[t], gt.levels[t]);

  CHECK(run({{0, 0, 0, 0}}, {}) == 0.0);
  CHECK(run({{1, 0, 0, 0}}, {}) == doctest::Approx(per[0]).epsilon(1e-14));
  CHECK(run({}, {}) == doctest::Approx(per[0] + per[1] + per[2] + per[3]).epsilon(1e-14));
  CHECK(run({{0.5, 2, 0, 1}}, {}) == doctest::Approx(0.5 * per[0] + 2 * per[1] + per[3]).epsilon(1e-14));

  AblationSpec nods;
  nods.deep_supervision = false;
  CHECK(run({}, nods, 1) == doctest::Approx(per[0]).epsilon(1e-14));
  CHECK_THROWS_AS(run({}, {}, 1), ConfigError);
  CHECK(run({{1, 0, 0, 0}}, {}, 1) == doctest::Approx(per[0]).epsilon(1e-14));
}

TEST_CASE("equal per-term losses sum linearly") {
  const auto gt = loss::scale_ground_truth(Tensor<float>({1, 32, 32}), NetworkConfig::toy(32));
  Graph<double> g(false);
  std::array<Var, 4> preds{g.constant(Tensor<double>({2, 32, 32})), g.constant(Tensor<double>({2, 8, 8})),
                           g.constant(Tensor<double>({2, 2, 2})), g.constant(Tensor<double>({2, 2, 2}))};
  const auto l = loss::total_loss(g, preds, gt, {}, {});
  CHECK(g.value(l.total)[0] == doctest::Approx(4 * std::log(2.0)).epsilon(1e-14));
  for (int t = 0; t < 4; ++t) CHECK(g.value(l.terms[t])[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("loss config validation") {
  CHECK_THROWS_AS((loss::LossConfig{{1, -1, 0, 0}}.validate()), ConfigError);
  CHECK_THROWS_AS((loss::LossConfig{{1, NAN, 0, 0}}.validate()), ConfigError);
  const loss::LossConfig c{{0.5, 0.25, 1, 2}};
  CHECK(loss::loss_config_from_json(loss::to_json(c)) == c);
  CHECK_THROWS_AS(loss::loss_config_from_json(json{{"beta", 1}}), ConfigError);
}

TEST_CASE("loss gradients match finite differences") {
  const auto gt = loss::scale_ground_truth(random_mask(32, 32, 7), NetworkConfig::toy(32));
  const auto p = pyramid(20);
  testutil::Params params;
  for (int t = 0; t < 4; ++t) params["s" + std::to_string(t + 1)] = p[t];
  const loss::LossConfig cfg{{1.0, 0.5, 2.0, 0.25}};
  const auto build = [&](Graph<double>& g, const std::map<std::string, Var>& v) {
    std::array<Var, 4> preds{v.at("s1"), v.at("s2"), v.at("s3"), v.at("s4")};
    return loss::total_loss(g, preds, gt, cfg, AblationSpec{}).total;
  };
  const auto r = testutil::gradcheck(params, build, 80, 3, 1e-5, 1e-9);
  CHECK(r.checked == 80);
  CHECK_MESSAGE(r.max_rel_error < 1e-6, r.worst);
}
