#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmwnet/errors.hpp"
#include "cmwnet/graph.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace cmwnet;
using testutil::random_tensor;

namespace {

// Direct convolution oracle.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          const ConvGeometry& g) {
  const std::size_t cin = x.channels(), h = x.height(), wd = x.width(), cout = w.dim(0), k = g.kernel;
  const std::size_t ho = g.output_size(h), wo = g.output_size(wd);
  Tensor<double> y({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(oy * g.stride + ky * g.dilation) - long(g.pad);
              const long ix = long(ox * g.stride + kx * g.dilation) - long(g.pad);
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
              s += w[((o * cin + c) * k + ky) * k + kx] * x.at(c, iy, ix);
            }
        y.at(o, oy, ox) = s;
      }
  return y;
}

Tensor<double> naive_deconv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t cin = x.channels(), h = x.height(), wd = x.width(), cout = w.dim(1), k = w.dim(2);
  Tensor<double> y({cout, h * k, wd * k});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t yy = 0; yy < h * k; ++yy)
      for (std::size_t xx = 0; xx < wd * k; ++xx) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          s += x.at(c, yy / k, xx / k) * w[((c * cout + o) * k + yy % k) * k + xx % k];
        y.at(o, yy, xx) = s;
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution for varied geometry") {
  const ConvGeometry geoms[] = {{3, 1, 1, 1}, {7, 1, 3, 1}, {3, 1, 5, 5}, {3, 2, 1, 1}, {5, 4, 4, 1}, {1, 1, 0, 1}};
  for (const auto& g : geoms) {
    const auto x = random_tensor<double>({3, 17, 16}, 1);
    const auto w = random_tensor<double>({4, 3, g.kernel, g.kernel}, 2);
    const auto b = random_tensor<double>({4}, 3);
    const auto y = tensor_ops::conv2d(x, w, b, g);
    const auto ref = naive_conv(x, w, b, g);
    REQUIRE(y.shape() == ref.shape());
    CHECK(testutil::max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("conv2d output size for the stride-2 downsampling rule") {
  // kernel 2s-1, stride s, pad s-1 maps n to n/s for even n
  for (std::size_t s : {2u, 4u}) {
    ConvGeometry g{2 * s - 1, s, s - 1, 1};
    CHECK(g.output_size(32) == 32 / s);
    CHECK(g.output_size(288) == 288 / s);
  }
}

TEST_CASE("deconv2d matches scatter oracle") {
  const auto x = random_tensor<double>({3, 5, 4}, 4);
  const auto w = random_tensor<double>({3, 2, 4, 4}, 5);
  const auto b = random_tensor<double>({2}, 6);
  const auto y = tensor_ops::deconv2d(x, w, b);
  const auto ref = naive_deconv(x, w, b);
  REQUIRE(y.shape() == ref.shape());
  CHECK(testutil::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("conv2d rejects mismatched weights") {
  const auto x = random_tensor<double>({3, 8, 8}, 1);
  const auto w = random_tensor<double>({4, 2, 3, 3}, 2);
  CHECK_THROWS_AS(tensor_ops::conv2d(x, w, Tensor<double>({4}), ConvGeometry{}), ShapeError);
}

TEST_CASE("max_pool2 keeps the maximum of each cell") {
  Graph<double> g(false);
  Tensor<double> x({1, 2, 4}, std::vector<double>{1, 5, -1, 0, 3, 2, 7, -2});
  const auto& y = g.value(ops::max_pool2(g, g.constant(x)));
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 2});
  CHECK(y[0] == 5);
  CHECK(y[1] == 7);
}

TEST_CASE("sigmoid is stable and in range") {
  Tensor<double> x({1, 1, 4}, std::vector<double>{-1000, 0, 1000, 2});
  const auto y = tensor_ops::sigmoid(x);
  CHECK(y[0] >= 0);
  CHECK(y[1] == 0.5);
  CHECK(y[2] <= 1);
  CHECK(y[3] == doctest::Approx(1 / (1 + std::exp(-2.0))));
}

TEST_CASE("softmax cross-entropy hand values") {
  Graph<double> g(false);
  Tensor<double> z({2, 1, 1}, std::vector<double>{0, 1});
  Tensor<double> fg({1, 1, 1}, 1.0);
  CHECK(g.value(ops::softmax_cross_entropy(g, g.constant(z), fg))[0] ==
        doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-15));
  Tensor<double> eq({2, 3, 3}, 0.25);
  CHECK(g.value(ops::softmax_cross_entropy(g, g.constant(eq), Tensor<double>({1, 3, 3})))[0] == std::log(2.0));
}

TEST_CASE("operator gradients match central differences") {
  using testutil::Params;
  struct Case {
    const char* name;
    Params params;
    testutil::Builder build;
  };
  std::vector<Case> cases;
  const auto c_out = random_tensor<double>({4, 8, 8}, 7);
  {
    Params p{{"x", random_tensor<double>({3, 8, 8}, 1)},
             {"w", random_tensor<double>({4, 3, 3, 3}, 2)},
             {"b", random_tensor<double>({4}, 3)}};
    for (ConvGeometry geom : {ConvGeometry{3, 1, 1, 1}, ConvGeometry{3, 1, 5, 5}}) {
      cases.push_back({"conv", p, [=](Graph<double>& g, const auto& v) {
                         return testutil::dot_const(g, ops::conv2d(g, v.at("x"), v.at("w"), v.at("b"), geom, Activation::relu), c_out);
                       }});
    }
    const auto c_s2 = random_tensor<double>({4, 4, 4}, 8);
    cases.push_back({"conv stride 2", p, [=](Graph<double>& g, const auto& v) {
                       return testutil::dot_const(g, ops::conv2d(g, v.at("x"), v.at("w"), v.at("b"), ConvGeometry{3, 2, 1, 1}), c_s2);
                     }});
  }
  {
    Params p{{"x", random_tensor<double>({3, 4, 4}, 1)},
             {"w", random_tensor<double>({3, 4, 2, 2}, 2)},
             {"b", random_tensor<double>({4}, 3)}};
    cases.push_back({"deconv", p, [=](Graph<double>& g, const auto& v) {
                       return testutil::dot_const(g, ops::deconv2d(g, v.at("x"), v.at("w"), v.at("b")), c_out);
                     }});
  }
  {
    Params p{{"x", random_tensor<double>({4, 16, 16}, 9)}, {"y", random_tensor<double>({4, 8, 8}, 10)}};
    cases.push_back({"pool/sigmoid/mul/add/concat", p, [=](Graph<double>& g, const auto& v) {
                       Var pooled = ops::max_pool2(g, v.at("x"));
                       Var s = ops::sigmoid(g, v.at("y"));
                       Var m = ops::mul(g, s, pooled);
                       Var a = ops::add(g, {m, pooled, v.at("y")});
                       Var c = ops::concat_channels(g, {a, s});
                       Var l1 = testutil::dot_const(g, c, random_tensor<double>({8, 8, 8}, 11));
                       return ops::weighted_sum(g, {l1}, std::vector<double>{0.5});
                     }});
  }
  {
    Params p{{"z", random_tensor<double>({2, 5, 5}, 12, -3, 3)}};
    Tensor<double> target({1, 5, 5});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7) % 3 == 0;
    cases.push_back({"softmax CE", p, [=](Graph<double>& g, const auto& v) {
                       Var l = ops::softmax_cross_entropy(g, v.at("z"), target);
                       return ops::weighted_sum(g, {l, l}, std::vector<double>{1.0, 2.0});
                     }});
  }
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto r = testutil::gradcheck(c.params, c.build, 60, 42);
    CHECK(r.checked == 60);
    CHECK_MESSAGE(r.max_rel_error < 1e-6, r.worst);
  }
}

TEST_CASE("shared parameters accumulate gradients from every use") {
  Tensor<double> w = random_tensor<double>({2, 2, 3, 3}, 1);
  Tensor<double> b({2});
  Graph<double> g(true);
  Var x1 = g.constant(random_tensor<double>({2, 5, 5}, 2));
  Var x2 = g.constant(random_tensor<double>({2, 5, 5}, 3));
  Var wv = g.parameter("w", w);
  CHECK(g.parameter("w", w) == wv);
  Var bv = g.parameter("b", b);
  Var y = ops::add(g, {ops::conv2d(g, x1, wv, bv, ConvGeometry{}), ops::conv2d(g, x2, wv, bv, ConvGeometry{})});
  const auto c = random_tensor<double>({2, 5, 5}, 4);
  g.backward(testutil::dot_const(g, y, c));
  // gradient of a sum of two uses equals the sum of the separate gradients
  Tensor<double> sum(w.shape());
  for (Var xi : {x1, x2}) {
    Graph<double> h(true);
    Var wv2 = h.parameter("w", w), bv2 = h.parameter("b", b);
    h.backward(testutil::dot_const(h, ops::conv2d(h, h.constant(g.value(xi)), wv2, bv2, ConvGeometry{}), c));
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*h.grad(wv2))[i];
  }
  CHECK(testutil::max_abs_diff(*g.grad(wv), sum) < 1e-12);
  Tensor<double> other(w.shape());
  CHECK_THROWS_AS(g.parameter("w", other), ConfigError);
}
