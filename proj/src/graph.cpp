#include "cmwnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cmwnet/errors.hpp"
#include "cmwnet/kernels/kernels.hpp"

namespace cmwnet {

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(const std::string& name, const Tensor<T>& storage) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) {
    if (nodes_[it->second].external != &storage) {
      throw ConfigError("parameter " + name + " bound to two different tensors");
    }
    return Var{it->second};
  }
  Node n;
  n.external = &storage;
  n.param_name = name;
  n.needs_grad = track_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_.emplace(name, id);
  return Var{id};
}

template <typename T>
const Tensor<T>& Graph<T>::value_of(int id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return value_of(v.id);
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, std::vector<int> parents, Backward backward, Kink kink) {
  Node n;
  n.value = std::move(value);
  n.kink = kink;
  if (track_) {
    n.needs_grad = std::any_of(parents.begin(), parents.end(),
                               [&](int p) { return nodes_.at(p).needs_grad; });
    if (n.needs_grad) n.backward = std::move(backward);
  }
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(value_of(id).shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!track_) throw ConfigError("backward() on a graph built without gradient tracking");
  if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <typename T>
void Graph<T>::for_each_parameter_grad(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  for (const auto& n : nodes_) {
    if (n.external && !n.grad.empty()) fn(n.param_name, n.grad);
  }
}

template <typename T>
std::uint64_t Graph<T>::kink_signature() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (const auto& n : nodes_) {
    if (n.kink == Kink::relu) {
      for (T v : n.value.values()) mix(v > T(0) ? 1 : 0);
    } else if (n.kink == Kink::argmax) {
      for (auto a : n.aux) mix(a);
    }
  }
  return h;
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------
// Convolution helpers

namespace {

// Caps the im2col buffer (elements) by tiling output rows.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

struct ConvDims {
  std::size_t cin, h, w, cout, ho, wo, k;
  std::size_t patch() const { return cin * k * k; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& geom) {
  if (x.rank() != 3) throw ShapeError("conv2d input must be C x H x W");
  if (w.rank() != 4 || w.dim(1) != x.channels() || w.dim(2) != geom.kernel ||
      w.dim(3) != geom.kernel) {
    throw ShapeError("conv2d weight " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  ConvDims d{x.channels(), x.height(), x.width(), w.dim(0),
             geom.output_size(x.height()), geom.output_size(x.width()), geom.kernel};
  if (d.ho == 0 || d.wo == 0) throw ShapeError("conv2d output would be empty");
  return d;
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

std::size_t rows_per_tile(const ConvDims& d) {
  const std::size_t per_row = d.patch() * d.wo;
  return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, d.ho);
}

template <typename T>
void im2col(const T* x, const ConvDims& d, const ConvGeometry& g, std::size_t oy0,
            std::size_t rows, T* col) {
  const std::size_t n = rows * d.wo;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto ih_max = static_cast<std::ptrdiff_t>(d.h);
  const auto iw_max = static_cast<std::ptrdiff_t>(d.w);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* plane = x + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        T* dst = col + ((ci * d.k + ky) * d.k + kx) * n;
        for (std::size_t r = 0; r < rows; ++r) {
          const auto iy = static_cast<std::ptrdiff_t>((oy0 + r) * g.stride + ky * g.dilation) - pad;
          T* out = dst + r * d.wo;
          if (iy < 0 || iy >= ih_max) {
            std::fill(out, out + d.wo, T(0));
            continue;
          }
          const T* src = plane + iy * iw_max;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) - pad;
            out[ox] = (ix >= 0 && ix < iw_max) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvDims& d, const ConvGeometry& g, std::size_t oy0,
            std::size_t rows, T* dx) {
  const std::size_t n = rows * d.wo;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto ih_max = static_cast<std::ptrdiff_t>(d.h);
  const auto iw_max = static_cast<std::ptrdiff_t>(d.w);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    T* plane = dx + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const T* src = col + ((ci * d.k + ky) * d.k + kx) * n;
        for (std::size_t r = 0; r < rows; ++r) {
          const auto iy = static_cast<std::ptrdiff_t>((oy0 + r) * g.stride + ky * g.dilation) - pad;
          if (iy < 0 || iy >= ih_max) continue;
          T* out = plane + iy * iw_max;
          const T* in = src + r * d.wo;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) - pad;
            if (ix >= 0 && ix < iw_max) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void bias_activation(Tensor<T>& y, const Tensor<T>& bias, Activation act) {
  const std::size_t plane = y.plane();
  for (std::size_t c = 0; c < y.channels(); ++c) {
    T* p = y.channel(c);
    const T b = bias[c];
    if (act == Activation::relu) {
      for (std::size_t i = 0; i < plane; ++i) p[i] = std::max(p[i] + b, T(0));
    } else {
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t cout, const char* op) {
  if (bias.rank() != 1 || bias.dim(0) != cout) {
    throw ShapeError(std::string(op) + " bias " + shape_string(bias.shape()) +
                     " does not match " + std::to_string(cout) + " output channels");
  }
}

template <typename T>
void accumulate_bias_grad(const T* g, std::size_t channels, std::size_t plane, Tensor<T>& db) {
  for (std::size_t c = 0; c < channels; ++c) {
    T s = T(0);
    const T* p = g + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    db[c] += s;
  }
}

// Output gradient with the ReLU gate applied; borrows gy when act is none.
template <typename T>
const T* gated_grad(const Tensor<T>& y, const Tensor<T>& gy, Activation act,
                    std::vector<T>& scratch) {
  if (act == Activation::none) return gy.data();
  scratch.resize(gy.size());
  kernels::active<T>().relu_gate(gy.size(), y.data(), gy.data(), scratch.data());
  return scratch.data();
}

}  // namespace

namespace tensor_ops {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvGeometry& geom, Activation act) {
  const ConvDims d = conv_dims(x, weight, geom);
  check_bias(bias, d.cout, "conv2d");
  const auto& kt = kernels::active<T>();
  Tensor<T> y({d.cout, d.ho, d.wo});
  const std::size_t out_plane = d.ho * d.wo;
  if (is_pointwise(geom)) {
    kt.gemm(false, false, d.cout, out_plane, d.cin, weight.data(), d.cin, x.data(), d.h * d.w,
            y.data(), out_plane);
  } else {
    const std::size_t tile = rows_per_tile(d);
    std::vector<T> col(d.patch() * tile * d.wo);
    for (std::size_t oy0 = 0; oy0 < d.ho; oy0 += tile) {
      const std::size_t rows = std::min(tile, d.ho - oy0);
      const std::size_t n = rows * d.wo;
      im2col(x.data(), d, geom, oy0, rows, col.data());
      kt.gemm(false, false, d.cout, n, d.patch(), weight.data(), d.patch(), col.data(), n,
              y.data() + oy0 * d.wo, out_plane);
    }
  }
  bias_activation(y, bias, act);
  return y;
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   Activation act) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.channels() ||
      weight.dim(2) != weight.dim(3)) {
    throw ShapeError("deconv2d weight " + shape_string(weight.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t cin = x.channels(), h = x.height(), w = x.width();
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  check_bias(bias, cout, "deconv2d");
  const std::size_t rows = cout * k * k, plane = h * w;
  std::vector<T> z(rows * plane, T(0));
  kernels::active<T>().gemm(true, false, rows, plane, cin, weight.data(), rows, x.data(), plane,
                            z.data(), plane);
  Tensor<T> y({cout, h * k, w * k});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        const T* src = z.data() + ((co * k + a) * k + b) * plane;
        for (std::size_t i = 0; i < h; ++i) {
          T* dst = &y.at(co, i * k + a, b);
          for (std::size_t j = 0; j < w; ++j) dst[j * k] = src[i * w + j];
        }
      }
    }
  }
  bias_activation(y, bias, act);
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  return y;
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              const ConvGeometry&, Activation);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, const ConvGeometry&, Activation);
template Tensor<float> deconv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                Activation);
template Tensor<double> deconv2d(const Tensor<double>&, const Tensor<double>&,
                                 const Tensor<double>&, Activation);
template Tensor<float> sigmoid(const Tensor<float>&);
template Tensor<double> sigmoid(const Tensor<double>&);

}  // namespace tensor_ops

// ---------------------------------------------------------------------------
// Graph operators

namespace ops {

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, const ConvGeometry& geom, Activation act) {
  Tensor<T> y = tensor_ops::conv2d(g.value(x), g.value(weight), g.value(bias), geom, act);
  const int xi = x.id, wi = weight.id, bi = bias.id;
  auto backward = [xi, wi, bi, geom, act](Graph<T>& gr, int self) {
    const Tensor<T>& xv = gr.value_of(xi);
    const Tensor<T>& wv = gr.value_of(wi);
    const ConvDims d = conv_dims(xv, wv, geom);
    const std::size_t out_plane = d.ho * d.wo;
    const auto& kt = kernels::active<T>();
    std::vector<T> scratch;
    const T* gy = gated_grad(gr.value_of(self), gr.grad_of(self), act, scratch);
    if (gr.needs_grad(bi)) accumulate_bias_grad(gy, d.cout, out_plane, gr.grad_buffer(bi));
    const bool need_w = gr.needs_grad(wi);
    const bool need_x = gr.needs_grad(xi);
    T* dw = need_w ? gr.grad_buffer(wi).data() : nullptr;
    T* dx = need_x ? gr.grad_buffer(xi).data() : nullptr;
    if (is_pointwise(geom)) {
      const std::size_t plane = d.h * d.w;
      if (need_w) kt.gemm(false, true, d.cout, d.cin, plane, gy, plane, xv.data(), plane, dw, d.cin);
      if (need_x) kt.gemm(true, false, d.cin, plane, d.cout, wv.data(), d.cin, gy, plane, dx, plane);
      return;
    }
    const std::size_t tile = rows_per_tile(d);
    std::vector<T> col(d.patch() * tile * d.wo);
    for (std::size_t oy0 = 0; oy0 < d.ho; oy0 += tile) {
      const std::size_t rows = std::min(tile, d.ho - oy0);
      const std::size_t n = rows * d.wo;
      const T* gtile = gy + oy0 * d.wo;
      if (need_w) {
        im2col(xv.data(), d, geom, oy0, rows, col.data());
        kt.gemm(false, true, d.cout, d.patch(), n, gtile, out_plane, col.data(), n, dw, d.patch());
      }
      if (need_x) {
        std::fill(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(d.patch() * n), T(0));
        kt.gemm(true, false, d.patch(), n, d.cout, wv.data(), d.patch(), gtile, out_plane,
                col.data(), n);
        col2im(col.data(), d, geom, oy0, rows, dx);
      }
    }
  };
  return g.push(std::move(y), {xi, wi, bi}, backward,
                act == Activation::relu ? Graph<T>::Kink::relu : Graph<T>::Kink::none);
}

template <typename T>
Var deconv2d(Graph<T>& g, Var x, Var weight, Var bias, Activation act) {
  Tensor<T> y = tensor_ops::deconv2d(g.value(x), g.value(weight), g.value(bias), act);
  const int xi = x.id, wi = weight.id, bi = bias.id;
  auto backward = [xi, wi, bi, act](Graph<T>& gr, int self) {
    const Tensor<T>& xv = gr.value_of(xi);
    const Tensor<T>& wv = gr.value_of(wi);
    const std::size_t cin = xv.channels(), h = xv.height(), w = xv.width();
    const std::size_t cout = wv.dim(1), k = wv.dim(2);
    const std::size_t rows = cout * k * k, plane = h * w;
    const auto& kt = kernels::active<T>();
    std::vector<T> scratch;
    const Tensor<T>& yv = gr.value_of(self);
    const T* gy = gated_grad(yv, gr.grad_of(self), act, scratch);
    if (gr.needs_grad(bi)) accumulate_bias_grad(gy, cout, yv.plane(), gr.grad_buffer(bi));
    std::vector<T> gz(rows * plane);
    const std::size_t wo = w * k;
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          T* dst = gz.data() + ((co * k + a) * k + b) * plane;
          const T* src = gy + co * yv.plane();
          for (std::size_t i = 0; i < h; ++i) {
            const T* row = src + (i * k + a) * wo + b;
            for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = row[j * k];
          }
        }
      }
    }
    if (gr.needs_grad(xi)) {
      kt.gemm(false, false, cin, plane, rows, wv.data(), rows, gz.data(), plane,
              gr.grad_buffer(xi).data(), plane);
    }
    if (gr.needs_grad(wi)) {
      kt.gemm(false, true, cin, rows, plane, xv.data(), plane, gz.data(), plane,
              gr.grad_buffer(wi).data(), rows);
    }
  };
  return g.push(std::move(y), {xi, wi, bi}, backward,
                act == Activation::relu ? Graph<T>::Kink::relu : Graph<T>::Kink::none);
}

template <typename T>
Var max_pool2(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() != 3 || xv.height() < 2 || xv.width() < 2) {
    throw ShapeError("max_pool2 needs a C x H x W input with H, W >= 2");
  }
  const std::size_t c = xv.channels(), h = xv.height(), w = xv.width();
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> y({c, ho, wo});
  std::vector<std::uint32_t> arg(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* p = xv.channel(ch);
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t idx : {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                (2 * i + 1) * w + 2 * j + 1}) {
          if (p[idx] > p[best]) best = idx;
        }
        const std::size_t o = (ch * ho + i) * wo + j;
        y[o] = p[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const int xi = x.id;
  auto backward = [xi](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad_of(self);
    const auto& arg = gr.aux(self);
    Tensor<T>& dx = gr.grad_buffer(xi);
    const std::size_t in_plane = dx.plane();
    const std::size_t out_plane = gy.plane();
    for (std::size_t o = 0; o < gy.size(); ++o) dx[(o / out_plane) * in_plane + arg[o]] += gy[o];
  };
  Var out = g.push(std::move(y), {xi}, backward, Graph<T>::Kink::argmax);
  g.aux(out.id) = std::move(arg);
  return out;
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  Tensor<T> y = tensor_ops::sigmoid(g.value(x));
  const int xi = x.id;
  auto backward = [xi](Graph<T>& gr, int self) {
    const Tensor<T>& yv = gr.value_of(self);
    const Tensor<T>& gy = gr.grad_of(self);
    Tensor<T>& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < yv.size(); ++i) dx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
  };
  return g.push(std::move(y), {xi}, backward);
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_same_shape(av, bv, "mul");
  Tensor<T> y(av.shape());
  kernels::active<T>().mul(y.size(), av.data(), bv.data(), y.data());
  const int ai = a.id, bi = b.id;
  auto backward = [ai, bi](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad_of(self);
    const auto& kt = kernels::active<T>();
    if (gr.needs_grad(ai)) {
      kt.mul_acc(gy.size(), gy.data(), gr.value_of(bi).data(), gr.grad_buffer(ai).data());
    }
    if (gr.needs_grad(bi)) {
      kt.mul_acc(gy.size(), gy.data(), gr.value_of(ai).data(), gr.grad_buffer(bi).data());
    }
  };
  return g.push(std::move(y), {ai, bi}, backward);
}

template <typename T>
Var add(Graph<T>& g, const std::vector<Var>& terms) {
  if (terms.empty()) throw ShapeError("add needs at least one term");
  const auto& kt = kernels::active<T>();
  Tensor<T> y = g.value(terms[0]);
  std::vector<int> ids{terms[0].id};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    const Tensor<T>& t = g.value(terms[i]);
    require_same_shape(y, t, "add");
    kt.add(y.size(), y.data(), t.data(), y.data());
    ids.push_back(terms[i].id);
  }
  auto backward = [ids](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad_of(self);
    const auto& k = kernels::active<T>();
    for (int id : ids) {
      if (gr.needs_grad(id)) k.axpy(gy.size(), T(1), gy.data(), gr.grad_buffer(id).data());
    }
  };
  return g.push(std::move(y), ids, backward);
}

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat needs at least one part");
  const Tensor<T>& first = g.value(parts[0]);
  std::size_t channels = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    const Tensor<T>& t = g.value(p);
    if (t.rank() != 3 || t.height() != first.height() || t.width() != first.width()) {
      throw ShapeError("concat spatial mismatch " + shape_string(t.shape()) + " vs " +
                       shape_string(first.shape()));
    }
    channels += t.channels();
    ids.push_back(p.id);
  }
  Tensor<T> y({channels, first.height(), first.width()});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor<T>& t = g.value(p);
    std::copy(t.data(), t.data() + t.size(), y.data() + offset);
    offset += t.size();
  }
  auto backward = [ids](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad_of(self);
    std::size_t off = 0;
    const auto& k = kernels::active<T>();
    for (int id : ids) {
      const std::size_t n = gr.value_of(id).size();
      if (gr.needs_grad(id)) k.axpy(n, T(1), gy.data() + off, gr.grad_buffer(id).data());
      off += n;
    }
  };
  return g.push(std::move(y), ids, backward);
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& target) {
  const Tensor<T>& z = g.value(logits);
  if (z.rank() != 3 || z.channels() != 2) throw ShapeError("softmax loss needs 2-channel logits");
  if (target.rank() != 3 || target.channels() != 1 || target.height() != z.height() ||
      target.width() != z.width()) {
    throw ShapeError("softmax loss target " + shape_string(target.shape()) +
                     " does not match logits " + shape_string(z.shape()));
  }
  const std::size_t n = z.plane();
  const T* bg = z.channel(0);
  const T* fg = z.channel(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T m = std::max(bg[i], fg[i]);
    const T lse = m + std::log(std::exp(bg[i] - m) + std::exp(fg[i] - m));
    total += static_cast<double>(lse - (target[i] > T(0.5) ? fg[i] : bg[i]));
  }
  Tensor<T> y({1}, static_cast<T>(total / static_cast<double>(n)));
  const int zi = logits.id;
  auto backward = [zi, target](Graph<T>& gr, int self) {
    const Tensor<T>& zv = gr.value_of(zi);
    const T scale = gr.grad_of(self)[0] / static_cast<T>(zv.plane());
    Tensor<T>& dz = gr.grad_buffer(zi);
    const std::size_t np = zv.plane();
    for (std::size_t i = 0; i < np; ++i) {
      const T b = zv[i], f = zv[np + i];
      const T m = std::max(b, f);
      const T eb = std::exp(b - m), ef = std::exp(f - m);
      const T pf = ef / (eb + ef);
      const T pb = eb / (eb + ef);
      const bool is_fg = target[i] > T(0.5);
      dz[i] += scale * (pb - (is_fg ? T(0) : T(1)));
      dz[np + i] += scale * (pf - (is_fg ? T(1) : T(0)));
    }
  };
  return g.push(std::move(y), {zi}, backward);
}

template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<T>& weights) {
  if (scalars.size() != weights.size() || scalars.empty()) {
    throw ShapeError("weighted_sum needs one weight per scalar");
  }
  T total = T(0);
  std::vector<int> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (g.value(scalars[i]).size() != 1) throw ShapeError("weighted_sum over non-scalars");
    total += weights[i] * g.value(scalars[i])[0];
    ids.push_back(scalars[i].id);
  }
  auto backward = [ids, weights](Graph<T>& gr, int self) {
    const T gy = gr.grad_of(self)[0];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (gr.needs_grad(ids[i])) gr.grad_buffer(ids[i])[0] += weights[i] * gy;
    }
  };
  return g.push(Tensor<T>({1}, total), ids, backward);
}

#define CMWNET_INSTANTIATE_OPS(T)                                                             \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, const ConvGeometry&, Activation);          \
  template Var deconv2d<T>(Graph<T>&, Var, Var, Var, Activation);                             \
  template Var max_pool2<T>(Graph<T>&, Var);                                                  \
  template Var sigmoid<T>(Graph<T>&, Var);                                                    \
  template Var mul<T>(Graph<T>&, Var, Var);                                                   \
  template Var add<T>(Graph<T>&, const std::vector<Var>&);                                    \
  template Var concat_channels<T>(Graph<T>&, const std::vector<Var>&);                        \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, const Tensor<T>&);                    \
  template Var weighted_sum<T>(Graph<T>&, const std::vector<Var>&, const std::vector<T>&);

CMWNET_INSTANTIATE_OPS(float)
CMWNET_INSTANTIATE_OPS(double)

#undef CMWNET_INSTANTIATE_OPS

}  // namespace ops
}  // namespace cmwnet
