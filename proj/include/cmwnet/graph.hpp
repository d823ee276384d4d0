#pragma once

// Define-by-run computation graph. Each operator appends a node holding its
// output value and a closure that propagates the output gradient to its
// parents. Parameters are bound by name, so a tensor referenced twice (the
// shared Siamese encoder layers) is a single node whose gradient accumulates
// contributions from both streams.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmwnet/tensor.hpp"

namespace cmwnet {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
  bool operator==(const Var&) const = default;
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  /// Records which piecewise-linear branch an op took (ReLU sign pattern,
  /// max-pool argmax); used to detect when finite differences straddle a kink.
  enum class Kink { none, relu, argmax };

  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const { return track_; }

  Var constant(Tensor<T> value);
  /// Binds an external parameter tensor; it must outlive the graph.
  Var parameter(const std::string& name, const Tensor<T>& storage);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Gradient of the last backward() w.r.t. v, or nullptr when none reached it.
  const Tensor<T>* grad(Var v) const;

  /// Backpropagates d(loss)/d(loss) = 1 from a single-element node.
  void backward(Var loss);

  /// Visits (name, gradient) for every bound parameter that received one.
  void for_each_parameter_grad(
      const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  /// Hash of every recorded branch decision.
  std::uint64_t kink_signature() const;

  std::size_t node_count() const { return nodes_.size(); }

  // ---- operator plumbing ----
  Var push(Tensor<T> value, std::vector<int> parents, Backward backward, Kink kink = Kink::none);
  Tensor<T>& grad_buffer(int id);
  bool has_grad(int id) const { return !nodes_.at(id).grad.empty(); }
  const Tensor<T>& grad_of(int id) const { return nodes_.at(id).grad; }
  bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }
  const Tensor<T>& value_of(int id) const;
  std::vector<std::uint32_t>& aux(int id) { return nodes_.at(id).aux; }
  const std::vector<std::uint32_t>& aux(int id) const { return nodes_.at(id).aux; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::vector<int> parents;
    Backward backward;
    std::string param_name;
    std::vector<std::uint32_t> aux;
    Kink kink = Kink::none;
    bool needs_grad = false;
  };

  bool track_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_ids_;
};

/// Convolution geometry (square kernels).
struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t dilation = 1;

  std::size_t output_size(std::size_t in) const {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * pad < span) return 0;
    return (in + 2 * pad - span) / stride + 1;
  }
};

enum class Activation { none, relu };

namespace ops {

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, const ConvGeometry& geom,
           Activation act = Activation::none);

/// Transposed convolution whose kernel equals its stride (non-overlapping
/// k x k upsampling); weight is Cin x Cout x k x k.
template <typename T>
Var deconv2d(Graph<T>& g, Var x, Var weight, Var bias, Activation act = Activation::none);

template <typename T>
Var max_pool2(Graph<T>& g, Var x);

template <typename T>
Var sigmoid(Graph<T>& g, Var x);

template <typename T>
Var mul(Graph<T>& g, Var a, Var b);

template <typename T>
Var add(Graph<T>& g, const std::vector<Var>& terms);

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts);

/// Mean per-pixel two-class softmax cross-entropy. `target` holds {0,1} with
/// shape 1 x H x W matching the 2 x H x W logits.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& target);

/// sum_i weights[i] * scalars[i].
template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<T>& weights);

}  // namespace ops

// Tensor-level kernels behind the graph operators, usable without a graph.
namespace tensor_ops {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvGeometry& geom, Activation act = Activation::none);

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   Activation act = Activation::none);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

}  // namespace tensor_ops

}  // namespace cmwnet
