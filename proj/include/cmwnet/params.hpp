#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cmwnet/architecture.hpp"
#include "cmwnet/config.hpp"
#include "cmwnet/tensor.hpp"

namespace cmwnet {

/// Named kernels and biases keyed by module path ("encoder.conv2_1.weight").
/// std::map keeps iteration order and element addresses stable.
template <typename T>
class ParameterStore {
 public:
  void insert(std::string name, Tensor<T> value, std::string init_tag);

  bool contains(std::string_view name) const { return tensors_.find(std::string(name)) != tensors_.end(); }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  const std::string& init_tag(const std::string& name) const;

  std::map<std::string, Tensor<T>>& tensors() { return tensors_; }
  const std::map<std::string, Tensor<T>>& tensors() const { return tensors_; }
  std::vector<std::string> keys() const;

  std::size_t parameter_count() const;
  /// Count of parameters whose key starts with `prefix`.
  std::size_t parameter_count(std::string_view prefix) const;

  bool operator==(const ParameterStore& o) const { return tensors_ == o.tensors_; }

 private:
  std::map<std::string, Tensor<T>> tensors_;
  std::map<std::string, std::string> init_record_;
};

enum class InitSource { random, vgg16_file };

struct InitOptions {
  InitSource source = InitSource::random;
  std::string vgg16_path;
  // Use random backbone weights when the VGG16 file is missing.
  bool random_fallback = false;
};

/// Deterministic initialization: every tensor is drawn from its own stream
/// seeded by (config.seed, tensor name), so the result depends only on the
/// config, the ablation, and the seed.
///  - depth conv1_1 kernel ~ N(0, 0.01^2)
///  - backbone kernels: VGG16 weights from file, or He-normal when random
///  - all other kernels: Xavier (uniform, variance 1/fan_in)
///  - biases: zero (or VGG16 biases)
template <typename T>
ParameterStore<T> init_parameters(const NetworkConfig& config, const AblationSpec& ablation,
                                  const InitOptions& options = {});

/// Closed set of shapes for a build, without allocating values.
std::size_t parameter_count(const NetworkConfig& config, const AblationSpec& ablation);

}  // namespace cmwnet
