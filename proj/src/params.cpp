#include "cmwnet/params.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include "cmwnet/errors.hpp"
#include "cmwnet/serialize.hpp"

namespace cmwnet {

template <typename T>
void ParameterStore<T>::insert(std::string name, Tensor<T> value, std::string init_tag) {
  for (T v : value.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericalError("non-finite value in parameter " + name);
    }
  }
  init_record_[name] = std::move(init_tag);
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw ConfigError("duplicate parameter key " + name);
  }
}

template <typename T>
Tensor<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

template <typename T>
const std::string& ParameterStore<T>::init_tag(const std::string& name) const {
  auto it = init_record_.find(name);
  if (it == init_record_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::keys() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [k, _] : tensors_) out.push_back(k);
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [k, t] : tensors_) {
    if (std::string_view(k).substr(0, prefix.size()) == prefix) n += t.size();
  }
  return n;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream_for(std::uint64_t seed, const std::string& name) {
  return std::mt19937_64(splitmix64(seed) ^ fnv1a64(name));
}

template <typename T>
Tensor<T> gaussian(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform(std::vector<std::size_t> shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Name of the VGG16 layer backing an encoder layer ("encoder.conv1_1.rgb" -> "conv1_1").
std::string vgg_name(const std::string& layer) {
  std::string s = layer.substr(std::string("encoder.").size());
  if (auto dot = s.find('.'); dot != std::string::npos) s = s.substr(0, dot);
  return s;
}

}  // namespace

template <typename T>
ParameterStore<T> init_parameters(const NetworkConfig& config, const AblationSpec& ablation,
                                  const InitOptions& options) {
  const auto specs = arch::layers(config, ablation);

  TensorFile<T> vgg;
  bool use_vgg = false;
  if (options.source == InitSource::vgg16_file) {
    if (!options.vgg16_path.empty() && std::filesystem::exists(options.vgg16_path)) {
      vgg = read_tensor_file<T>(options.vgg16_path, kWeightsMagic);
      use_vgg = true;
    } else if (!options.random_fallback) {
      throw MissingPretrainedError("pretrained VGG16 weights not found at '" +
                                   options.vgg16_path + "'");
    }
  }

  ParameterStore<T> store;
  for (const auto& spec : specs) {
    const auto wshape = spec.weight_shape();
    const std::size_t count = Tensor<T>::count_of(wshape);
    auto rng = stream_for(config.seed, spec.weight_name());
    if (spec.group == arch::ParamGroup::depth_first) {
      store.insert(spec.weight_name(), gaussian<T>(wshape, 0.01, rng), "gaussian(0,0.01)");
      store.insert(spec.bias_name(), Tensor<T>({spec.out}), "zero");
    } else if (spec.group == arch::ParamGroup::backbone && use_vgg) {
      const std::string base = vgg_name(spec.name);
      for (const auto& [suffix, expect] :
           {std::pair{".weight", wshape}, std::pair{".bias", std::vector<std::size_t>{spec.out}}}) {
        auto it = vgg.tensors.find(base + suffix);
        if (it == vgg.tensors.end()) {
          throw DataError("VGG16 file lacks tensor " + base + suffix);
        }
        if (it->second.shape() != expect) {
          throw DataError("VGG16 tensor " + base + suffix + " has shape " +
                          shape_string(it->second.shape()) + ", expected " + shape_string(expect));
        }
        store.insert(spec.name + suffix, it->second, "vgg16");
      }
    } else if (spec.group == arch::ParamGroup::backbone) {
      const double fan_in = static_cast<double>(spec.in * spec.kernel * spec.kernel);
      store.insert(spec.weight_name(), gaussian<T>(wshape, std::sqrt(2.0 / fan_in), rng),
                   "he_normal");
      store.insert(spec.bias_name(), Tensor<T>({spec.out}), "zero");
    } else {
      // Xavier with fan_in = count / dim0, the convention of Caffe's filler.
      const double fan_in = static_cast<double>(count / wshape[0]);
      store.insert(spec.weight_name(), uniform<T>(wshape, std::sqrt(3.0 / fan_in), rng), "xavier");
      store.insert(spec.bias_name(), Tensor<T>({spec.out}), "zero");
    }
  }
  return store;
}

std::size_t parameter_count(const NetworkConfig& config, const AblationSpec& ablation) {
  std::size_t n = 0;
  for (const auto& s : arch::layers(config, ablation)) {
    n += Tensor<float>::count_of(s.weight_shape()) + s.out;
  }
  return n;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template ParameterStore<float> init_parameters<float>(const NetworkConfig&, const AblationSpec&,
                                                      const InitOptions&);
template ParameterStore<double> init_parameters<double>(const NetworkConfig&, const AblationSpec&,
                                                        const InitOptions&);

}  // namespace cmwnet
