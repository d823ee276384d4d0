#include "cmwnet/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "cmwnet/binding.hpp"
#include "cmwnet/errors.hpp"
#include "cmwnet/network.hpp"
#include "cmwnet/serialize.hpp"

namespace cmwnet::trainer {

void TrainConfig::validate() const {
  if (!std::isfinite(lr) || lr < 0) throw ConfigError("lr must be finite and >= 0");
  if (batch_size < 1 || iter_size < 1) throw ConfigError("batch_size and iter_size must be >= 1");
  if (!std::isfinite(momentum) || momentum < 0 || momentum >= 1) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (!std::isfinite(weight_decay) || weight_decay < 0) {
    throw ConfigError("weight_decay must be finite and >= 0");
  }
  if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
  if (lr_drop_at >= total_iters) throw ConfigError("lr_drop_at must be below total_iters");
  if (!std::isfinite(lr_drop_factor) || lr_drop_factor <= 0) {
    throw ConfigError("lr_drop_factor must be positive");
  }
}

json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"iter_size", c.iter_size},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"total_iters", c.total_iters},
              {"lr_drop_at", c.lr_drop_at},
              {"lr_drop_factor", c.lr_drop_factor},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") {
        c.lr = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "iter_size") {
        c.iter_size = value.get<std::size_t>();
      } else if (key == "momentum") {
        c.momentum = value.get<double>();
      } else if (key == "weight_decay") {
        c.weight_decay = value.get<double>();
      } else if (key == "total_iters") {
        c.total_iters = value.get<std::size_t>();
      } else if (key == "lr_drop_at") {
        c.lr_drop_at = value.get<std::size_t>();
      } else if (key == "lr_drop_factor") {
        c.lr_drop_factor = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown train config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  std::array<bool, 4> active{};
  if (!log.empty()) active = log.front().active;
  os << "iter,lr,loss";
  for (int t = 0; t < 4; ++t) {
    if (active[t]) os << ",loss_s" << t + 1;
  }
  os << '\n';
  for (const auto& r : log) {
    os << r.iter << ',' << r.lr << ',' << r.loss;
    for (int t = 0; t < 4; ++t) {
      if (active[t]) os << ',' << r.terms[t];
    }
    os << '\n';
  }
  return os.str();
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t n, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix(seed) ^ mix(epoch + 0x5eed));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename T>
void check_finite(const Graph<T>& g, const loss::LossTerms& terms, const std::string& where) {
  for (int t = 0; t < 4; ++t) {
    if (!terms.terms[t].valid()) continue;
    const double v = static_cast<double>(g.value(terms.terms[t])[0]);
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite loss term S" + std::to_string(t + 1) + " (" +
                           std::to_string(v) + ") " + where);
    }
  }
  const double total = static_cast<double>(g.value(terms.total)[0]);
  if (!std::isfinite(total)) throw NumericalError("non-finite total loss " + where);
}

// Runs one sample and adds its gradients into `acc`.
template <typename T>
LossRecord accumulate_sample(const ParameterStore<T>& params, const NetworkConfig& net,
                             const AblationSpec& ablation, const loss::LossConfig& loss_config,
                             const RGBDTriplet& item, std::map<std::string, Tensor<T>>& acc,
                             const std::string& where) {
  if (!item.has_gt()) throw DataError("training item " + item.id + " has no ground truth");
  Graph<T> g(true);
  Binding<T> b(g, params, net, ablation);
  Var rgb = g.constant(item.rgb.cast<T>());
  Var depth = ablation.use_depth ? g.constant(item.depth.cast<T>()) : Var{};
  const ForwardPass pass = forward(b, rgb, depth);
  const auto gt = loss::scale_ground_truth(item.gt, net);
  const auto terms = loss::total_loss(g, pass.dec.predictions, gt, loss_config, ablation);
  check_finite(g, terms, where + " on item " + item.id);
  g.backward(terms.total);
  g.for_each_parameter_grad([&](const std::string& name, const Tensor<T>& grad) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, grad);
    } else {
      T* dst = it->second.data();
      const T* src = grad.data();
      for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
    }
  });
  LossRecord r;
  r.loss = static_cast<double>(g.value(terms.total)[0]);
  for (int t = 0; t < 4; ++t) {
    r.active[t] = terms.terms[t].valid();
    if (r.active[t]) r.terms[t] = static_cast<double>(g.value(terms.terms[t])[0]);
  }
  return r;
}

}  // namespace

std::size_t sample_index(std::uint64_t seed, std::size_t dataset_size, std::size_t s) {
  if (dataset_size == 0) throw DataError("empty dataset");
  return epoch_order(seed, dataset_size, s / dataset_size)[s % dataset_size];
}

template <typename T>
void sgd_step(TrainState<T>& state, const std::map<std::string, Tensor<T>>& grads, double lr,
              double momentum, double weight_decay) {
  const T m = static_cast<T>(momentum), rate = static_cast<T>(lr);
  for (auto& [name, theta] : state.params.tensors()) {
    const bool decay = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    const T wd = decay ? static_cast<T>(weight_decay) : T(0);
    auto vit = state.momentum.find(name);
    if (vit == state.momentum.end()) {
      vit = state.momentum.emplace(name, Tensor<T>(theta.shape())).first;
    }
    T* v = vit->second.data();
    T* p = theta.data();
    auto git = grads.find(name);
    const T* g = git == grads.end() ? nullptr : git->second.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T gi = g ? g[i] : T(0);
      v[i] = m * v[i] + (gi + wd * p[i]);
      p[i] -= rate * v[i];
    }
  }
}

template <typename T>
SampleGradient<T> sample_gradient(const ParameterStore<T>& params, const NetworkConfig& net,
                                  const AblationSpec& ablation, const loss::LossConfig& loss_config,
                                  const RGBDTriplet& item) {
  SampleGradient<T> out;
  out.loss = accumulate_sample(params, net, ablation, loss_config, item, out.grads, "");
  return out;
}

template <typename T>
TrainState<T> initial_state(const NetworkConfig& net, const AblationSpec& ablation,
                            const InitOptions& init) {
  TrainState<T> s;
  s.params = init_parameters<T>(net, ablation, init);
  return s;
}

template <typename T>
TrainResult<T> train(const NetworkConfig& net, const AblationSpec& ablation,
                     const TrainConfig& config, const loss::LossConfig& loss_config,
                     const std::vector<RGBDTriplet>& dataset, TrainState<T> state,
                     const TrainHooks<T>& hooks) {
  net.validate();
  ablation.validate();
  config.validate();
  loss_config.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  for (const auto& item : dataset) {
    item.validate();
    if (item.height() != net.input_resolution || item.width() != net.input_resolution) {
      throw DataError("training item " + item.id + " is " + shape_string(item.rgb.shape()) +
                      ", expected the network resolution " + std::to_string(net.input_resolution));
    }
  }
  TrainResult<T> result;
  const std::size_t per_update = config.samples_per_update();
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  for (std::size_t t = state.iteration + 1; t <= config.total_iters; ++t) {
    std::map<std::string, Tensor<T>> acc;
    LossRecord rec;
    rec.iter = t;
    rec.lr = config.lr_at(t);
    for (std::size_t j = 0; j < per_update; ++j) {
      const std::size_t s = (t - 1) * per_update + j;
      const std::size_t epoch = s / dataset.size();
      if (epoch != cached_epoch) {
        order = epoch_order(config.seed, dataset.size(), epoch);
        cached_epoch = epoch;
      }
      const auto& item = dataset[order[s % dataset.size()]];
      const LossRecord r = accumulate_sample(state.params, net, ablation, loss_config, item, acc,
                                             "at update " + std::to_string(t));
      rec.loss += r.loss;
      rec.active = r.active;
      for (int k = 0; k < 4; ++k) rec.terms[k] += r.terms[k];
    }
    const double inv = 1.0 / static_cast<double>(per_update);
    rec.loss *= inv;
    for (double& v : rec.terms) v *= inv;
    const T scale = static_cast<T>(inv);
    for (auto& [_, g] : acc) {
      for (T& v : g.values()) v *= scale;
    }
    sgd_step(state, acc, rec.lr, config.momentum, config.weight_decay);
    state.iteration = t;
    result.log.push_back(rec);
    if (hooks.on_update) hooks.on_update(rec);
    if (hooks.on_checkpoint && hooks.checkpoint_every && t % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  result.state = std::move(state);
  return result;
}

// ---- checkpoints ----

namespace {

constexpr std::string_view kMomentumPrefix = "momentum/";

json meta_json(const CheckpointMeta& m, std::size_t element_bytes) {
  const json net = to_json(m.network), abl = to_json(m.ablation), tr = to_json(m.train),
             ls = loss::to_json(m.loss);
  return json{{"format", "cmwnet-checkpoint"},
              {"iteration", m.iteration},
              {"element_bytes", element_bytes},
              {"network", net},
              {"ablation", abl},
              {"train", tr},
              {"loss", ls},
              {"hashes",
               {{"network", hex64(config_hash(net))},
                {"ablation", hex64(config_hash(abl))},
                {"train", hex64(config_hash(tr))},
                {"loss", hex64(config_hash(ls))}}}};
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& state,
                     const CheckpointMeta& meta) {
  CheckpointMeta m = meta;
  m.iteration = state.iteration;
  std::map<std::string, Tensor<T>> tensors = state.params.tensors();
  for (const auto& [name, v] : state.momentum) tensors.emplace(std::string(kMomentumPrefix) + name, v);
  write_tensor_file<T>(path, kCheckpointMagic, meta_json(m, sizeof(T)), tensors);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::size_t bytes = 0;
  const json h = read_tensor_file_header(path, kCheckpointMagic, &bytes);
  CheckpointMeta m;
  try {
    m.network = network_config_from_json(h.at("network"));
    m.ablation = ablation_from_json(h.at("ablation"));
    m.train = train_config_from_json(h.at("train"));
    m.loss = loss::loss_config_from_json(h.at("loss"));
    m.iteration = h.at("iteration").get<std::size_t>();
    const json& hashes = h.at("hashes");
    const std::pair<const char*, json> parts[] = {{"network", to_json(m.network)},
                                                   {"ablation", to_json(m.ablation)},
                                                   {"train", to_json(m.train)},
                                                   {"loss", loss::to_json(m.loss)}};
    for (const auto& [key, j] : parts) {
      if (hashes.at(key).get<std::string>() != hex64(config_hash(j))) {
        throw ConfigError(std::string("checkpoint ") + path.string() + ": " + key +
                          " config does not match its recorded hash");
      }
    }
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  m.element_bytes = bytes;
  return m;
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  TensorFile<T> file = read_tensor_file<T>(path, kCheckpointMagic);
  TrainState<T> s;
  s.iteration = meta.iteration;
  for (auto& [name, v] : file.tensors) {
    if (name.rfind(kMomentumPrefix, 0) == 0) {
      s.momentum.emplace(name.substr(kMomentumPrefix.size()), std::move(v));
    } else {
      s.params.insert(name, std::move(v), "checkpoint");
    }
  }
  for (const auto& layer : arch::layers(meta.network, meta.ablation)) {
    for (const auto& key : {layer.weight_name(), layer.bias_name()}) {
      if (!s.params.contains(key)) {
        throw ConfigError("checkpoint " + path.string() + " lacks parameter " + key);
      }
    }
    if (s.params.at(layer.weight_name()).shape() != layer.weight_shape()) {
      throw ConfigError("checkpoint parameter " + layer.weight_name() + " has the wrong shape");
    }
  }
  if (meta_out) *meta_out = meta;
  return s;
}

// ---- ablation grid ----

template <typename T>
std::vector<GridRow> run_ablation_grid(const std::vector<std::string>& variants,
                                       const NetworkConfig& net, const TrainConfig& config,
                                       const loss::LossConfig& loss_config,
                                       const std::vector<RGBDTriplet>& dataset,
                                       const std::vector<RGBDTriplet>& eval,
                                       const std::function<void(const std::string&)>& progress) {
  std::vector<GridRow> rows;
  for (const auto& v : variants) {
    GridRow r;
    r.variant = v;
    r.ablation = ablation_from_name(v);
    r.ablation.validate();
    r.parameters = parameter_count(net, r.ablation);
    rows.push_back(std::move(r));
  }
  const auto& eval_set = eval.empty() ? dataset : eval;
  for (auto& row : rows) {
    if (progress) progress(row.variant);
    auto result = train<T>(net, row.ablation, config, loss_config, dataset,
                           initial_state<T>(net, row.ablation));
    row.initial_loss = result.log.front().loss;
    row.final_loss = result.log.back().loss;
    std::vector<metrics::ImageScores> scores;
    for (const auto& item : eval_set) {
      const SaliencyMap s =
          predict_saliency<T>(result.state.params, net, row.ablation, item.rgb, item.depth);
      SaliencyMap g({item.gt.height(), item.gt.width()});
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = item.gt[i];
      scores.push_back(metrics::evaluate_image(s, g, item.id));
    }
    row.report = metrics::aggregate(std::move(scores));
  }
  return rows;
}

std::string grid_table(const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "| variant | params | final loss | S | maxF | wF | maxE | MAE |\n";
  os << "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << "| " << r.variant << " | " << r.parameters << " | " << std::setprecision(4)
       << r.final_loss << " | " << std::setprecision(3) << r.report.s_measure << " | "
       << r.report.max_f << " | " << r.report.weighted_f << " | " << r.report.max_e << " | "
       << r.report.mae << " |\n";
  }
  return os.str();
}

json grid_json(const std::vector<GridRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json scores = metrics::report_json(r.report);
    out.push_back({{"variant", r.variant},
                   {"ablation", to_json(r.ablation)},
                   {"parameters", r.parameters},
                   {"initial_loss", r.initial_loss},
                   {"final_loss", r.final_loss},
                   {"scores", scores}});
  }
  return out;
}

#define CMWNET_INSTANTIATE(T)                                                                   \
  template void sgd_step<T>(TrainState<T>&, const std::map<std::string, Tensor<T>>&, double,    \
                            double, double);                                                    \
  template SampleGradient<T> sample_gradient<T>(const ParameterStore<T>&, const NetworkConfig&, \
                                                const AblationSpec&, const loss::LossConfig&,   \
                                                const RGBDTriplet&);                            \
  template TrainState<T> initial_state<T>(const NetworkConfig&, const AblationSpec&,            \
                                          const InitOptions&);                                  \
  template TrainResult<T> train<T>(const NetworkConfig&, const AblationSpec&,                   \
                                   const TrainConfig&, const loss::LossConfig&,                 \
                                   const std::vector<RGBDTriplet>&, TrainState<T>,              \
                                   const TrainHooks<T>&);                                          \
  template void save_checkpoint<T>(const std::filesystem::path&, const TrainState<T>&,          \
                                   const CheckpointMeta&);                                      \
  template TrainState<T> load_checkpoint<T>(const std::filesystem::path&, CheckpointMeta*);     \
  template std::vector<GridRow> run_ablation_grid<T>(                                           \
      const std::vector<std::string>&, const NetworkConfig&, const TrainConfig&,                \
      const loss::LossConfig&, const std::vector<RGBDTriplet>&,                                 \
      const std::vector<RGBDTriplet>&, const std::function<void(const std::string&)>&);
CMWNET_INSTANTIATE(float)
CMWNET_INSTANTIATE(double)
#undef CMWNET_INSTANTIATE

}  // namespace cmwnet::trainer
