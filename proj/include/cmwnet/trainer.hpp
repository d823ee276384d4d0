#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cmwnet/config.hpp"
#include "cmwnet/loss.hpp"
#include "cmwnet/metrics.hpp"
#include "cmwnet/params.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::trainer {

struct TrainConfig {
  double lr = 1e-7;
  std::size_t batch_size = 1;
  // Accumulated forward/backward passes per parameter update.
  std::size_t iter_size = 8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Counted in parameter updates.
  std::size_t total_iters = 22500;
  std::size_t lr_drop_at = 12500;
  double lr_drop_factor = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Learning rate used by update t (1-based).
  double lr_at(std::size_t t) const { return t <= lr_drop_at ? lr : lr / lr_drop_factor; }
  std::size_t samples_per_update() const { return batch_size * iter_size; }
  bool operator==(const TrainConfig&) const = default;
};

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

template <typename T>
struct TrainState {
  ParameterStore<T> params;
  std::map<std::string, Tensor<T>> momentum;
  std::size_t iteration = 0;  // updates applied so far
};

struct LossRecord {
  std::size_t iter = 0;
  double lr = 0;
  double loss = 0;
  std::array<double, 4> terms{};
  std::array<bool, 4> active{};
};

/// CSV with columns iter, lr, loss and one loss_s<t> column per active term.
std::string loss_log_csv(const std::vector<LossRecord>& log);

/// Index of the dataset item consumed as the s-th sample (0-based) of the
/// run: epochs are independent seeded permutations, so any prefix of the
/// schedule can be recomputed without replaying it.
std::size_t sample_index(std::uint64_t seed, std::size_t dataset_size, std::size_t s);

/// v <- m v + (g + wd theta); theta <- theta - lr v. Weight decay applies
/// to kernels (".weight" keys) only.
template <typename T>
void sgd_step(TrainState<T>& state, const std::map<std::string, Tensor<T>>& grads, double lr,
              double momentum, double weight_decay);

/// Mean gradient and loss terms of one sample.
template <typename T>
struct SampleGradient {
  std::map<std::string, Tensor<T>> grads;
  LossRecord loss;
};

template <typename T>
SampleGradient<T> sample_gradient(const ParameterStore<T>& params, const NetworkConfig& net,
                                  const AblationSpec& ablation, const loss::LossConfig& loss_config,
                                  const RGBDTriplet& item);

template <typename T>
struct TrainHooks {
  // Called after every update with the record just appended.
  std::function<void(const LossRecord&)> on_update;
  // Called after update t when checkpoint_every divides t.
  std::function<void(const TrainState<T>&)> on_checkpoint;
  std::size_t checkpoint_every = 0;
};

template <typename T>
struct TrainResult {
  TrainState<T> state;
  std::vector<LossRecord> log;
};

/// Runs updates state.iteration+1 .. total_iters over `dataset` (items
/// already at the network resolution). Throws NumericalError naming the
/// offending term when a loss is not finite.
template <typename T>
TrainResult<T> train(const NetworkConfig& net, const AblationSpec& ablation,
                     const TrainConfig& config, const loss::LossConfig& loss_config,
                     const std::vector<RGBDTriplet>& dataset, TrainState<T> state,
                     const TrainHooks<T>& hooks = {});

/// Fresh state from init_parameters.
template <typename T>
TrainState<T> initial_state(const NetworkConfig& net, const AblationSpec& ablation,
                            const InitOptions& init = {});

// ---- checkpoints ----

struct CheckpointMeta {
  NetworkConfig network;
  AblationSpec ablation;
  TrainConfig train;
  loss::LossConfig loss;
  std::size_t iteration = 0;
  std::size_t element_bytes = 4;
};

/// Single container: parameters under their own names, momentum buffers
/// under "momentum/", and a JSON header with the configs and their hashes.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& state,
                     const CheckpointMeta& meta);

/// Verifies the embedded hashes against the embedded configs; throws
/// ConfigError on mismatch and DataError on unreadable files.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

// ---- ablation grid ----

struct GridRow {
  std::string variant;
  AblationSpec ablation;
  std::size_t parameters = 0;
  double initial_loss = 0;
  double final_loss = 0;
  metrics::MetricReport report;
};

/// Trains and evaluates every variant with the same seeds and data order;
/// evaluation runs on `eval` (or the training items when empty). All
/// variants are validated before any training starts.
template <typename T>
std::vector<GridRow> run_ablation_grid(const std::vector<std::string>& variants,
                                       const NetworkConfig& net, const TrainConfig& config,
                                       const loss::LossConfig& loss_config,
                                       const std::vector<RGBDTriplet>& dataset,
                                       const std::vector<RGBDTriplet>& eval = {},
                                       const std::function<void(const std::string&)>& progress = {});

/// Markdown table: variant, params, final loss, S, maxF, wF, maxE, MAE.
std::string grid_table(const std::vector<GridRow>& rows);
json grid_json(const std::vector<GridRow>& rows);

}  // namespace cmwnet::trainer
