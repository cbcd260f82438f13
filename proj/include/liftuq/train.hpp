#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "liftuq/darcy.hpp"
#include "liftuq/operator_net.hpp"

namespace liftuq {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 10;
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;  // cosine decay target
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int eval_every = 1;
  /// Elementwise dropout before every linear map while training; only the
  /// naive MC-Dropout baseline model uses a nonzero rate.
  double dropout_p = 0.0;

  void validate() const;
};

/// Operator input (coefficient plus coordinates) and target.
struct TrainingPair {
  Field input;
  Field target;
};

std::vector<TrainingPair> make_training_pairs(const std::vector<DarcySample>& samples);

/// ||pred - truth||_F / ||truth||_F. Throws ConfigError when truth is zero.
double relative_l2_loss(const Field& pred, const Field& truth);

/// Mean relative L2 over a batch and its gradient; gradients have the shape
/// of OperatorParams.
struct LossAndGradient {
  double loss = 0.0;
  OperatorParams grads;
};

/// Per-sample reverse sweeps run in parallel; per-sample gradients are summed
/// left to right in batch order, so the result does not depend on worker
/// count. `masks`, if non-empty, gives one dropout mask set per sample.
LossAndGradient backward(const std::vector<const TrainingPair*>& batch, const OperatorParams& params,
                         const std::vector<DropoutMasks>& masks = {});

struct AdamState {
  OperatorParams m;
  OperatorParams v;
  long long step = 0;

  static AdamState zeros(const OperatorConfig& config);
};

/// One bias-corrected Adam update with learning rate `lr`.
void adam_step(OperatorParams& params, const OperatorParams& grads, AdamState& state,
               const TrainConfig& cfg, double lr);

/// Cosine decay from learning_rate to final_learning_rate over total_steps.
double scheduled_learning_rate(const TrainConfig& cfg, long long step, long long total_steps);

struct HistoryRow {
  int epoch = 0;
  double train_rel_l2 = 0.0;
  std::optional<double> eval_rel_l2;
};

/// Training state saved between runs so training can resume.
struct TrainState {
  OperatorParams params;
  AdamState adam;
  int epochs_completed = 0;
  OperatorParams best;
  double best_eval = 0.0;
  std::vector<HistoryRow> history;
};

struct TrainResult {
  OperatorParams best;
  double best_eval = 0.0;
  std::vector<HistoryRow> history;
  TrainState state;
};

/// Called after every epoch with the current state; returning false stops
/// training there, leaving a state that `resume` continues exactly.
using EpochCallback = std::function<bool(const TrainState&)>;

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::vector<HistoryRow> history)
      : NumericalError(what), history_(std::move(history)) {}
  const std::vector<HistoryRow>& history() const { return history_; }

 private:
  std::vector<HistoryRow> history_;
};

/// Trains from `resume` if given (continuing its epoch counter up to
/// cfg.epochs), otherwise from a fresh initialization drawn from the seed.
/// Keeps the parameters with the lowest held-out loss. Throws
/// TrainingDiverged when a batch loss exceeds 1e3 or is non-finite.
TrainResult train(const std::vector<TrainingPair>& train_set,
                  const std::vector<TrainingPair>& eval_set, const OperatorConfig& op_cfg,
                  const TrainConfig& cfg, const TrainState* resume = nullptr,
                  const EpochCallback& on_epoch = {});

/// Mean relative L2 of the deterministic forward pass over `pairs`.
double evaluate_rel_l2(const std::vector<TrainingPair>& pairs, const OperatorParams& params);

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

void save_train_state(const TrainState& state, const std::filesystem::path& dir);
TrainState load_train_state(const std::filesystem::path& dir);

}  // namespace liftuq
