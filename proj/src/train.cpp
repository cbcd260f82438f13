#include "liftuq/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "liftuq/parallel.hpp"
#include "liftuq/text.hpp"

namespace liftuq {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !(final_learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
}

std::vector<TrainingPair> make_training_pairs(const std::vector<DarcySample>& samples) {
  std::vector<TrainingPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({with_positional_encoding(s.a), s.u});
  return out;
}

double relative_l2_loss(const Field& pred, const Field& truth) {
  if (!pred.same_shape(truth)) throw ConfigError("relative_l2_loss: shape mismatch");
  const double denom = frobenius_norm(truth);
  if (!(denom > 0.0)) throw ConfigError("relative_l2_loss: truth has zero norm");
  return frobenius_norm(subtract(pred, truth)) / denom;
}

namespace {

void add_into(OperatorParams& total, const OperatorParams& part) {
  auto dst = total.tensors();
  const auto src = part.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    auto d = dst[t].values;
    auto s = src[t].values;
    if (s.empty()) continue;  // deferred spectral weights
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
}

void copy_into(OperatorParams& dst_params, const OperatorParams& src_params) {
  auto dst = dst_params.tensors();
  const auto src = src_params.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    std::copy(src[t].values.begin(), src[t].values.end(), dst[t].values.begin());
  }
}

}  // namespace

LossAndGradient backward(const std::vector<const TrainingPair*>& batch, const OperatorParams& params,
                         const std::vector<DropoutMasks>& masks) {
  if (batch.empty()) throw ConfigError("backward: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) {
    throw ConfigError("backward: need one mask set per sample");
  }
  const std::size_t m = batch.size();
  const std::size_t slots = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), m);
  OperatorParams small = OperatorParams::zeros(params.config);
  for (auto& layer : small.layers) layer.R.clear();
  std::vector<OperatorParams> slot_grads(slots, small);
  std::vector<double> slot_loss(slots, 0.0);
  std::vector<SpectralGradTerms> terms(m);

  LossAndGradient out;
  out.grads = OperatorParams::zeros(params.config);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t wave = 0; wave < m; wave += slots) {
    const std::size_t count = std::min(slots, m - wave);
    parallel_for(count, [&](std::size_t j) {
      const std::size_t i = wave + j;
      const TrainingPair& pair = *batch[i];
      const ForwardTape tape = record_forward(pair.input, params, masks.empty() ? nullptr : &masks[i]);
      const double nu = frobenius_norm(pair.target);
      if (!(nu > 0.0)) throw ConfigError("backward: target with zero norm");
      Field d = subtract(tape.output, pair.target);
      const double nr = frobenius_norm(d);
      slot_loss[j] = nr / nu;
      const double g = nr > 0.0 ? scale / (nr * nu) : 0.0;
      for (double& x : d.values()) x *= g;
      backward_pass(tape, d, params, slot_grads[j], &terms[i]);
    });
    for (std::size_t j = 0; j < count; ++j) {
      out.loss += slot_loss[j];
      add_into(out.grads, slot_grads[j]);
    }
  }
  accumulate_spectral_grads(terms, params.config, out.grads);
  out.loss *= scale;
  return out;
}

AdamState AdamState::zeros(const OperatorConfig& config) {
  return AdamState{OperatorParams::zeros(config), OperatorParams::zeros(config), 0};
}

void adam_step(OperatorParams& params, const OperatorParams& grads, AdamState& state,
               const TrainConfig& cfg, double lr) {
  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 / (1.0 - std::pow(b1, static_cast<double>(state.step)));
  const double c2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(state.step)));
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto pv = p[t].values;
    auto gv = g[t].values;
    auto mv = m[t].values;
    auto vv = v[t].values;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1 * mv[i] + (1.0 - b1) * gv[i];
      vv[i] = b2 * vv[i] + (1.0 - b2) * gv[i] * gv[i];
      pv[i] -= lr * (mv[i] * c1) / (std::sqrt(vv[i] * c2) + cfg.adam_eps);
    }
  }
}

double scheduled_learning_rate(const TrainConfig& cfg, long long step, long long total_steps) {
  if (total_steps <= 1) return cfg.learning_rate;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return cfg.final_learning_rate +
         0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

double evaluate_rel_l2(const std::vector<TrainingPair>& pairs, const OperatorParams& params) {
  if (pairs.empty()) throw ConfigError("evaluate_rel_l2: empty set");
  std::vector<double> losses(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    losses[i] = relative_l2_loss(forward(pairs[i].input, params), pairs[i].target);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(pairs.size());
}

TrainResult train(const std::vector<TrainingPair>& train_set,
                  const std::vector<TrainingPair>& eval_set, const OperatorConfig& op_cfg,
                  const TrainConfig& cfg, const TrainState* resume, const EpochCallback& on_epoch) {
  cfg.validate();
  op_cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training split");
  const Grid2D grid = train_set.front().input.grid();
  op_cfg.validate(grid);

  const RngStream root(cfg.seed);
  TrainState st;
  if (resume) {
    if (!(resume->params.config == op_cfg)) throw ConfigError("train: resume state has a different operator config");
    st = *resume;
  } else {
    RngStream init = root.fork(0);
    st.params = OperatorParams::initialize(op_cfg, init);
    st.adam = AdamState::zeros(op_cfg);
    st.best = st.params;
    st.best_eval = std::numeric_limits<double>::infinity();
  }

  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const long long steps_per_epoch = static_cast<long long>((n + bs - 1) / bs);
  const long long total_steps = steps_per_epoch * cfg.epochs;

  for (int epoch = st.epochs_completed; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = root.fork(1).fork(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const long long step = static_cast<long long>(epoch) * steps_per_epoch +
                             static_cast<long long>(start / bs);
      std::vector<const TrainingPair*> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(&train_set[order[i]]);
      std::vector<DropoutMasks> masks;
      if (cfg.dropout_p > 0.0) {
        const RngStream step_rng = root.fork(2).fork(static_cast<std::uint64_t>(step));
        for (std::size_t j = 0; j < batch.size(); ++j) {
          RngStream r = step_rng.fork(j);
          masks.push_back(sample_dropout_masks(r, op_cfg, grid, cfg.dropout_p));
        }
      }
      LossAndGradient lg = backward(batch, st.params, masks);
      if (!std::isfinite(lg.loss) || lg.loss > 1e3) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                   " (batch loss " + format_double(lg.loss) + ")",
                               st.history);
      }
      adam_step(st.params, lg.grads, st.adam, cfg, scheduled_learning_rate(cfg, step, total_steps));
      epoch_loss += lg.loss * static_cast<double>(batch.size());
    }

    HistoryRow row;
    row.epoch = epoch + 1;
    row.train_rel_l2 = epoch_loss / static_cast<double>(n);
    const bool eval_now = !eval_set.empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
    if (eval_now) {
      row.eval_rel_l2 = evaluate_rel_l2(eval_set, st.params);
      if (*row.eval_rel_l2 < st.best_eval) {
        st.best_eval = *row.eval_rel_l2;
        copy_into(st.best, st.params);
      }
    } else if (eval_set.empty()) {
      copy_into(st.best, st.params);
    }
    st.history.push_back(row);
    st.epochs_completed = epoch + 1;
    if (on_epoch && !on_epoch(st)) break;
  }

  TrainResult result;
  result.best = st.best;
  result.best_eval = st.best_eval;
  result.history = st.history;
  result.state = std::move(st);
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_rel_l2,eval_rel_l2\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_double(r.train_rel_l2) << ',';
    if (r.eval_rel_l2) out << format_double(*r.eval_rel_l2);
    out << '\n';
  }
}

namespace {

void add_prefixed(DatasetContainer& c, const std::string& prefix, const OperatorParams& p) {
  for (const auto& t : p.tensors()) {
    c.add(Tensor{prefix + t.name, t.shape, std::vector<double>(t.values.begin(), t.values.end())});
  }
}

void read_prefixed(const DatasetContainer& c, const std::string& prefix, OperatorParams& p) {
  for (auto& t : p.tensors()) {
    const Tensor& stored = c.get(prefix + t.name);
    if (stored.shape != t.shape) throw IoError("train state tensor '" + stored.name + "' has wrong shape");
    std::copy(stored.data.begin(), stored.data.end(), t.values.begin());
  }
}

}  // namespace

void save_train_state(const TrainState& state, const std::filesystem::path& dir) {
  DatasetContainer c;
  c.set_meta("kind", "train_state");
  write_config_meta(c, state.params.config);
  c.set_meta("epochs_completed", std::to_string(state.epochs_completed));
  c.set_meta("adam_step", std::to_string(state.adam.step));
  c.set_meta("best_eval", format_double(state.best_eval));
  add_prefixed(c, "param.", state.params);
  add_prefixed(c, "best.", state.best);
  add_prefixed(c, "adam_m.", state.adam.m);
  add_prefixed(c, "adam_v.", state.adam.v);
  Tensor hist{"history", {state.history.size(), 3}, {}};
  for (const auto& r : state.history) {
    hist.data.push_back(r.epoch);
    hist.data.push_back(r.train_rel_l2);
    hist.data.push_back(r.eval_rel_l2.value_or(std::numeric_limits<double>::quiet_NaN()));
  }
  c.add(std::move(hist));
  write_dataset(dir, c);
}

TrainState load_train_state(const std::filesystem::path& dir) {
  const DatasetContainer c = read_dataset(dir);
  if (c.meta("kind") != "train_state") throw IoError(dir.string() + " is not a training state");
  const OperatorConfig config = read_config_meta(c);
  TrainState st;
  st.params = OperatorParams::zeros(config);
  st.best = OperatorParams::zeros(config);
  st.adam = AdamState::zeros(config);
  read_prefixed(c, "param.", st.params);
  read_prefixed(c, "best.", st.best);
  read_prefixed(c, "adam_m.", st.adam.m);
  read_prefixed(c, "adam_v.", st.adam.v);
  st.epochs_completed = static_cast<int>(parse_int(c.require_meta("epochs_completed")));
  st.adam.step = parse_int(c.require_meta("adam_step"));
  st.best_eval = parse_double(c.require_meta("best_eval"));
  const Tensor& hist = c.get("history");
  for (std::size_t r = 0; r + 2 < hist.data.size(); r += 3) {
    HistoryRow row;
    row.epoch = static_cast<int>(hist.data[r]);
    row.train_rel_l2 = hist.data[r + 1];
    if (!std::isnan(hist.data[r + 2])) row.eval_rel_l2 = hist.data[r + 2];
    st.history.push_back(row);
  }
  return st;
}

}  // namespace liftuq
