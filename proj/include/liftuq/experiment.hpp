#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "liftuq/calibmetrics.hpp"
#include "liftuq/darcy.hpp"
#include "liftuq/render.hpp"
#include "liftuq/train.hpp"
#include "liftuq/uq.hpp"

namespace liftuq {

inline constexpr int kExperimentSchemaVersion = 1;

struct DataConfig {
  int n_train = 200;
  int n_cal = 50;
  int n_test = 50;
  CoefficientConfig coefficient;
  double solver_tol = kDefaultSolverTol;
};

struct SweepConfig {
  std::vector<double> p = {0.1, 0.3, 0.5, 0.7, 0.9, 0.95};
  std::vector<int> T = {5, 20, 100};
  std::vector<UqMethod> methods = {UqMethod::LiftDropout, UqMethod::NaiveMcDropout};
  std::vector<Site> sites = {Site::Lift};
  /// (p, T) at which the shared Method A/B scale is fitted.
  double reference_p = 0.3;
  int reference_T = 20;
};

/// Everything one experiment needs, read from a JSON file with a
/// "schema_version" key. Missing keys take the defaults below; unknown keys
/// are errors.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  Grid2D grid{33, 33};
  DataConfig data;
  OperatorConfig op;
  TrainConfig train;
  /// Dropout rate used to train the naive MC-Dropout baseline model.
  double mcdropout_train_p = 0.3;
  int ensemble_size = 5;
  std::vector<UqConfig> uq = {UqConfig{}};
  double target_coverage = 0.95;
  SweepConfig sweep;
  std::filesystem::path output_dir = "liftuq_out";

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved config (defaults included) as pretty-printed JSON.
std::string experiment_config_json(const ExperimentConfig& cfg);

/// Independent seeds per purpose derived from the experiment seed.
enum class SeedPurpose : std::uint64_t { Data = 1, TrainMain = 2, TrainMcDropout = 3, Uq = 4, Ensemble = 5 };
std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose, std::uint64_t index = 0);

enum class ModelKind { Main, McDropout, Ensemble };

/// Output layout under cfg.output_dir.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path split(const std::string& name) const { return root / "data" / name; }
  std::filesystem::path model(ModelKind kind, int member = 0) const;
  std::filesystem::path uq(const std::string& tag) const { return root / "uq" / tag; }
  std::filesystem::path sweep_csv() const { return root / "sweep.csv"; }
};

void cmd_gen_data(const ExperimentConfig& cfg);

struct TrainCommand {
  ModelKind kind = ModelKind::Main;
  /// Ensemble only: number of members.
  int members = 0;
  bool resume = false;
  bool verbose = false;
};

struct TrainSummary {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<double> best_eval;
  std::vector<double> test_rel_l2;
};

TrainSummary cmd_train(const ExperimentConfig& cfg, const TrainCommand& cmd);

/// Calibration plus test evaluation of one UQ configuration.
struct UqEvaluation {
  UqConfig uq;
  CalibrationResult calibration;
  bool shared_k = false;
  MetricsRow row;
  double mean_rel_l2 = 0.0;
  std::string degenerate_reason;
  std::vector<McPrediction> test_predictions;
};

/// Fits k on the calibration pairs (unless `fixed_k` is given) and evaluates
/// on the test pairs. Case i of split s draws from
/// RngStream(uq.seed).fork(s).fork(i).
UqEvaluation evaluate_uq(const std::vector<OperatorParams>& members,
                         const std::vector<TrainingPair>& cal, const std::vector<TrainingPair>& test,
                         const UqConfig& uq, double target, const std::vector<double>& normalization,
                         std::optional<double> fixed_k = std::nullopt);

/// Default output tag for a UQ configuration, e.g. "lift_dropout_lift_p0.3_T20".
std::string uq_tag(const UqConfig& uq);

struct UqCommand {
  UqConfig uq;
  double target = 0.95;
  int ensemble_members = 5;
  std::optional<std::string> tag;
};

/// Writes predictions/ (mean, sigma, band per test case), metrics.csv and
/// calibration.json under the UQ output directory and returns the result.
UqEvaluation cmd_uq(const ExperimentConfig& cfg, const UqCommand& cmd);

struct SweepRow {
  MetricsRow metrics;
  std::optional<double> shared_k;
  double mean_rel_l2 = 0.0;
  std::string degenerate_reason;
  std::string status = "ok";
};

inline constexpr const char* kSweepExtraHeader = ",shared_k,mean_rel_l2,degenerate,status";

/// One row per (method, site, p, T) in that nested order. Lift-site rows of
/// the lift methods reuse one k fitted at the reference (p, T); every other
/// row is calibrated on its own. A failing cell is reported in its row and
/// the sweep continues.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

struct RenderCommand {
  std::filesystem::path predictions;  // a UQ output directory
  std::filesystem::path truth;        // a dataset split container
  FieldSelector field = FieldSelector::Residual;
  int case_index = 0;
  ColorRange range;
  std::filesystem::path image;
};

void cmd_render(const RenderCommand& cmd);

/// Loaded data splits as training pairs.
std::vector<TrainingPair> load_pairs(const std::filesystem::path& split_dir);

}  // namespace liftuq
