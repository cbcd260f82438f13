#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "liftuq/operator_net.hpp"
#include "liftuq/rng.hpp"
#include "liftuq/tensor_field.hpp"

namespace liftuq {

enum class UqMethod { LiftDropout, LiftGaussian, NaiveMcDropout, InputPerturbation, Ensemble };
enum class Site { Lift, Propagate, Recover, All };
/// How Method A/B reach the lifted features: by scaling the feature field, or
/// by scaling the columns of W_P and b_P.
enum class LiftRoute { FeatureMask, ColumnScaledWeights };

UqMethod parse_method(const std::string& s);
std::string method_name(UqMethod m);
Site parse_site(const std::string& s);
std::string site_name(Site s);
LiftRoute parse_lift_route(const std::string& s);
std::string lift_route_name(LiftRoute r);

struct UqConfig {
  UqMethod method = UqMethod::LiftDropout;
  Site site = Site::Lift;
  double p = 0.3;
  int T = 20;
  /// Input perturbation only: noise std relative to the coefficient's std.
  double input_noise_std = 0.05;
  std::uint64_t seed = 0;
  LiftRoute route = LiftRoute::FeatureMask;

  void validate() const;
};

struct McPrediction {
  Field mean;
  Field sigma;
  int T_used = 0;
  UqMethod method = UqMethod::LiftDropout;
  bool degenerate = false;
  std::string degenerate_reason;
};

/// Regimes where repeated passes can collapse onto each other: p >= 0.9,
/// T <= 5, or no stochasticity at all (p = 0). Returns the reason or "".
std::string degenerate_reason(double p, int T);

/// Channel multipliers for Method A (z/(1-p), z ~ Bernoulli(1-p)) or Method B
/// (1 + eps, eps ~ N(0, p/(1-p))). Both have mean 1 and variance p/(1-p).
std::vector<double> sample_channel_multipliers(UqMethod method, double p, int channels, RngStream& rng);

/// v[n, k] * multipliers[k] for every point n.
Field scale_channels(const Field& v, std::span<const double> multipliers);

Field perturb_features_dropout(const Field& V0, double p, RngStream& rng);
Field perturb_features_gaussian(const Field& V0, double p, RngStream& rng);

/// Mean and population standard deviation over T samples. Sample t is
/// produced by sampler(t); moments are accumulated as deviations from sample
/// 0 in fixed blocks combined by a fixed pairwise tree, so the result is
/// independent of worker count and sigma is exactly zero when all samples
/// coincide.
McPrediction sample_moments(int T, const std::function<Field(int t)>& sampler);

/// Methods A/B on the lifted features of V0 followed by a fixed remainder map.
McPrediction mc_predict_lifted(const Field& V0, const std::function<Field(const Field&)>& remainder,
                               const UqConfig& uq, const RngStream& base);

/// Methods A/B: samples the lifted features and pushes each sample through
/// the deterministic remainder Q o M. Sample t uses base.fork(t).
McPrediction mc_predict(const Field& A, const OperatorParams& params, const UqConfig& uq,
                        const RngStream& base);
McPrediction mc_predict(const Field& A, const OperatorParams& params, const UqConfig& uq);

/// Applies the Method A/B channel noise to the features entering the chosen
/// module(s): lift = V_0; propagate = the input of every propagation layer
/// (V_0..V_{L-1}, fresh noise per layer); recover = V_L; all = V_0..V_L.
/// Site lift reproduces mc_predict.
McPrediction apply_site_ablation(const Field& A, const OperatorParams& params, const UqConfig& uq,
                                 const RngStream& base);

/// Naive MC-Dropout: independent elementwise masks before every linear map.
McPrediction naive_mcdropout_predict(const Field& A, const OperatorParams& params, double p, int T,
                                     const RngStream& base);

/// T passes on A with i.i.d. N(0, std^2) noise added to the coefficient
/// channel only; coordinate channels stay untouched.
McPrediction input_perturbation_predict(const Field& A, const OperatorParams& params, double std_dev,
                                        int T, const RngStream& base);

/// Population mean/std over ensemble members; needs >= 2 members sharing a
/// config.
McPrediction ensemble_predict(const Field& A, std::span<const OperatorParams> members);

/// Dispatches on uq.method. `members` is used only by the ensemble method.
McPrediction predict(const Field& A, std::span<const OperatorParams> members, const UqConfig& uq,
                     const RngStream& base);

}  // namespace liftuq
