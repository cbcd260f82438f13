#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "liftuq/container.hpp"
#include "liftuq/rng.hpp"
#include "liftuq/spectral.hpp"
#include "liftuq/tensor_field.hpp"

namespace liftuq {

enum class Activation { Gelu, Relu, Tanh, Identity };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

struct OperatorConfig {
  int d_a = 3;   // coefficient + (x, y)
  int d_v = 32;
  int d_u = 1;
  int layers = 4;
  int k_max = 8;
  Activation activation = Activation::Gelu;

  void validate() const;
  /// Additionally checks k_max against the grid's Nyquist bound.
  void validate(const Grid2D& grid) const;
  friend bool operator==(const OperatorConfig&, const OperatorConfig&) = default;
};

/// Parameters of one propagation layer.
/// R holds complex spectral weights as [mode][re|im][in][out] with modes
/// ordered as in SpectralPlan; W is [in][out]; b is [out].
struct PropagationLayer {
  std::vector<double> R;
  std::vector<double> W;
  std::vector<double> b;

  friend bool operator==(const PropagationLayer&, const PropagationLayer&) = default;
};

enum class Module { Lifting, Propagation, Recovery };

/// Mutable view of one parameter tensor with its checkpoint name.
struct ParamRef {
  std::string name;
  Module module;
  std::vector<std::size_t> shape;
  std::span<double> values;
};
struct ConstParamRef {
  std::string name;
  Module module;
  std::vector<std::size_t> shape;
  std::span<const double> values;
};

/// (theta_P, theta_M, theta_Q): lifting W_P [d_a][d_v], b_P; L propagation
/// layers; recovery W_Q [d_v][d_u], b_Q.
struct OperatorParams {
  OperatorConfig config;
  std::vector<double> W_P, b_P;
  std::vector<PropagationLayer> layers;
  std::vector<double> W_Q, b_Q;

  /// Zero-filled parameters with shapes from `config`.
  static OperatorParams zeros(const OperatorConfig& config);
  /// Spectral weights complex normal with std 1/(d_v k_max) per part;
  /// pointwise weights and biases uniform in +-1/sqrt(fan_in).
  static OperatorParams initialize(const OperatorConfig& config, RngStream& rng);

  /// Every tensor in canonical order: W_P, b_P, R_0, W_0, b_0, ..., W_Q, b_Q.
  std::vector<ParamRef> tensors();
  std::vector<ConstParamRef> tensors() const;
  std::size_t total_count() const;

  friend bool operator==(const OperatorParams&, const OperatorParams&) = default;
};

/// Elementwise inverted-dropout masks for the naive MC-Dropout baseline:
/// one mask before every linear map (lifting, each spectral and pointwise
/// path, recovery). Entries are 0 or 1/(1-p).
struct DropoutMasks {
  std::vector<double> input;                 // N x d_a
  std::vector<std::vector<double>> spectral;  // per layer, N x d_v
  std::vector<std::vector<double>> pointwise; // per layer, N x d_v
  std::vector<double> recovery;               // N x d_v
};

DropoutMasks sample_dropout_masks(RngStream& rng, const OperatorConfig& config, const Grid2D& grid,
                                  double p);

/// V0 = A W_P + b_P, optionally scaled per output column: with a column scale
/// s the map is A (W_P Diag(s)) + b_P Diag(s), evaluated as (A W_P + b_P) s.
Field lift(const Field& A, const OperatorParams& params, std::span<const double> column_scale = {});

/// Hook applied to latent states: called with the state index (0 = lifted
/// features V_0, l = output of propagation layer l, L = recovery input) and
/// the state, which it may modify in place.
using StateHook = std::function<void(int state, Field& v)>;

/// Applies the L propagation layers: v <- act(W v + b + K(v)), no activation
/// after the last layer. `hook`, if set, runs on states 1..L.
Field propagate(const Field& V0, const OperatorParams& params, const StateHook& hook = {});

Field recover(const Field& VL, const OperatorParams& params);

struct ForwardOptions {
  std::span<const double> lift_column_scale;
  const DropoutMasks* masks = nullptr;
  StateHook hook;  // states 0..L
};

/// Q(M(P(A))).
Field forward(const Field& A, const OperatorParams& params, const ForwardOptions& options = {});

/// Intermediate values of one forward pass kept for the reverse sweep.
struct ForwardTape {
  Field input;                     // A after any input mask
  std::vector<Field> states;       // V_0..V_L
  std::vector<Field> act_slope;    // activation derivative at each layer's pre-activation
  std::vector<RowMatrix> spec_re;  // spectrum of the spectral-path input per layer
  std::vector<RowMatrix> spec_im;
  Field output;
  const DropoutMasks* masks = nullptr;
};

ForwardTape record_forward(const Field& A, const OperatorParams& params,
                           const DropoutMasks* masks = nullptr);

/// Spectral-path quantities whose outer products give the gradient of R_l:
/// per layer, the input spectrum and the output-spectrum adjoint.
struct SpectralGradTerms {
  std::vector<RowMatrix> in_re, in_im, dout_re, dout_im;
};

/// Reverse sweep: overwrites every tensor of `grads` (which must be shaped
/// like `params`) with d(loss)/d(params) given d(loss)/d(output).
///
/// With `deferred` set, the spectral weight gradients are not formed;
/// the terms are stored instead so a batch can reduce them with one GEMM
/// per mode (see accumulate_spectral_grads), and grads.layers[l].R may be
/// empty.
void backward_pass(const ForwardTape& tape, const Field& d_output, const OperatorParams& params,
                   OperatorParams& grads, SpectralGradTerms* deferred = nullptr);

/// Overwrites grads.layers[l].R with the sum over `terms` (in order) of
/// each sample's spectral weight gradient.
void accumulate_spectral_grads(const std::vector<SpectralGradTerms>& terms,
                               const OperatorConfig& config, OperatorParams& grads);

struct ParamCensus {
  std::size_t lifting = 0;
  std::size_t propagation = 0;
  std::size_t recovery = 0;
  std::size_t total() const { return lifting + propagation + recovery; }
  double lifting_fraction() const { return static_cast<double>(lifting) / total(); }
  double propagation_fraction() const { return static_cast<double>(propagation) / total(); }
  double recovery_fraction() const { return static_cast<double>(recovery) / total(); }
};

/// Real scalar counts per module; complex spectral weights count twice.
ParamCensus param_census(const OperatorParams& params);

inline constexpr int kCheckpointVersion = 1;

DatasetContainer checkpoint_container(const OperatorParams& params);
OperatorParams params_from_container(const DatasetContainer& c);
void save_checkpoint(const OperatorParams& params, const std::filesystem::path& dir);
OperatorParams load_checkpoint(const std::filesystem::path& dir);
/// Loads and throws ConfigError unless the stored config equals `expected`.
OperatorParams load_checkpoint(const std::filesystem::path& dir, const OperatorConfig& expected);

void write_config_meta(DatasetContainer& c, const OperatorConfig& config);
OperatorConfig read_config_meta(const DatasetContainer& c);

}  // namespace liftuq
