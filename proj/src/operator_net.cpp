#include "liftuq/operator_net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "liftuq/text.hpp"

namespace liftuq {

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Gelu: return "gelu";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

void OperatorConfig::validate() const {
  if (d_a < 1 || d_v < 1 || d_u < 1) throw ConfigError("operator channel counts must be >= 1");
  if (layers < 1) throw ConfigError("operator needs at least one propagation layer");
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
}

void OperatorConfig::validate(const Grid2D& grid) const {
  validate();
  if (k_max > std::min(grid.nx(), grid.ny()) / 2) {
    throw ConfigError("k_max " + std::to_string(k_max) + " exceeds the Nyquist bound " +
                      std::to_string(std::min(grid.nx(), grid.ny()) / 2) + " of the grid");
  }
}

namespace {

std::size_t mode_count(const OperatorConfig& c) {
  return static_cast<std::size_t>(c.k_max) * (2 * c.k_max - 1);
}

// GELU uses the tanh form 0.5 x (1 + tanh(c (x + 0.044715 x^3))), which
// vectorizes through exp.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;

/// Applies the activation in place over `z`; when `slope` is non-empty it
/// receives the derivative at the original values.
void apply_activation(Activation a, std::span<double> z, std::span<double> slope) {
  using Arr = Eigen::Map<Eigen::ArrayXd>;
  Arr x(z.data(), static_cast<Eigen::Index>(z.size()));
  const bool want_slope = !slope.empty();
  switch (a) {
    case Activation::Gelu: {
      const Eigen::ArrayXd x2 = x.square();
      const Eigen::ArrayXd u = kGeluC * x * (1.0 + kGeluK * x2);
      const Eigen::ArrayXd t = 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
      if (want_slope) {
        Arr(slope.data(), x.size()) =
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluK * x2);
      }
      x = 0.5 * x * (1.0 + t);
      return;
    }
    case Activation::Relu:
      if (want_slope) Arr(slope.data(), x.size()) = (x > 0.0).cast<double>();
      x = x.max(0.0);
      return;
    case Activation::Tanh:
      x = x.tanh();
      if (want_slope) Arr(slope.data(), x.size()) = 1.0 - x.square();
      return;
    case Activation::Identity:
      if (want_slope) Arr(slope.data(), x.size()).setOnes();
      return;
  }
}

ConstRowMap as_matrix(const Field& f) {
  return ConstRowMap(f.data(), static_cast<Eigen::Index>(f.points()), f.channels());
}
RowMap as_matrix(Field& f) {
  return RowMap(f.data(), static_cast<Eigen::Index>(f.points()), f.channels());
}
ConstRowMap as_matrix(std::span<const double> v, int rows, int cols) {
  return ConstRowMap(v.data(), rows, cols);
}
RowMap as_matrix(std::span<double> v, int rows, int cols) { return RowMap(v.data(), rows, cols); }

// Plain loop: Eigen's vectorized reductions peel by pointer alignment, which
// would make bias gradients depend on which thread allocated the field.
void column_sums(const Field& f, std::vector<double>& out) {
  const auto ch = static_cast<std::size_t>(f.channels());
  std::fill(out.begin(), out.end(), 0.0);
  const auto v = f.values();
  for (std::size_t i = 0; i < v.size(); i += ch) {
    for (std::size_t k = 0; k < ch; ++k) out[k] += v[i + k];
  }
}

Field masked(const Field& v, const std::vector<double>& mask) {
  Field out = v;
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  return out;
}

void check_input(const Field& A, const OperatorConfig& c) {
  if (A.channels() != c.d_a) {
    throw ConfigError("operator input has " + std::to_string(A.channels()) + " channels, expected " +
                      std::to_string(c.d_a));
  }
  c.validate(A.grid());
}

Field affine(const Field& in, std::span<const double> W, std::span<const double> b, int out_channels) {
  Field out(in.grid(), out_channels);
  auto om = as_matrix(out);
  om.noalias() = as_matrix(in) * as_matrix(W, in.channels(), out_channels);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out_channels);
  return out;
}

/// One propagation layer. When `tape` is given, records what the reverse
/// sweep needs.
Field layer_forward(const Field& v, const OperatorParams& params, int l, const DropoutMasks* masks,
                    ForwardTape* tape) {
  const OperatorConfig& c = params.config;
  const PropagationLayer& layer = params.layers[l];
  const auto plan = SpectralPlan::get(v.grid(), c.k_max);

  const Field spec_in = masks ? masked(v, masks->spectral[l]) : Field();
  const Field pw_in = masks ? masked(v, masks->pointwise[l]) : Field();
  const Field& s_in = masks ? spec_in : v;
  const Field& p_in = masks ? pw_in : v;

  Field pre = affine(p_in, layer.W, layer.b, c.d_v);
  RowMatrix hre, him, ore, oim;
  plan->analyze(s_in.data(), c.d_v, hre, him);
  spectral_mix(layer.R, c.d_v, c.d_v, hre, him, ore, oim);
  plan->synthesize_add(ore, oim, pre.data(), c.d_v);

  Field next = std::move(pre);
  const bool last = l + 1 == c.layers;
  if (tape && !last) {
    Field slope(v.grid(), c.d_v);
    apply_activation(c.activation, next.values(), slope.values());
    tape->act_slope.push_back(std::move(slope));
  } else if (!last) {
    apply_activation(c.activation, next.values(), {});
  } else if (tape) {
    tape->act_slope.emplace_back();
  }
  if (tape) {
    tape->spec_re.push_back(std::move(hre));
    tape->spec_im.push_back(std::move(him));
  }
  return next;
}

Field run_forward(const Field& A, const OperatorParams& params, const ForwardOptions& opt,
                  ForwardTape* tape) {
  const OperatorConfig& c = params.config;
  check_input(A, c);
  const DropoutMasks* masks = opt.masks;
  Field input = masks ? masked(A, masks->input) : A;
  Field v = lift(input, params, opt.lift_column_scale);
  if (opt.hook) opt.hook(0, v);
  if (tape) {
    tape->input = std::move(input);
    tape->masks = masks;
    tape->states.push_back(v);
  }
  for (int l = 0; l < c.layers; ++l) {
    v = layer_forward(v, params, l, masks, tape);
    if (opt.hook) opt.hook(l + 1, v);
    v.require_finite("propagation layer " + std::to_string(l));
    if (tape) tape->states.push_back(v);
  }
  Field rec_in = masks ? masked(v, masks->recovery) : std::move(v);
  Field out = recover(rec_in, params);
  out.require_finite("recovery");
  if (tape) tape->output = out;
  return out;
}

}  // namespace

OperatorParams OperatorParams::zeros(const OperatorConfig& c) {
  c.validate();
  OperatorParams p;
  p.config = c;
  p.W_P.assign(static_cast<std::size_t>(c.d_a) * c.d_v, 0.0);
  p.b_P.assign(c.d_v, 0.0);
  p.layers.resize(c.layers);
  for (auto& layer : p.layers) {
    layer.R.assign(mode_count(c) * 2 * c.d_v * c.d_v, 0.0);
    layer.W.assign(static_cast<std::size_t>(c.d_v) * c.d_v, 0.0);
    layer.b.assign(c.d_v, 0.0);
  }
  p.W_Q.assign(static_cast<std::size_t>(c.d_v) * c.d_u, 0.0);
  p.b_Q.assign(c.d_u, 0.0);
  return p;
}

OperatorParams OperatorParams::initialize(const OperatorConfig& c, RngStream& rng) {
  OperatorParams p = zeros(c);
  const double spec_std = 1.0 / (static_cast<double>(c.d_v) * c.k_max);
  for (auto& t : p.tensors()) {
    if (t.name[0] == 'R') {
      for (double& x : t.values) x = spec_std * rng.normal();
      continue;
    }
    int fan_in = c.d_v;
    if (t.module == Module::Lifting) fan_in = c.d_a;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : t.values) x = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

std::vector<ConstParamRef> OperatorParams::tensors() const {
  const OperatorConfig& c = config;
  const auto da = static_cast<std::size_t>(c.d_a);
  const auto dv = static_cast<std::size_t>(c.d_v);
  const auto du = static_cast<std::size_t>(c.d_u);
  const auto k = static_cast<std::size_t>(c.k_max);
  std::vector<ConstParamRef> out;
  out.push_back({"W_P", Module::Lifting, {da, dv}, W_P});
  out.push_back({"b_P", Module::Lifting, {dv}, b_P});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto s = std::to_string(l);
    out.push_back({"R_" + s, Module::Propagation, {k, 2 * k - 1, 2, dv, dv}, layers[l].R});
    out.push_back({"W_" + s, Module::Propagation, {dv, dv}, layers[l].W});
    out.push_back({"b_" + s, Module::Propagation, {dv}, layers[l].b});
  }
  out.push_back({"W_Q", Module::Recovery, {dv, du}, W_Q});
  out.push_back({"b_Q", Module::Recovery, {du}, b_Q});
  return out;
}

std::vector<ParamRef> OperatorParams::tensors() {
  const auto views = std::as_const(*this).tensors();
  std::vector<ParamRef> out;
  out.reserve(views.size());
  for (const auto& v : views) {
    out.push_back({v.name, v.module, v.shape,
                   std::span<double>(const_cast<double*>(v.values.data()), v.values.size())});
  }
  return out;
}

std::size_t OperatorParams::total_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

DropoutMasks sample_dropout_masks(RngStream& rng, const OperatorConfig& c, const Grid2D& grid,
                                  double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  const double keep = 1.0 - p;
  const double scale = 1.0 / keep;
  auto draw = [&](std::size_t n) {
    std::vector<double> m(n);
    for (double& x : m) x = rng.uniform() < keep ? scale : 0.0;
    return m;
  };
  const std::size_t N = grid.size();
  DropoutMasks masks;
  masks.input = draw(N * c.d_a);
  for (int l = 0; l < c.layers; ++l) {
    masks.spectral.push_back(draw(N * c.d_v));
    masks.pointwise.push_back(draw(N * c.d_v));
  }
  masks.recovery = draw(N * c.d_v);
  return masks;
}

Field lift(const Field& A, const OperatorParams& params, std::span<const double> column_scale) {
  const OperatorConfig& c = params.config;
  if (A.channels() != c.d_a) {
    throw ConfigError("lift: input has " + std::to_string(A.channels()) + " channels, expected " +
                      std::to_string(c.d_a));
  }
  Field v = affine(A, params.W_P, params.b_P, c.d_v);
  if (!column_scale.empty()) {
    if (column_scale.size() != static_cast<std::size_t>(c.d_v)) {
      throw ConfigError("lift: column scale length must equal d_v");
    }
    auto vm = as_matrix(v);
    for (Eigen::Index n = 0; n < vm.rows(); ++n) {
      for (int k = 0; k < c.d_v; ++k) vm(n, k) *= column_scale[k];
    }
  }
  return v;
}

Field propagate(const Field& V0, const OperatorParams& params, const StateHook& hook) {
  const OperatorConfig& c = params.config;
  if (V0.channels() != c.d_v) throw ConfigError("propagate: input must have d_v channels");
  c.validate(V0.grid());
  Field v = V0;
  for (int l = 0; l < c.layers; ++l) {
    v = layer_forward(v, params, l, nullptr, nullptr);
    if (hook) hook(l + 1, v);
    v.require_finite("propagation layer " + std::to_string(l));
  }
  return v;
}

Field recover(const Field& VL, const OperatorParams& params) {
  const OperatorConfig& c = params.config;
  if (VL.channels() != c.d_v) {
    throw ConfigError("recover: input has " + std::to_string(VL.channels()) + " channels, expected " +
                      std::to_string(c.d_v));
  }
  return affine(VL, params.W_Q, params.b_Q, c.d_u);
}

Field forward(const Field& A, const OperatorParams& params, const ForwardOptions& options) {
  return run_forward(A, params, options, nullptr);
}

ForwardTape record_forward(const Field& A, const OperatorParams& params, const DropoutMasks* masks) {
  ForwardTape tape;
  ForwardOptions opt;
  opt.masks = masks;
  run_forward(A, params, opt, &tape);
  return tape;
}

void backward_pass(const ForwardTape& tape, const Field& d_output, const OperatorParams& params,
                   OperatorParams& grads, SpectralGradTerms* deferred) {
  const OperatorConfig& c = params.config;
  const DropoutMasks* masks = tape.masks;
  if (!d_output.same_shape(tape.output)) throw ConfigError("backward: gradient shape mismatch");
  const Grid2D& grid = tape.output.grid();
  const auto plan = SpectralPlan::get(grid, c.k_max);

  if (deferred) {
    deferred->dout_re.assign(c.layers, RowMatrix());
    deferred->dout_im.assign(c.layers, RowMatrix());
  }

  // Recovery.
  Field rec_in = masks ? masked(tape.states.back(), masks->recovery) : tape.states.back();
  auto dy = as_matrix(d_output);
  as_matrix(std::span<double>(grads.W_Q), c.d_v, c.d_u).noalias() = as_matrix(rec_in).transpose() * dy;
  column_sums(d_output, grads.b_Q);
  Field dv(grid, c.d_v);
  as_matrix(dv).noalias() = dy * as_matrix(std::span<const double>(params.W_Q), c.d_v, c.d_u).transpose();
  if (masks) {
    auto d = dv.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= masks->recovery[i];
  }

  for (int l = c.layers - 1; l >= 0; --l) {
    const PropagationLayer& layer = params.layers[l];
    PropagationLayer& g = grads.layers[l];
    const Field& v_in = tape.states[l];
    Field dpre = dv;
    if (l + 1 < c.layers) {
      auto d = dpre.values();
      auto z = tape.act_slope[l].values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= z[i];
    }
    auto dp = as_matrix(dpre);
    column_sums(dpre, g.b);
    {
      const Field p_in = masks ? masked(v_in, masks->pointwise[l]) : Field();
      const Field& pin = masks ? p_in : v_in;
      as_matrix(std::span<double>(g.W), c.d_v, c.d_v).noalias() = as_matrix(pin).transpose() * dp;
    }
    Field d_pw(grid, c.d_v);
    as_matrix(d_pw).noalias() = dp * as_matrix(std::span<const double>(layer.W), c.d_v, c.d_v).transpose();

    RowMatrix dore, doim, dhre, dhim;
    plan->synthesize_adjoint(dpre.data(), c.d_v, dore, doim);
    if (deferred) {
      spectral_mix_input_adjoint(layer.R, c.d_v, c.d_v, dore, doim, dhre, dhim);
      deferred->dout_re[l] = dore;
      deferred->dout_im[l] = doim;
    } else {
      spectral_mix_adjoint(layer.R, c.d_v, c.d_v, tape.spec_re[l], tape.spec_im[l], dore, doim, g.R,
                           dhre, dhim);
    }
    Field d_spec(grid, c.d_v);
    plan->analyze_adjoint_add(dhre, dhim, d_spec.data(), c.d_v);

    Field next(grid, c.d_v);
    auto o = next.values();
    auto a = d_pw.values();
    auto s = d_spec.values();
    if (masks) {
      const auto& mp = masks->pointwise[l];
      const auto& ms = masks->spectral[l];
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * mp[i] + s[i] * ms[i];
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + s[i];
    }
    dv = std::move(next);
    if (!std::isfinite(as_matrix(dv).sum())) {
      throw NumericalError("backward: non-finite gradient at propagation layer " + std::to_string(l));
    }
  }

  if (deferred) {
    deferred->in_re = tape.spec_re;
    deferred->in_im = tape.spec_im;
  }

  // Lifting. The tape input already carries the input mask.
  auto d0 = as_matrix(dv);
  as_matrix(std::span<double>(grads.W_P), c.d_a, c.d_v).noalias() =
      as_matrix(tape.input).transpose() * d0;
  column_sums(dv, grads.b_P);
}

void accumulate_spectral_grads(const std::vector<SpectralGradTerms>& terms,
                               const OperatorConfig& c, OperatorParams& grads) {
  if (terms.empty()) throw ConfigError("accumulate_spectral_grads: no samples");
  const auto batch = static_cast<Eigen::Index>(terms.size());
  const int modes = static_cast<int>(mode_count(c));
  const std::size_t block = static_cast<std::size_t>(c.d_v) * c.d_v;
  RowMatrix a_re(batch, c.d_v), a_im(batch, c.d_v), d_re(batch, c.d_v), d_im(batch, c.d_v);
  for (int l = 0; l < c.layers; ++l) {
    auto& R = grads.layers[l].R;
    R.resize(2 * block * modes);
    for (int m = 0; m < modes; ++m) {
      for (Eigen::Index s = 0; s < batch; ++s) {
        a_re.row(s) = terms[s].in_re[l].row(m);
        a_im.row(s) = terms[s].in_im[l].row(m);
        d_re.row(s) = terms[s].dout_re[l].row(m);
        d_im.row(s) = terms[s].dout_im[l].row(m);
      }
      RowMap dwr(R.data() + 2 * block * m, c.d_v, c.d_v);
      RowMap dwi(R.data() + 2 * block * m + block, c.d_v, c.d_v);
      dwr.noalias() = a_re.transpose() * d_re;
      dwr.noalias() += a_im.transpose() * d_im;
      dwi.noalias() = a_re.transpose() * d_im;
      dwi.noalias() -= a_im.transpose() * d_re;
    }
  }
}

ParamCensus param_census(const OperatorParams& params) {
  ParamCensus census;
  for (const auto& t : params.tensors()) {
    switch (t.module) {
      case Module::Lifting: census.lifting += t.values.size(); break;
      case Module::Propagation: census.propagation += t.values.size(); break;
      case Module::Recovery: census.recovery += t.values.size(); break;
    }
  }
  return census;
}

void write_config_meta(DatasetContainer& c, const OperatorConfig& config) {
  c.set_meta("operator.d_a", std::to_string(config.d_a));
  c.set_meta("operator.d_v", std::to_string(config.d_v));
  c.set_meta("operator.d_u", std::to_string(config.d_u));
  c.set_meta("operator.layers", std::to_string(config.layers));
  c.set_meta("operator.k_max", std::to_string(config.k_max));
  c.set_meta("operator.activation", activation_name(config.activation));
}

OperatorConfig read_config_meta(const DatasetContainer& c) {
  OperatorConfig config;
  config.d_a = static_cast<int>(parse_int(c.require_meta("operator.d_a")));
  config.d_v = static_cast<int>(parse_int(c.require_meta("operator.d_v")));
  config.d_u = static_cast<int>(parse_int(c.require_meta("operator.d_u")));
  config.layers = static_cast<int>(parse_int(c.require_meta("operator.layers")));
  config.k_max = static_cast<int>(parse_int(c.require_meta("operator.k_max")));
  config.activation = parse_activation(c.require_meta("operator.activation"));
  config.validate();
  return config;
}

DatasetContainer checkpoint_container(const OperatorParams& params) {
  DatasetContainer c;
  c.set_meta("kind", "checkpoint");
  c.set_meta("checkpoint_version", std::to_string(kCheckpointVersion));
  write_config_meta(c, params.config);
  for (const auto& t : params.tensors()) {
    c.add(Tensor{t.name, t.shape, std::vector<double>(t.values.begin(), t.values.end())});
  }
  return c;
}

OperatorParams params_from_container(const DatasetContainer& c) {
  if (c.meta("kind") != "checkpoint") throw IoError("container is not a checkpoint");
  if (parse_int(c.require_meta("checkpoint_version")) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + c.require_meta("checkpoint_version"));
  }
  OperatorParams p = OperatorParams::zeros(read_config_meta(c));
  for (auto& t : p.tensors()) {
    const Tensor& stored = c.get(t.name);
    if (stored.shape != t.shape) {
      throw ConfigError("checkpoint tensor '" + t.name + "' shape does not match its config");
    }
    std::copy(stored.data.begin(), stored.data.end(), t.values.begin());
  }
  return p;
}

void save_checkpoint(const OperatorParams& params, const std::filesystem::path& dir) {
  write_dataset(dir, checkpoint_container(params));
}

OperatorParams load_checkpoint(const std::filesystem::path& dir) {
  return params_from_container(read_dataset(dir));
}

OperatorParams load_checkpoint(const std::filesystem::path& dir, const OperatorConfig& expected) {
  OperatorParams p = load_checkpoint(dir);
  if (!(p.config == expected)) {
    throw ConfigError("checkpoint " + dir.string() + " was saved with a different operator config");
  }
  return p;
}

}  // namespace liftuq
