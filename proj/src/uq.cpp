#include "liftuq/uq.hpp"

#include <cmath>
#include <algorithm>

#include "liftuq/parallel.hpp"
#include "liftuq/text.hpp"

namespace liftuq {

namespace {

constexpr int kMomentBlock = 8;

struct Sums {
  std::vector<double> s1, s2;
};

void add_sums(Sums& into, const Sums& other) {
  for (std::size_t i = 0; i < into.s1.size(); ++i) {
    into.s1[i] += other.s1[i];
    into.s2[i] += other.s2[i];
  }
}

// Pairwise combination over blocks [lo, hi): fixed shape for a given count.
Sums reduce_blocks(std::vector<Sums>& blocks, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return std::move(blocks[lo]);
  const std::size_t mid = lo + (hi - lo) / 2;
  Sums left = reduce_blocks(blocks, lo, mid);
  add_sums(left, reduce_blocks(blocks, mid, hi));
  return left;
}

bool is_lift_method(UqMethod m) {
  return m == UqMethod::LiftDropout || m == UqMethod::LiftGaussian;
}

void flag_degenerate(McPrediction& pred, double p, int T) {
  pred.degenerate_reason = degenerate_reason(p, T);
  pred.degenerate = !pred.degenerate_reason.empty();
}

}  // namespace

UqMethod parse_method(const std::string& s) {
  if (s == "lift_dropout") return UqMethod::LiftDropout;
  if (s == "lift_gaussian") return UqMethod::LiftGaussian;
  if (s == "naive_mcdropout") return UqMethod::NaiveMcDropout;
  if (s == "input_perturbation") return UqMethod::InputPerturbation;
  if (s == "ensemble") return UqMethod::Ensemble;
  throw ConfigError("unknown method '" + s +
                    "' (expected lift_dropout, lift_gaussian, naive_mcdropout, "
                    "input_perturbation or ensemble)");
}

std::string method_name(UqMethod m) {
  switch (m) {
    case UqMethod::LiftDropout: return "lift_dropout";
    case UqMethod::LiftGaussian: return "lift_gaussian";
    case UqMethod::NaiveMcDropout: return "naive_mcdropout";
    case UqMethod::InputPerturbation: return "input_perturbation";
    case UqMethod::Ensemble: return "ensemble";
  }
  return "?";
}

Site parse_site(const std::string& s) {
  if (s == "lift") return Site::Lift;
  if (s == "propagate") return Site::Propagate;
  if (s == "recover") return Site::Recover;
  if (s == "all") return Site::All;
  throw ConfigError("unknown site '" + s + "' (expected lift, propagate, recover or all)");
}

std::string site_name(Site s) {
  switch (s) {
    case Site::Lift: return "lift";
    case Site::Propagate: return "propagate";
    case Site::Recover: return "recover";
    case Site::All: return "all";
  }
  return "?";
}

LiftRoute parse_lift_route(const std::string& s) {
  if (s == "feature") return LiftRoute::FeatureMask;
  if (s == "weights") return LiftRoute::ColumnScaledWeights;
  throw ConfigError("unknown lift route '" + s + "' (expected feature or weights)");
}

std::string lift_route_name(LiftRoute r) {
  return r == LiftRoute::FeatureMask ? "feature" : "weights";
}

void UqConfig::validate() const {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("p must lie in [0, 1), got " + format_double(p));
  if (method != UqMethod::Ensemble && T < 1) throw ConfigError("T must be at least 1");
  if (!(input_noise_std >= 0.0) || !std::isfinite(input_noise_std)) {
    throw ConfigError("input_noise_std must be finite and non-negative");
  }
  if (!is_lift_method(method) && site != Site::Lift) {
    throw ConfigError("site ablation applies to lift_dropout and lift_gaussian only");
  }
  if (route == LiftRoute::ColumnScaledWeights && (!is_lift_method(method) || site != Site::Lift)) {
    throw ConfigError("the weights route needs a lift method at the lift site");
  }
}

std::string degenerate_reason(double p, int T) {
  std::string reason;
  auto add = [&](const std::string& r) { reason += reason.empty() ? r : "; " + r; };
  if (p == 0.0) add("p = 0 gives no stochasticity");
  if (p >= 0.9) add("p >= 0.9 removes most features");
  if (T <= 5) add("T <= 5 gives unstable moment estimates");
  return reason;
}

std::vector<double> sample_channel_multipliers(UqMethod method, double p, int channels,
                                               RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("p must lie in [0, 1)");
  std::vector<double> m(static_cast<std::size_t>(channels));
  if (method == UqMethod::LiftDropout) {
    const double keep = 1.0 - p;
    for (double& x : m) x = rng.uniform() < keep ? 1.0 / keep : 0.0;
  } else if (method == UqMethod::LiftGaussian) {
    const double sd = std::sqrt(p / (1.0 - p));
    for (double& x : m) x = 1.0 + sd * rng.normal();
  } else {
    throw ConfigError("channel multipliers exist only for lift_dropout and lift_gaussian");
  }
  return m;
}

Field scale_channels(const Field& v, std::span<const double> multipliers) {
  if (multipliers.size() != static_cast<std::size_t>(v.channels())) {
    throw ConfigError("scale_channels: one multiplier per channel required");
  }
  Field out = v;
  const int d = v.channels();
  for (std::size_t n = 0; n < v.points(); ++n) {
    for (int k = 0; k < d; ++k) out.at(n, k) *= multipliers[k];
  }
  return out;
}

Field perturb_features_dropout(const Field& V0, double p, RngStream& rng) {
  return scale_channels(V0, sample_channel_multipliers(UqMethod::LiftDropout, p, V0.channels(), rng));
}

Field perturb_features_gaussian(const Field& V0, double p, RngStream& rng) {
  return scale_channels(V0,
                        sample_channel_multipliers(UqMethod::LiftGaussian, p, V0.channels(), rng));
}

McPrediction sample_moments(int T, const std::function<Field(int t)>& sampler) {
  if (T < 1) throw ConfigError("need at least one sample");
  auto checked = [&](int t) {
    Field y = sampler(t);
    for (double v : y.values()) {
      if (!std::isfinite(v)) {
        throw NumericalError("Monte Carlo sample " + std::to_string(t) + " is not finite");
      }
    }
    return y;
  };
  const Field y0 = checked(0);
  const std::size_t n = y0.values().size();

  const int rest = T - 1;
  const int n_blocks = (rest + kMomentBlock - 1) / kMomentBlock;
  std::vector<Sums> blocks(static_cast<std::size_t>(n_blocks));
  parallel_for(blocks.size(), [&](std::size_t b) {
    Sums s{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const int t_end = std::min(T, 1 + static_cast<int>(b + 1) * kMomentBlock);
    for (int t = 1 + static_cast<int>(b) * kMomentBlock; t < t_end; ++t) {
      const Field y = checked(t);
      if (!y.same_shape(y0)) throw ConfigError("Monte Carlo samples differ in shape");
      for (std::size_t i = 0; i < n; ++i) {
        const double d = y.values()[i] - y0.values()[i];
        s.s1[i] += d;
        s.s2[i] += d * d;
      }
    }
    blocks[b] = std::move(s);
  });

  McPrediction pred;
  pred.T_used = T;
  pred.mean = y0;
  pred.sigma = field_zeros(y0.grid(), y0.channels());
  if (blocks.empty()) return pred;
  const Sums total = reduce_blocks(blocks, 0, blocks.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double m1 = total.s1[i] / T;
    const double var = total.s2[i] / T - m1 * m1;
    pred.mean.values()[i] = y0.values()[i] + m1;
    pred.sigma.values()[i] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return pred;
}

McPrediction mc_predict_lifted(const Field& V0, const std::function<Field(const Field&)>& remainder,
                               const UqConfig& uq, const RngStream& base) {
  uq.validate();
  if (!is_lift_method(uq.method)) throw ConfigError("mc_predict needs lift_dropout or lift_gaussian");
  McPrediction pred = sample_moments(uq.T, [&](int t) {
    RngStream rng = base.fork(static_cast<std::uint64_t>(t));
    return remainder(scale_channels(V0, sample_channel_multipliers(uq.method, uq.p, V0.channels(), rng)));
  });
  pred.method = uq.method;
  flag_degenerate(pred, uq.p, uq.T);
  return pred;
}

McPrediction mc_predict(const Field& A, const OperatorParams& params, const UqConfig& uq,
                        const RngStream& base) {
  uq.validate();
  if (!is_lift_method(uq.method)) throw ConfigError("mc_predict needs lift_dropout or lift_gaussian");
  auto remainder = [&](const Field& v) { return recover(propagate(v, params), params); };
  if (uq.route == LiftRoute::FeatureMask) {
    return mc_predict_lifted(lift(A, params), remainder, uq, base);
  }
  McPrediction pred = sample_moments(uq.T, [&](int t) {
    RngStream rng = base.fork(static_cast<std::uint64_t>(t));
    const auto s = sample_channel_multipliers(uq.method, uq.p, params.config.d_v, rng);
    return remainder(lift(A, params, s));
  });
  pred.method = uq.method;
  flag_degenerate(pred, uq.p, uq.T);
  return pred;
}

McPrediction mc_predict(const Field& A, const OperatorParams& params, const UqConfig& uq) {
  return mc_predict(A, params, uq, RngStream(uq.seed));
}

McPrediction apply_site_ablation(const Field& A, const OperatorParams& params, const UqConfig& uq,
                                 const RngStream& base) {
  uq.validate();
  if (!is_lift_method(uq.method)) throw ConfigError("site ablation needs lift_dropout or lift_gaussian");
  const int L = params.config.layers;
  auto in_site = [&](int state) {
    switch (uq.site) {
      case Site::Lift: return state == 0;
      case Site::Propagate: return state <= L - 1;
      case Site::Recover: return state == L;
      case Site::All: return true;
    }
    return false;
  };
  McPrediction pred = sample_moments(uq.T, [&](int t) {
    RngStream rng = base.fork(static_cast<std::uint64_t>(t));
    ForwardOptions opts;
    opts.hook = [&](int state, Field& v) {
      if (in_site(state)) {
        v = scale_channels(v, sample_channel_multipliers(uq.method, uq.p, v.channels(), rng));
      }
    };
    return forward(A, params, opts);
  });
  pred.method = uq.method;
  flag_degenerate(pred, uq.p, uq.T);
  return pred;
}

McPrediction naive_mcdropout_predict(const Field& A, const OperatorParams& params, double p, int T,
                                     const RngStream& base) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("p must lie in [0, 1)");
  McPrediction pred = sample_moments(T, [&](int t) {
    RngStream rng = base.fork(static_cast<std::uint64_t>(t));
    const DropoutMasks masks = sample_dropout_masks(rng, params.config, A.grid(), p);
    ForwardOptions opts;
    opts.masks = &masks;
    return forward(A, params, opts);
  });
  pred.method = UqMethod::NaiveMcDropout;
  flag_degenerate(pred, p, T);
  return pred;
}

McPrediction input_perturbation_predict(const Field& A, const OperatorParams& params, double std_dev,
                                        int T, const RngStream& base) {
  if (!(std_dev >= 0.0) || !std::isfinite(std_dev)) throw ConfigError("noise std must be >= 0");
  McPrediction pred = sample_moments(T, [&](int t) {
    RngStream rng = base.fork(static_cast<std::uint64_t>(t));
    Field noisy = A;
    for (std::size_t n = 0; n < noisy.points(); ++n) noisy.at(n, 0) += std_dev * rng.normal();
    return forward(noisy, params);
  });
  pred.method = UqMethod::InputPerturbation;
  if (T <= 5) {
    pred.degenerate = true;
    pred.degenerate_reason = "T <= 5 gives unstable moment estimates";
  }
  return pred;
}

McPrediction ensemble_predict(const Field& A, std::span<const OperatorParams> members) {
  if (members.size() < 2) throw ConfigError("an ensemble needs at least two members");
  for (const auto& m : members) {
    if (!(m.config == members[0].config)) throw ConfigError("ensemble members differ in config");
  }
  McPrediction pred = sample_moments(static_cast<int>(members.size()),
                                     [&](int t) { return forward(A, members[t]); });
  pred.method = UqMethod::Ensemble;
  return pred;
}

McPrediction predict(const Field& A, std::span<const OperatorParams> members, const UqConfig& uq,
                     const RngStream& base) {
  uq.validate();
  if (members.empty()) throw ConfigError("no model parameters supplied");
  switch (uq.method) {
    case UqMethod::LiftDropout:
    case UqMethod::LiftGaussian:
      if (uq.site == Site::Lift) return mc_predict(A, members[0], uq, base);
      return apply_site_ablation(A, members[0], uq, base);
    case UqMethod::NaiveMcDropout:
      return naive_mcdropout_predict(A, members[0], uq.p, uq.T, base);
    case UqMethod::InputPerturbation: {
      const auto& a = A.values();
      const int d = A.channels();
      double mean = 0.0;
      for (std::size_t n = 0; n < A.points(); ++n) mean += a[n * d];
      mean /= static_cast<double>(A.points());
      double var = 0.0;
      for (std::size_t n = 0; n < A.points(); ++n) var += (a[n * d] - mean) * (a[n * d] - mean);
      var /= static_cast<double>(A.points());
      return input_perturbation_predict(A, members[0], uq.input_noise_std * std::sqrt(var), uq.T,
                                        base);
    }
    case UqMethod::Ensemble:
      return ensemble_predict(A, members);
  }
  throw ConfigError("unhandled method");
}

}  // namespace liftuq
