// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails. Trains the default model from scratch, so expect a
// run time of roughly half an hour on one core (more if the seed-robustness
// check needs the extra seeds).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liftuq/calibmetrics.hpp"
#include "liftuq/container.hpp"
#include "liftuq/darcy.hpp"
#include "liftuq/experiment.hpp"
#include "liftuq/operator_net.hpp"
#include "liftuq/spectral.hpp"
#include "liftuq/text.hpp"
#include "liftuq/uq.hpp"
#include "../support/oracles.hpp"

using namespace liftuq;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!pass) ++g_failures;
}

// Runs `body`, turning an exception into a FAIL line.
void criterion(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path kSource = LIFTUQ_SOURCE_DIR;
const fs::path kCli = LIFTUQ_CLI_PATH;

// ---------------------------------------------------------------------------

void gradient_check() {
  criterion(1, "gradient check (8x8, d_v=4, L=1, k_max=2)", [] {
    const Stopwatch sw;
    OperatorConfig cfg;
    cfg.d_v = 4;
    cfg.layers = 1;
    cfg.k_max = 2;
    RngStream r(21);
    OperatorParams params = OperatorParams::initialize(cfg, r);
    for (auto& t : params.tensors()) {
      for (double& v : t.values) v += 0.2 * r.normal();
    }
    const Grid2D g(8, 8);
    std::vector<TrainingPair> pairs;
    for (int i = 0; i < 2; ++i) {
      Field a(g, 1);
      for (double& v : a.values()) v = 3.0 + 9.0 * r.uniform();
      pairs.push_back({with_positional_encoding(a), oracle::random_field(g, 1, r)});
    }
    std::vector<const TrainingPair*> batch;
    for (const auto& p : pairs) batch.push_back(&p);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& e : oracle::entrywise_gradient_errors(batch, params)) {
      if (e.rel_error > worst) {
        worst = e.rel_error;
        worst_name = e.name;
      }
    }
    const double t = sw.seconds();
    report(1, "gradient check (8x8, d_v=4, L=1, k_max=2)", worst <= 1e-5 && t < 30.0,
           "max per-tensor relative error " + fmt(worst, 3) + " (" + worst_name + "), " + fmt(t, 3) + " s");
  });
}

void spectral_oracle() {
  criterion(2, "spectral layer vs dense DFT (8x8)", [] {
    const Stopwatch sw;
    OperatorConfig cfg;
    cfg.d_v = 4;
    cfg.layers = 1;
    cfg.k_max = 3;
    RngStream r(31);
    OperatorParams p = OperatorParams::initialize(cfg, r);
    for (auto& t : p.tensors()) {
      for (double& v : t.values) v = 0.3 * r.normal();
    }
    const Grid2D g(8, 8);
    const Field V = oracle::random_field(g, 4, r);
    const double err = oracle::max_rel_diff(propagate(V, p), oracle::dense_layer(V, p.layers[0], 4, 3, false));
    const double t = sw.seconds();
    report(2, "spectral layer vs dense DFT (8x8)", err <= 1e-12 && t < 5.0,
           "max relative difference " + fmt(err, 3) + ", " + fmt(t, 3) + " s");
  });
}

void darcy_center() {
  criterion(3, "Darcy solver centre value (65x65, a = 1)", [] {
    const Stopwatch sw;
    const double series = oracle::center_double_series(3001);
    const double check = oracle::center_single_series();
    const Grid2D g(65, 65);
    Field a(g, 1);
    for (double& v : a.values()) v = 1.0;
    const Field u = solve_darcy(a);
    const double centre = u.at(g.index(32, 32), 0);
    const double res = stencil_residual_inf(a, u);
    const double t = sw.seconds();
    const bool ok = std::abs(series - check) <= 1e-6 && std::abs(centre - series) <= 2e-3 && res <= 1e-9 && t < 60.0;
    report(3, "Darcy solver centre value (65x65, a = 1)", ok,
           "u(0.5,0.5) " + fmt(centre, 8) + " vs series " + fmt(series, 8) + " (series cross-check diff " +
               fmt(std::abs(series - check), 2) + "), stencil residual " + fmt(res, 3) + ", " + fmt(t, 3) + " s");
  });
}

void darcy_dataset(const ExperimentConfig& cfg, double gen_seconds) {
  criterion(3, "Darcy dataset stencil residuals", [&] {
    const Layout lay{cfg.output_dir};
    double worst = 0.0;
    std::size_t count = 0;
    for (const char* split : {"train", "calibration", "test"}) {
      for (const auto& s : unpack_samples(read_dataset(lay.split(split)))) {
        worst = std::max(worst, stencil_residual_inf(s.a, s.u));
        ++count;
      }
    }
    report(3, "Darcy dataset stencil residuals", worst <= 1e-9 && gen_seconds < 300.0,
           std::to_string(count) + " samples, max interior residual " + fmt(worst, 3) + ", generated in " +
               fmt(gen_seconds, 3) + " s");
  });
}

void moments() {
  criterion(5, "perturbation moments (p = 0.3, T = 1e5)", [] {
    const Stopwatch sw;
    const Grid2D g(6, 5);
    RngStream r(41);
    const Field V0 = oracle::random_field(g, 4, r);
    const double p = 0.3, T = 1e5, factor = p / (1.0 - p);
    std::string detail;
    bool ok = true;
    for (UqMethod m : {UqMethod::LiftDropout, UqMethod::LiftGaussian}) {
      std::vector<double> s1(V0.values().size(), 0.0), s2(s1.size(), 0.0);
      RngStream rng(m == UqMethod::LiftDropout ? 101 : 102);
      for (int t = 0; t < static_cast<int>(T); ++t) {
        const Field x = m == UqMethod::LiftDropout ? perturb_features_dropout(V0, p, rng)
                                                   : perturb_features_gaussian(V0, p, rng);
        for (std::size_t i = 0; i < s1.size(); ++i) {
          s1[i] += x.values()[i];
          s2[i] += x.values()[i] * x.values()[i];
        }
      }
      double worst_z = 0.0, worst_var = 0.0;
      for (std::size_t i = 0; i < s1.size(); ++i) {
        const double v0 = V0.values()[i];
        const double mean = s1[i] / T;
        const double var = s2[i] / T - mean * mean;
        const double expected_var = v0 * v0 * factor;
        worst_z = std::max(worst_z, std::abs(mean - v0) / std::sqrt(expected_var / T));
        worst_var = std::max(worst_var, std::abs(var - expected_var) / expected_var);
      }
      ok = ok && worst_z <= 3.0 && worst_var <= 0.05;
      detail += method_name(m) + ": max |mean - V0| " + fmt(worst_z, 3) + " SE, max variance error " +
                fmt(100 * worst_var, 3) + "%; ";
    }
    const double t = sw.seconds();
    report(5, "perturbation moments (p = 0.3, T = 1e5)", ok && t < 60.0, detail + fmt(t, 3) + " s");
  });
}

void metric_oracles(const UqEvaluation* ev, const std::vector<TrainingPair>* test) {
  criterion(7, "metric formula oracles", [&] {
    bool ok = true;
    std::string detail;
    // Ratios {1,2,3,4}, each on a full 3x3 case (unit sigma): the sort-and-
    // index oracle reads the same order statistics.
    const Grid2D g(3, 3);
    std::vector<Field> r, s;
    for (int q = 1; q <= 4; ++q) {
      Field res(g, 1), sig(g, 1);
      for (double& v : res.values()) v = q;
      for (double& v : sig.values()) v = 1.0;
      r.push_back(res);
      s.push_back(sig);
    }
    const double k75 = fit_calibration_scale(r, s, 0.75).k, k100 = fit_calibration_scale(r, s, 1.0).k;
    ok = ok && k75 == 3.0 && k100 == 4.0;
    detail += "k(0.75) " + fmt(k75) + ", k(1.0) " + fmt(k100);

    const std::vector<Field> zr{field_zeros(g, 1)}, zs{s.front()};
    const double kz = fit_calibration_scale(zr, zs, 0.95).k;
    ok = ok && kz == std::numeric_limits<double>::denorm_min();

    // |r| = (0.1, 0.2, 0.3, 0.4) against (0.15, 0.15, 0.35, 0.35), repeated
    // over a 4x3 grid.
    const Grid2D g12(4, 3);
    Field rr(g12, 1), bb(g12, 1);
    for (std::size_t n = 0; n < 12; ++n) {
      rr.values()[n] = 0.1 * static_cast<double>(n % 4 + 1);
      bb.values()[n] = n % 4 < 2 ? 0.15 : 0.35;
    }
    const double cr = case_coverage(rr, bb);
    ok = ok && cr == 0.5;
    detail += ", case coverage " + fmt(cr);
    const Field zb = field_zeros(g12, 1);
    ok = ok && case_coverage(field_zeros(g12, 1), zb) == 1.0 && case_coverage(rr, zb) == 0.0;

    const std::vector<double> cov{1.0, 0.0};
    const std::vector<std::size_t> counts{1, 3};
    const auto agg = aggregate_coverage(cov, counts);
    ok = ok && agg.avg_cr == 0.5 && agg.total_cr == 0.25;
    detail += ", aggregate " + fmt(agg.avg_cr) + "/" + fmt(agg.total_cr);

    // Constant band, covered/missed split and the NA convention.
    const std::vector<Field> rs{rr}, bs{Field(g12, 1, std::vector<double>(12, 0.25))};
    const std::vector<double> norm{0.5};
    const auto rep = bandwidth_report(rs, bs, norm);
    ok = ok && rep.avg_bw_all == 0.5 && rep.avg_bw_covered == 0.5 && rep.avg_bw_missed == 0.5;
    const std::vector<Field> zrs{field_zeros(g12, 1)};
    ok = ok && !bandwidth_report(zrs, bs, norm).avg_bw_missed.has_value();

    // Recomposition on the real Method A test output.
    double recomposition = 0.0;
    if (ev && test) {
      std::vector<Field> residuals, bands;
      for (std::size_t i = 0; i < test->size(); ++i) {
        residuals.push_back(subtract(ev->test_predictions[i].mean, (*test)[i].target));
        bands.push_back(band_from_sigma(ev->test_predictions[i].sigma, ev->calibration.k));
      }
      const auto full = bandwidth_report(residuals, bands, ev->row.report.normalization);
      const double nc = static_cast<double>(full.n_covered), nm = static_cast<double>(full.n_missed);
      const double back = (nc * full.avg_bw_covered.value_or(0.0) + nm * full.avg_bw_missed.value_or(0.0)) / (nc + nm);
      recomposition = std::abs(back - full.avg_bw_all) / full.avg_bw_all;
      ok = ok && recomposition <= 1e-12 && full.total_cr == ev->row.report.total_cr;
      detail += ", recomposition error " + fmt(recomposition, 3);
    } else {
      ok = false;
      detail += ", no Method A output for the recomposition check";
    }
    report(7, "metric formula oracles", ok, detail);
  });
}

void census() {
  criterion(11, "parameter census", [] {
    OperatorConfig desk;
    const ParamCensus c = param_census(OperatorParams::zeros(desk));
    const bool ok = c.lifting == 128 && c.lifting_fraction() < 0.01;
    report(11, "parameter census", ok,
           "lifting " + std::to_string(c.lifting) + ", propagation " + std::to_string(c.propagation) +
               ", recovery " + std::to_string(c.recovery) + ", total " + std::to_string(c.total()) +
               ", lifting fraction " + fmt(100 * c.lifting_fraction(), 3) + "%");
  });
}

// ---------------------------------------------------------------------------
// Trained-model criteria

struct SeedRun {
  std::uint64_t seed = 0;
  ExperimentConfig cfg;
  double gen_seconds = 0.0;
  double train_seconds = 0.0;
  double test_rel_l2 = 0.0;
  double first_eval = 0.0, last_eval = 0.0;
  bool trained = false;
  std::vector<TrainingPair> test;
  std::optional<UqEvaluation> lift;     // Method A, p = 0.3, T = 20
  double lift_uq_seconds = 0.0;
  std::optional<UqEvaluation> naive;    // MC-Dropout, p = 0.3, T = 20
  std::optional<UqEvaluation> site_lift, site_propagate;  // T = 50
};

UqCommand uq_command(const ExperimentConfig& cfg, UqMethod method, Site site, double p, int T) {
  UqCommand c;
  c.uq.method = method;
  c.uq.site = site;
  c.uq.p = p;
  c.uq.T = T;
  c.uq.seed = derive_seed(cfg.seed, SeedPurpose::Uq);
  c.target = cfg.target_coverage;
  return c;
}

// Fills `run` step by step so a late failure keeps the earlier results.
void run_seed(SeedRun& run, std::uint64_t seed, const fs::path& root) {
  run.seed = seed;
  run.cfg = load_experiment_config(kSource / "configs" / "default.json");
  run.cfg.seed = seed;
  run.cfg.output_dir = root / ("seed" + std::to_string(seed));
  fs::remove_all(run.cfg.output_dir);
  const ExperimentConfig& cfg = run.cfg;
  {
    const Stopwatch sw;
    cmd_gen_data(cfg);
    run.gen_seconds = sw.seconds();
  }
  {
    const Stopwatch sw;
    const auto s = cmd_train(cfg, TrainCommand{});
    run.train_seconds = sw.seconds();
    run.test_rel_l2 = s.test_rel_l2.front();
    run.trained = true;
  }
  {
    // epoch,train_rel_l2,eval_rel_l2
    std::ifstream hist(Layout{cfg.output_dir}.model(ModelKind::Main) / "history.csv");
    std::string line;
    std::vector<double> evals;
    std::getline(hist, line);
    while (std::getline(hist, line)) {
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) continue;
      char* end = nullptr;
      const double v = std::strtod(line.c_str() + comma + 1, &end);
      if (end != line.c_str() + comma + 1) evals.push_back(v);
    }
    if (!evals.empty()) {
      run.first_eval = evals.front();
      run.last_eval = evals.back();
    }
  }
  TrainCommand md;
  md.kind = ModelKind::McDropout;
  cmd_train(cfg, md);
  run.test = load_pairs(Layout{cfg.output_dir}.split("test"));
  {
    const Stopwatch sw;
    run.lift = cmd_uq(cfg, uq_command(cfg, UqMethod::LiftDropout, Site::Lift, 0.3, 20));
    run.lift_uq_seconds = sw.seconds();
  }
  run.naive = cmd_uq(cfg, uq_command(cfg, UqMethod::NaiveMcDropout, Site::Lift, 0.3, 20));
  run.site_lift = cmd_uq(cfg, uq_command(cfg, UqMethod::LiftDropout, Site::Lift, 0.3, 50));
  run.site_propagate = cmd_uq(cfg, uq_command(cfg, UqMethod::LiftDropout, Site::Propagate, 0.3, 50));
}

struct Orderings {
  bool a = false, b = false;
  std::string detail;
};

Orderings orderings(const SeedRun& run) {
  Orderings o;
  const auto& A = run.lift->row.report;
  const auto& N = run.naive->row.report;
  o.a = A.total_cr >= N.total_cr && A.avg_bw_all <= 1.1 * N.avg_bw_all;
  o.b = run.site_propagate->mean_rel_l2 >= run.site_lift->mean_rel_l2;
  o.detail = "seed " + std::to_string(run.seed) + ": (a) C.R. " + fmt(A.total_cr) + " vs " + fmt(N.total_cr) +
             ", B.W. ratio " + fmt(A.avg_bw_all / N.avg_bw_all) + (o.a ? " ok" : " FAIL") +
             "; (b) MC-mean rel L2 propagate " + fmt(run.site_propagate->mean_rel_l2) + " vs lift " +
             fmt(run.site_lift->mean_rel_l2) + (o.b ? " ok" : " FAIL");
  return o;
}

void degenerate_regimes(const ExperimentConfig& cfg) {
  criterion(9, "(c) degenerate regimes flagged and deteriorated", [&] {
    const auto rows = cmd_sweep(cfg);
    bool ok = true;
    std::string detail;
    for (UqMethod m : cfg.sweep.methods) {
      const std::string name = method_name(m);
      const SweepRow* ref = nullptr;
      for (const auto& r : rows) {
        if (r.metrics.method == name && r.metrics.p == cfg.sweep.reference_p && r.metrics.T == cfg.sweep.reference_T) ref = &r;
      }
      if (!ref || ref->status != "ok") {
        ok = false;
        detail += name + ": reference row missing; ";
        continue;
      }
      int degenerate = 0, flagged = 0, worse = 0;
      for (const auto& r : rows) {
        if (r.metrics.method != name || !(r.metrics.p >= 0.9 || r.metrics.T <= 5)) continue;
        ++degenerate;
        flagged += !r.degenerate_reason.empty();
        const bool failed = r.status != "ok";
        worse += failed || r.metrics.report.total_cr < ref->metrics.report.total_cr ||
                 r.metrics.report.avg_bw_all > ref->metrics.report.avg_bw_all;
      }
      ok = ok && degenerate > 0 && flagged == degenerate && worse == degenerate;
      detail += name + ": " + std::to_string(flagged) + "/" + std::to_string(degenerate) + " flagged, " +
                std::to_string(worse) + "/" + std::to_string(degenerate) + " worse than p=" +
                fmt(cfg.sweep.reference_p) + ",T=" + std::to_string(cfg.sweep.reference_T) + "; ";
    }
    report(9, "(c) degenerate regimes flagged and deteriorated", ok, detail + std::to_string(rows.size()) + " sweep rows");
  });
}

void trained_criteria(const fs::path& root) {
  SeedRun first;
  try {
    run_seed(first, 1, root);
  } catch (const std::exception& e) {
    std::cout << "seed 1 pipeline failed: " << e.what() << std::endl;
  }
  const ExperimentConfig& cfg = first.cfg;

  if (first.gen_seconds > 0.0) darcy_dataset(cfg, first.gen_seconds);
  else report(3, "Darcy dataset stencil residuals", false, "data generation failed");

  report(4, "default training",
         first.trained && first.test_rel_l2 <= 0.15 && first.train_seconds <= 600.0 && first.last_eval < first.first_eval,
         first.trained ? "held-out (test) relative L2 " + fmt(first.test_rel_l2) + " after " +
                             std::to_string(cfg.train.epochs) + " epochs, eval loss " + fmt(first.first_eval) +
                             " -> " + fmt(first.last_eval) + ", " + fmt(first.train_seconds, 4) + " s"
                       : "training did not complete");

  criterion(6, "feature masking vs column-scaled weights through cmd_uq", [&] {
    UqCommand w = uq_command(cfg, UqMethod::LiftDropout, Site::Lift, 0.3, 20);
    w.uq.route = LiftRoute::ColumnScaledWeights;
    cmd_uq(cfg, w);
    const Layout lay{cfg.output_dir};
    const fs::path a = lay.uq(uq_tag(uq_command(cfg, UqMethod::LiftDropout, Site::Lift, 0.3, 20).uq));
    const fs::path b = lay.uq(uq_tag(w.uq));
    bool same = true;
    std::string detail;
    for (const char* f : {"predictions/mean.bin", "predictions/sigma.bin", "predictions/band.bin", "metrics.csv"}) {
      const bool eq = fs::exists(a / f) && slurp(a / f) == slurp(b / f);
      same = same && eq;
      detail += std::string(f) + (eq ? " identical; " : " DIFFERS; ");
    }
    report(6, "feature masking vs column-scaled weights through cmd_uq", same, detail);
  });

  metric_oracles(first.lift ? &*first.lift : nullptr, &first.test);

  if (first.lift) {
    const auto& r = first.lift->row.report;
    report(8, "calibrated Method A coverage (p = 0.3, T = 20)",
           r.total_cr >= 0.93 && r.total_cr <= 1.0 && first.lift_uq_seconds < 120.0,
           "k " + fmt(first.lift->calibration.k) + " (calibration coverage " +
               fmt(first.lift->calibration.achieved_on_cal) + "), test Total C.R. " + fmt(r.total_cr) +
               ", Avg C.R. " + fmt(r.avg_cr) + ", normalized B.W. " + fmt(r.avg_bw_all) + ", UQ wall time " +
               fmt(first.lift_uq_seconds, 3) + " s");
  } else {
    report(8, "calibrated Method A coverage (p = 0.3, T = 20)", false, "UQ did not run");
  }

  // (a) and (b): seed 1 first, seeds 2 and 3 only when seed 1 misses one.
  criterion(9, "(a) Method A vs MC-Dropout, (b) propagate vs lift site", [&] {
    if (!first.lift || !first.naive || !first.site_lift || !first.site_propagate) {
      throw std::runtime_error("seed 1 UQ runs incomplete");
    }
    std::vector<Orderings> results{orderings(first)};
    if (!(results[0].a && results[0].b)) {
      for (std::uint64_t s : {2, 3}) {
        try {
          SeedRun extra;
          run_seed(extra, s, root);
          results.push_back(orderings(extra));
        } catch (const std::exception& e) {
          Orderings failed;
          failed.detail = "seed " + std::to_string(s) + ": " + e.what();
          results.push_back(failed);
        }
      }
    }
    int a_ok = 0, b_ok = 0;
    std::string detail;
    for (const auto& o : results) {
      a_ok += o.a;
      b_ok += o.b;
      detail += o.detail + "; ";
    }
    const bool pass = results.size() == 1 ? (a_ok == 1 && b_ok == 1) : (a_ok >= 2 && b_ok >= 2);
    report(9, "(a) Method A vs MC-Dropout, (b) propagate vs lift site", pass,
           detail + "(a) " + std::to_string(a_ok) + "/" + std::to_string(results.size()) + ", (b) " +
               std::to_string(b_ok) + "/" + std::to_string(results.size()));
  });

  if (first.trained) degenerate_regimes(cfg);
  else report(9, "(c) degenerate regimes flagged and deteriorated", false, "no trained model");
}

// ---------------------------------------------------------------------------
// Determinism through the CLI on the smoke configuration.

int run_cli(const fs::path& dir, const std::string& workers, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && LIFTUQ_WORKERS=" + workers + " '" + kCli.string() + "' " +
                          args + " --config '" + (kSource / "configs" / "smoke.json").string() +
                          "' --out smoke_out > cli.log 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

double smoke_pipeline(const fs::path& dir, const std::string& workers) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Stopwatch sw;
  for (const char* args : {"gen-data", "train", "train --model mcdropout", "train --ensemble 2",
                           "uq --method lift_dropout --p 0.3 --T 20", "uq --method lift_gaussian --p 0.3 --T 20",
                           "uq --method naive_mcdropout --p 0.3 --T 20", "uq --method input_perturbation --T 20",
                           "uq --method ensemble --ensemble 2", "sweep",
                           "render --field residual --case 0 --image smoke_out/residual.ppm",
                           "render --field coverage-mask --case 1 --image smoke_out/mask.ppm"}) {
    if (run_cli(dir, workers, args) != 0) {
      throw std::runtime_error(std::string("'liftuq ") + args + "' failed: " + slurp(dir / "cli.log"));
    }
  }
  return sw.seconds();
}

void determinism(const fs::path& root) {
  criterion(10, "determinism (smoke pipeline through the CLI)", [&] {
    const double t1 = smoke_pipeline(root / "serial_a", "1");
    smoke_pipeline(root / "serial_b", "1");
    smoke_pipeline(root / "parallel", "4");
    const auto a = tree_bytes(root / "serial_a" / "smoke_out");
    const auto b = tree_bytes(root / "serial_b" / "smoke_out");
    const auto c = tree_bytes(root / "parallel" / "smoke_out");
    std::size_t csv = 0, csv_same = 0, par_same = 0;
    for (const auto& [name, bytes] : a) {
      const bool is_csv = name.size() > 4 && name.substr(name.size() - 4) == ".csv";
      if (is_csv) {
        ++csv;
        csv_same += c.count(name) && c.at(name) == bytes;
      }
      par_same += c.count(name) && c.at(name) == bytes;
    }
    const bool serial_ok = a == b;
    const bool ok = serial_ok && csv > 0 && csv_same == csv;
    report(10, "determinism (smoke pipeline through the CLI)", ok,
           std::to_string(a.size()) + " files; serial rerun " + (serial_ok ? "byte-identical" : "DIFFERS") +
               "; parallel (4 workers): " + std::to_string(csv_same) + "/" + std::to_string(csv) +
               " CSV files identical, " + std::to_string(par_same) + "/" + std::to_string(a.size()) +
               " files identical overall; smoke pipeline " + fmt(t1, 3) + " s");
  });
}

}  // namespace

int main() {
  const fs::path root = fs::current_path() / "acceptance_out";
  fs::create_directories(root);
  std::cout << "acceptance run in " << root.string() << std::endl;

  gradient_check();
  spectral_oracle();
  darcy_center();
  moments();
  census();
  determinism(root);
  trained_criteria(root);

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASS" : std::to_string(g_failures) + " criterion line(s) FAILED")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
