// liftuq: data generation, training, lifting-only Monte Carlo UQ, sweeps and
// heatmap rendering for the Darcy workbench.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "liftuq/experiment.hpp"
#include "liftuq/text.hpp"

namespace {

using namespace liftuq;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)");
  app->add_option("--seed", c.seed, "experiment seed");
  app->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output_dir = *c.out;
  cfg.validate();
  return cfg;
}

std::string pct(double v) { return format_double(std::round(v * 1e6) / 1e6); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lifting-only Monte Carlo uncertainty for a Fourier neural operator on Darcy flow"};
  app.require_subcommand(1);

  Common gen_c, train_c, uq_c, sweep_c, render_c;

  auto* gen = app.add_subcommand("gen-data", "generate train/calibration/test splits");
  add_common(gen, gen_c);

  auto* tr = app.add_subcommand("train", "train the operator (or the MC-Dropout model, or an ensemble)");
  add_common(tr, train_c);
  std::string model = "main";
  int ensemble = 0;
  bool resume = false, verbose = false;
  tr->add_option("--model", model, "main | mcdropout")->check(CLI::IsMember({"main", "mcdropout"}));
  tr->add_option("--ensemble", ensemble, "train K ensemble members instead");
  tr->add_flag("--resume", resume, "continue from the saved training state");
  tr->add_flag("--verbose", verbose, "print per-epoch losses");

  auto* uq = app.add_subcommand("uq", "calibrate and evaluate one UQ configuration");
  add_common(uq, uq_c);
  std::optional<std::string> method, site, route, tag;
  std::optional<double> p, target;
  std::optional<int> T, uq_ensemble;
  uq->add_option("--method", method,
                 "lift_dropout | lift_gaussian | naive_mcdropout | input_perturbation | ensemble");
  uq->add_option("--site", site, "lift | propagate | recover | all");
  uq->add_option("--p", p, "dropout rate");
  uq->add_option("--T", T, "Monte Carlo samples");
  uq->add_option("--ensemble", uq_ensemble, "ensemble members to load");
  uq->add_option("--target-coverage", target, "calibration target");
  uq->add_option("--lift-route", route, "feature | weights");
  uq->add_option("--tag", tag, "output subdirectory name under uq/");

  auto* sw = app.add_subcommand("sweep", "p-T sweep over the configured methods");
  add_common(sw, sweep_c);
  std::optional<double> sweep_target;
  sw->add_option("--target-coverage", sweep_target, "calibration target");

  auto* rd = app.add_subcommand("render", "write a PPM heatmap of one test case");
  add_common(rd, render_c);
  std::string field = "residual", image, predictions;
  int case_index = 0;
  std::optional<double> vmin, vmax;
  rd->add_option("--field", field, "residual | sigma | band | coverage-mask | input | truth | mean");
  rd->add_option("--case", case_index, "test case index");
  rd->add_option("--predictions", predictions, "UQ output directory (default: uq/<tag> of the first uq entry)");
  rd->add_option("--min", vmin, "color range minimum");
  rd->add_option("--max", vmax, "color range maximum");
  rd->add_option("--image", image, "output .ppm path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c);
      cmd_gen_data(cfg);
      std::cout << "wrote " << cfg.data.n_train << "/" << cfg.data.n_cal << "/" << cfg.data.n_test
                << " samples to " << (cfg.output_dir / "data").string() << '\n';
    } else if (*tr) {
      const auto cfg = resolve(train_c);
      TrainCommand cmd;
      cmd.kind = model == "mcdropout" ? ModelKind::McDropout : ModelKind::Main;
      if (tr->count("--ensemble")) {
        if (ensemble < 2) throw ConfigError("--ensemble needs K >= 2");
        cmd.kind = ModelKind::Ensemble;
        cmd.members = ensemble;
      }
      cmd.resume = resume;
      cmd.verbose = verbose;
      const auto s = cmd_train(cfg, cmd);
      for (std::size_t i = 0; i < s.checkpoints.size(); ++i) {
        std::cout << s.checkpoints[i].string() << ": best eval rel L2 " << pct(s.best_eval[i])
                  << ", test rel L2 " << pct(s.test_rel_l2[i]) << '\n';
      }
    } else if (*uq) {
      const auto cfg = resolve(uq_c);
      UqCommand cmd;
      cmd.uq = cfg.uq.empty() ? UqConfig{} : cfg.uq.front();
      if (method) cmd.uq.method = parse_method(*method);
      if (site) cmd.uq.site = parse_site(*site);
      if (route) cmd.uq.route = parse_lift_route(*route);
      if (p) cmd.uq.p = *p;
      if (T) cmd.uq.T = *T;
      cmd.uq.seed = derive_seed(cfg.seed, SeedPurpose::Uq);
      cmd.target = target.value_or(cfg.target_coverage);
      cmd.ensemble_members = uq_ensemble.value_or(cfg.ensemble_size);
      cmd.tag = tag;
      const auto ev = cmd_uq(cfg, cmd);
      const auto& r = ev.row.report;
      std::cout << uq_tag(cmd.uq) << ": k " << format_double(ev.calibration.k) << ", total C.R. "
                << pct(r.total_cr) << ", avg C.R. " << pct(r.avg_cr) << ", B.W. " << pct(r.avg_bw_all)
                << ", mean rel L2 " << pct(ev.mean_rel_l2) << '\n';
    } else if (*sw) {
      auto cfg = resolve(sweep_c);
      if (sweep_target) cfg.target_coverage = *sweep_target;
      cfg.validate();
      const auto rows = cmd_sweep(cfg);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.status != "ok";
      std::cout << "wrote " << rows.size() << " rows to " << Layout{cfg.output_dir}.sweep_csv().string();
      if (failed) std::cout << " (" << failed << " failed)";
      std::cout << '\n';
    } else if (*rd) {
      const auto cfg = resolve(render_c);
      const Layout layout{cfg.output_dir};
      RenderCommand cmd;
      cmd.field = parse_selector(field);
      cmd.case_index = case_index;
      cmd.range.min = vmin;
      cmd.range.max = vmax;
      cmd.image = image;
      cmd.truth = layout.split("test");
      cmd.predictions = predictions.empty() ? layout.uq(uq_tag(cfg.uq.empty() ? UqConfig{} : cfg.uq.front()))
                                            : std::filesystem::path(predictions);
      cmd_render(cmd);
      std::cout << "wrote " << image << '\n';
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
