#include "liftuq/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "liftuq/parallel.hpp"
#include "liftuq/text.hpp"

namespace liftuq {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Reads keys of one JSON object, remembering which were used so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where() + "." + key + " has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown key " + where() + "." + key);
    }
  }

  std::string where() const { return path_.empty() ? "config" : path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

UqConfig read_uq(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  UqConfig u;
  u.method = parse_method(r.get<std::string>("method", method_name(u.method)));
  u.site = parse_site(r.get<std::string>("site", site_name(u.site)));
  u.p = r.get("p", u.p);
  u.T = r.get("T", u.T);
  u.input_noise_std = r.get("input_noise_std", u.input_noise_std);
  u.route = parse_lift_route(r.get<std::string>("route", lift_route_name(u.route)));
  r.finish();
  return u;
}

json uq_json(const UqConfig& u) {
  return json{{"method", method_name(u.method)}, {"site", site_name(u.site)},  {"p", u.p},
              {"T", u.T}, {"input_noise_std", u.input_noise_std}, {"route", lift_route_name(u.route)}};
}

json config_to_json(const ExperimentConfig& c, bool with_output_dir) {
  json j;
  j["schema_version"] = kExperimentSchemaVersion;
  j["seed"] = c.seed;
  j["grid"] = {{"nx", c.grid.nx()}, {"ny", c.grid.ny()}};
  const auto& co = c.data.coefficient;
  j["data"] = {{"n_train", c.data.n_train},
               {"n_cal", c.data.n_cal},
               {"n_test", c.data.n_test},
               {"solver_tol", c.data.solver_tol},
               {"coefficient",
                {{"correlation_length", co.correlation_length},
                 {"a_low", co.a_low},
                 {"a_high", co.a_high},
                 {"threshold", co.threshold}}}};
  j["operator"] = {{"d_a", c.op.d_a},       {"d_v", c.op.d_v},     {"d_u", c.op.d_u},
                   {"layers", c.op.layers}, {"k_max", c.op.k_max}, {"activation", activation_name(c.op.activation)}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"final_learning_rate", c.train.final_learning_rate},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"eval_every", c.train.eval_every}};
  j["mcdropout_train_p"] = c.mcdropout_train_p;
  j["ensemble_size"] = c.ensemble_size;
  j["uq"] = json::array();
  for (const auto& u : c.uq) j["uq"].push_back(uq_json(u));
  j["target_coverage"] = c.target_coverage;
  json methods = json::array(), sites = json::array();
  for (auto m : c.sweep.methods) methods.push_back(method_name(m));
  for (auto s : c.sweep.sites) sites.push_back(site_name(s));
  j["sweep"] = {{"p", c.sweep.p},
                {"T", c.sweep.T},
                {"methods", methods},
                {"sites", sites},
                {"reference_p", c.sweep.reference_p},
                {"reference_T", c.sweep.reference_T}};
  if (with_output_dir) j["output_dir"] = c.output_dir.string();
  return j;
}

// Config echoed into artifacts; the output directory is left out so that
// identical runs into different directories produce identical files.
std::string manifest_config(const ExperimentConfig& cfg) { return config_to_json(cfg, false).dump(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void prepare_output(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  write_text(cfg.output_dir / "resolved_config.json", config_to_json(cfg, false).dump(2) + "\n");
}

bool is_lift_method(UqMethod m) { return m == UqMethod::LiftDropout || m == UqMethod::LiftGaussian; }

std::vector<OperatorParams> load_members(const ExperimentConfig& cfg, UqMethod method, int ensemble_members) {
  const Layout layout{cfg.output_dir};
  auto load = [&](ModelKind kind, int member) {
    const fs::path dir = layout.model(kind, member) / "checkpoint";
    if (!fs::exists(dir)) throw ConfigError("missing checkpoint " + dir.string() + " (run train first)");
    return load_checkpoint(dir, cfg.op);
  };
  std::vector<OperatorParams> out;
  switch (method) {
    case UqMethod::NaiveMcDropout:
      out.push_back(load(ModelKind::McDropout, 0));
      break;
    case UqMethod::Ensemble:
      if (ensemble_members < 2) throw ConfigError("the ensemble method needs at least two checkpoints");
      for (int i = 0; i < ensemble_members; ++i) out.push_back(load(ModelKind::Ensemble, i));
      break;
    default:
      out.push_back(load(ModelKind::Main, 0));
  }
  return out;
}

Tensor stack_fields(const std::string& name, const std::vector<Field>& fields) {
  Tensor t;
  t.name = name;
  const Grid2D& g = fields.front().grid();
  t.shape = {fields.size(), static_cast<std::size_t>(g.ny()), static_cast<std::size_t>(g.nx()),
             static_cast<std::size_t>(fields.front().channels())};
  for (const auto& f : fields) t.data.insert(t.data.end(), f.values().begin(), f.values().end());
  return t;
}

Field case_field(const Tensor& t, const Grid2D& grid, std::size_t i) {
  if (t.shape.size() != 4) throw IoError("tensor " + t.name + " must have rank 4");
  if (t.shape[1] != static_cast<std::size_t>(grid.ny()) || t.shape[2] != static_cast<std::size_t>(grid.nx())) {
    throw ConfigError("tensor " + t.name + " does not match the truth grid");
  }
  if (i >= t.shape[0]) {
    throw ConfigError("case " + std::to_string(i) + " out of range (" + std::to_string(t.shape[0]) + " cases)");
  }
  const std::size_t len = grid.size() * t.shape[3];
  return Field(grid, static_cast<int>(t.shape[3]),
               std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(i * len),
                                   t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * len)));
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::vector<McPrediction> predict_cases(const std::vector<OperatorParams>& members,
                                        const std::vector<TrainingPair>& pairs, const UqConfig& uq,
                                        std::uint64_t split) {
  std::vector<McPrediction> preds(pairs.size());
  const RngStream root = RngStream(uq.seed).fork(split);
  parallel_for(pairs.size(), [&](std::size_t i) {
    preds[i] = predict(pairs[i].input, members, uq, root.fork(i));
  });
  return preds;
}

std::vector<Field> residuals_of(const std::vector<McPrediction>& preds, const std::vector<TrainingPair>& pairs) {
  std::vector<Field> r;
  for (std::size_t i = 0; i < preds.size(); ++i) r.push_back(subtract(preds[i].mean, pairs[i].target));
  return r;
}

std::vector<Field> sigmas_of(const std::vector<McPrediction>& preds) {
  std::vector<Field> s;
  for (const auto& p : preds) s.push_back(p.sigma);
  return s;
}

double fit_k(const std::vector<OperatorParams>& members, const std::vector<TrainingPair>& cal,
             const UqConfig& uq, double target, CalibrationResult* out) {
  const auto preds = predict_cases(members, cal, uq, 1);
  const auto res = fit_calibration_scale(residuals_of(preds, cal), sigmas_of(preds), target);
  if (out) *out = res;
  return res.k;
}

std::vector<double> calibration_normalization(const std::vector<TrainingPair>& cal) {
  std::vector<Field> truths;
  for (const auto& p : cal) truths.push_back(p.target);
  return normalization_constants(truths);
}

}  // namespace

void ExperimentConfig::validate() const {
  data.coefficient.validate(grid);
  if (data.n_train < 1 || data.n_cal < 1 || data.n_test < 1) {
    throw ConfigError("every split needs at least one sample");
  }
  if (!(data.solver_tol > 0.0)) throw ConfigError("solver_tol must be positive");
  op.validate(grid);
  if (op.d_a != 3) throw ConfigError("operator.d_a must be 3 (coefficient, x, y)");
  if (op.d_u != 1) throw ConfigError("operator.d_u must be 1 for Darcy flow");
  train.validate();
  if (!(mcdropout_train_p > 0.0 && mcdropout_train_p < 1.0)) {
    throw ConfigError("mcdropout_train_p must lie in (0, 1)");
  }
  if (ensemble_size < 2) throw ConfigError("ensemble_size must be at least 2");
  for (const auto& u : uq) u.validate();
  if (!(target_coverage > 0.0 && target_coverage <= 1.0)) {
    throw ConfigError("target_coverage must lie in (0, 1]");
  }
  for (double p : sweep.p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("sweep p values must lie in [0, 1)");
  }
  for (int t : sweep.T) {
    if (t < 1) throw ConfigError("sweep T values must be >= 1");
  }
  for (auto m : sweep.methods) {
    if (!is_lift_method(m) && m != UqMethod::NaiveMcDropout) {
      throw ConfigError("sweep methods must be lift_dropout, lift_gaussian or naive_mcdropout");
    }
  }
  if (!(sweep.reference_p > 0.0 && sweep.reference_p < 1.0) || sweep.reference_T < 2) {
    throw ConfigError("sweep reference needs p in (0, 1) and T >= 2");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ObjectReader top(j, "");
  if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("config lacks schema_version");
  const int version = top.get("schema_version", 0);
  if (version != kExperimentSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + std::to_string(version));
  }
  ExperimentConfig c;
  c.seed = top.get<std::uint64_t>("seed", c.seed);
  if (const json* g = top.child("grid")) {
    ObjectReader r(*g, "grid");
    const int nx = r.get("nx", c.grid.nx());
    const int ny = r.get("ny", c.grid.ny());
    r.finish();
    c.grid = Grid2D(nx, ny);
  }
  if (const json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    c.data.n_train = r.get("n_train", c.data.n_train);
    c.data.n_cal = r.get("n_cal", c.data.n_cal);
    c.data.n_test = r.get("n_test", c.data.n_test);
    c.data.solver_tol = r.get("solver_tol", c.data.solver_tol);
    if (const json* co = r.child("coefficient")) {
      ObjectReader rc(*co, "data.coefficient");
      auto& cc = c.data.coefficient;
      cc.correlation_length = rc.get("correlation_length", cc.correlation_length);
      cc.a_low = rc.get("a_low", cc.a_low);
      cc.a_high = rc.get("a_high", cc.a_high);
      cc.threshold = rc.get("threshold", cc.threshold);
      rc.finish();
    }
    r.finish();
  }
  if (const json* o = top.child("operator")) {
    ObjectReader r(*o, "operator");
    c.op.d_a = r.get("d_a", c.op.d_a);
    c.op.d_v = r.get("d_v", c.op.d_v);
    c.op.d_u = r.get("d_u", c.op.d_u);
    c.op.layers = r.get("layers", c.op.layers);
    c.op.k_max = r.get("k_max", c.op.k_max);
    c.op.activation = parse_activation(r.get<std::string>("activation", activation_name(c.op.activation)));
    r.finish();
  }
  if (const json* t = top.child("train")) {
    ObjectReader r(*t, "train");
    auto& tc = c.train;
    tc.epochs = r.get("epochs", tc.epochs);
    tc.batch_size = r.get("batch_size", tc.batch_size);
    tc.learning_rate = r.get("learning_rate", tc.learning_rate);
    tc.final_learning_rate = r.get("final_learning_rate", tc.final_learning_rate);
    tc.adam_beta1 = r.get("adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = r.get("adam_beta2", tc.adam_beta2);
    tc.adam_eps = r.get("adam_eps", tc.adam_eps);
    tc.eval_every = r.get("eval_every", tc.eval_every);
    r.finish();
  }
  c.mcdropout_train_p = top.get("mcdropout_train_p", c.mcdropout_train_p);
  c.ensemble_size = top.get("ensemble_size", c.ensemble_size);
  if (const json* u = top.child("uq")) {
    if (!u->is_array()) throw ConfigError("config.uq must be an array");
    c.uq.clear();
    for (std::size_t i = 0; i < u->size(); ++i) c.uq.push_back(read_uq((*u)[i], "uq[" + std::to_string(i) + "]"));
  }
  c.target_coverage = top.get("target_coverage", c.target_coverage);
  if (const json* s = top.child("sweep")) {
    ObjectReader r(*s, "sweep");
    c.sweep.p = r.get("p", c.sweep.p);
    c.sweep.T = r.get("T", c.sweep.T);
    if (const json* m = r.child("methods")) {
      c.sweep.methods.clear();
      for (const auto& v : m->get<std::vector<std::string>>()) c.sweep.methods.push_back(parse_method(v));
    }
    if (const json* st = r.child("sites")) {
      c.sweep.sites.clear();
      for (const auto& v : st->get<std::vector<std::string>>()) c.sweep.sites.push_back(parse_site(v));
    }
    c.sweep.reference_p = r.get("reference_p", c.sweep.reference_p);
    c.sweep.reference_T = r.get("reference_T", c.sweep.reference_T);
    r.finish();
  }
  c.output_dir = top.get<std::string>("output_dir", c.output_dir.string());
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_json(const ExperimentConfig& cfg) { return config_to_json(cfg, true).dump(2); }

std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose, std::uint64_t index) {
  RngStream s = RngStream(seed).fork(static_cast<std::uint64_t>(purpose)).fork(index);
  return s.next_u64();
}

fs::path Layout::model(ModelKind kind, int member) const {
  switch (kind) {
    case ModelKind::Main: return root / "model" / "main";
    case ModelKind::McDropout: return root / "model" / "mcdropout";
    case ModelKind::Ensemble: return root / "model" / "ensemble" / ("member_" + std::to_string(member));
  }
  return root / "model";
}

std::vector<TrainingPair> load_pairs(const fs::path& split_dir) {
  if (!fs::exists(split_dir)) throw ConfigError("missing dataset " + split_dir.string() + " (run gen-data first)");
  return make_training_pairs(unpack_samples(read_dataset(split_dir)));
}

void cmd_gen_data(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_output(cfg);
  const Layout layout{cfg.output_dir};
  DarcySplits splits = generate_dataset(derive_seed(cfg.seed, SeedPurpose::Data), cfg.grid,
                                        cfg.data.coefficient, cfg.data.n_train, cfg.data.n_cal,
                                        cfg.data.n_test, cfg.data.solver_tol);
  const std::string echo = manifest_config(cfg);
  for (auto* c : {&splits.train, &splits.calibration, &splits.test}) c->set_meta("experiment_config", echo);
  write_dataset(layout.split("train"), splits.train);
  write_dataset(layout.split("calibration"), splits.calibration);
  write_dataset(layout.split("test"), splits.test);
}

TrainSummary cmd_train(const ExperimentConfig& cfg, const TrainCommand& cmd) {
  cfg.validate();
  prepare_output(cfg);
  const Layout layout{cfg.output_dir};
  const auto train_set = load_pairs(layout.split("train"));
  const auto cal_set = load_pairs(layout.split("calibration"));
  const auto test_set = load_pairs(layout.split("test"));

  int count = 1;
  if (cmd.kind == ModelKind::Ensemble) {
    count = cmd.members > 0 ? cmd.members : cfg.ensemble_size;
    if (count < 2) throw ConfigError("an ensemble needs at least two members");
  }
  TrainSummary summary;
  for (int member = 0; member < count; ++member) {
    TrainConfig tc = cfg.train;
    switch (cmd.kind) {
      case ModelKind::Main:
        tc.seed = derive_seed(cfg.seed, SeedPurpose::TrainMain);
        break;
      case ModelKind::McDropout:
        tc.seed = derive_seed(cfg.seed, SeedPurpose::TrainMcDropout);
        tc.dropout_p = cfg.mcdropout_train_p;
        break;
      case ModelKind::Ensemble:
        tc.seed = derive_seed(cfg.seed, SeedPurpose::Ensemble, static_cast<std::uint64_t>(member));
        break;
    }
    const fs::path dir = layout.model(cmd.kind, member);
    std::optional<TrainState> resume;
    if (cmd.resume) {
      if (!fs::exists(dir / "state")) throw ConfigError("nothing to resume in " + dir.string());
      resume = load_train_state(dir / "state");
    }
    const EpochCallback progress = [&](const TrainState& st) {
      if (cmd.verbose) {
        const HistoryRow& row = st.history.back();
        std::cerr << "epoch " << row.epoch << " train " << format_double(row.train_rel_l2);
        if (row.eval_rel_l2) std::cerr << " eval " << format_double(*row.eval_rel_l2);
        std::cerr << '\n';
      }
      // Periodic snapshot so an interrupted run can be resumed.
      if (st.epochs_completed % 25 == 0 && st.epochs_completed < tc.epochs) save_train_state(st, dir / "state");
      return true;
    };
    TrainResult res;
    try {
      res = train(train_set, cal_set, cfg.op, tc, resume ? &*resume : nullptr, progress);
    } catch (const TrainingDiverged& e) {
      fs::create_directories(dir);
      write_history_csv(dir / "history.csv", e.history());
      throw;
    }
    DatasetContainer ck = checkpoint_container(res.best);
    ck.set_meta("experiment_config", manifest_config(cfg));
    ck.set_meta("train.seed", std::to_string(tc.seed));
    ck.set_meta("train.dropout_p", format_double(tc.dropout_p));
    ck.set_meta("epochs_completed", std::to_string(res.state.epochs_completed));
    write_dataset(dir / "checkpoint", ck);
    save_train_state(res.state, dir / "state");
    write_history_csv(dir / "history.csv", res.history);
    summary.checkpoints.push_back(dir / "checkpoint");
    summary.best_eval.push_back(res.best_eval);
    summary.test_rel_l2.push_back(evaluate_rel_l2(test_set, res.best));
  }
  return summary;
}

std::string uq_tag(const UqConfig& uq) {
  std::string tag = method_name(uq.method);
  if (is_lift_method(uq.method)) tag += "_" + site_name(uq.site);
  if (uq.method != UqMethod::Ensemble) {
    if (uq.method != UqMethod::InputPerturbation) tag += "_p" + format_double(uq.p);
    tag += "_T" + std::to_string(uq.T);
  }
  if (uq.route == LiftRoute::ColumnScaledWeights) tag += "_weights";
  return tag;
}

UqEvaluation evaluate_uq(const std::vector<OperatorParams>& members, const std::vector<TrainingPair>& cal,
                         const std::vector<TrainingPair>& test, const UqConfig& uq, double target,
                         const std::vector<double>& normalization, std::optional<double> fixed_k) {
  uq.validate();
  if (cal.empty() || test.empty()) throw ConfigError("calibration and test splits must be nonempty");
  UqEvaluation ev;
  ev.uq = uq;
  if (fixed_k) {
    ev.calibration.k = *fixed_k;
    ev.calibration.target_coverage = target;
    ev.shared_k = true;
  } else {
    fit_k(members, cal, uq, target, &ev.calibration);
  }
  ev.test_predictions = predict_cases(members, test, uq, 2);
  const auto residuals = residuals_of(ev.test_predictions, test);
  std::vector<Field> bands;
  for (const auto& p : ev.test_predictions) bands.push_back(band_from_sigma(p.sigma, ev.calibration.k));
  ev.row.report = bandwidth_report(residuals, bands, normalization);
  ev.row.method = method_name(uq.method);
  ev.row.site = site_name(uq.site);
  const bool has_p = uq.method != UqMethod::Ensemble && uq.method != UqMethod::InputPerturbation;
  ev.row.p = has_p ? uq.p : 0.0;
  ev.row.T = uq.method == UqMethod::Ensemble ? static_cast<int>(members.size()) : uq.T;
  ev.row.k = ev.calibration.k;
  ev.row.target = target;
  double rel = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) rel += relative_l2_loss(ev.test_predictions[i].mean, test[i].target);
  ev.mean_rel_l2 = rel / static_cast<double>(test.size());
  ev.degenerate_reason = ev.test_predictions.front().degenerate_reason;
  return ev;
}

UqEvaluation cmd_uq(const ExperimentConfig& cfg, const UqCommand& cmd) {
  cfg.validate();
  cmd.uq.validate();
  prepare_output(cfg);
  const Layout layout{cfg.output_dir};
  const auto cal = load_pairs(layout.split("calibration"));
  const auto test = load_pairs(layout.split("test"));
  const auto members = load_members(cfg, cmd.uq.method, cmd.ensemble_members);

  UqEvaluation ev = evaluate_uq(members, cal, test, cmd.uq, cmd.target, calibration_normalization(cal));
  if (!ev.degenerate_reason.empty()) {
    std::cerr << "warning: degenerate configuration: " << ev.degenerate_reason << '\n';
  }
  if (ev.calibration.never_covered > 0) {
    std::cerr << "warning: " << ev.calibration.never_covered << " calibration points have zero sigma and a nonzero residual";
    if (ev.calibration.achieved_on_cal < cmd.target) {
      std::cerr << "; target " << format_double(cmd.target) << " unreachable, calibrated to "
                << format_double(ev.calibration.achieved_on_cal);
    }
    std::cerr << '\n';
  }

  const fs::path dir = layout.uq(cmd.tag.value_or(uq_tag(cmd.uq)));
  fs::create_directories(dir);
  DatasetContainer preds;
  preds.set_meta("kind", "predictions");
  preds.set_meta("method", method_name(cmd.uq.method));
  preds.set_meta("site", site_name(cmd.uq.site));
  preds.set_meta("route", lift_route_name(cmd.uq.route));
  preds.set_meta("p", format_double(cmd.uq.p));
  preds.set_meta("T", std::to_string(cmd.uq.T));
  preds.set_meta("seed", std::to_string(cmd.uq.seed));
  preds.set_meta("k", format_double(ev.calibration.k));
  preds.set_meta("target_coverage", format_double(cmd.target));
  preds.set_meta("degenerate", ev.degenerate_reason);
  preds.set_meta("nx", std::to_string(cfg.grid.nx()));
  preds.set_meta("ny", std::to_string(cfg.grid.ny()));
  preds.set_meta("experiment_config", manifest_config(cfg));
  std::vector<Field> means, sigmas, bands;
  for (const auto& p : ev.test_predictions) {
    means.push_back(p.mean);
    sigmas.push_back(p.sigma);
    bands.push_back(band_from_sigma(p.sigma, ev.calibration.k));
  }
  preds.add(stack_fields("mean", means));
  preds.add(stack_fields("sigma", sigmas));
  preds.add(stack_fields("band", bands));
  write_dataset(dir / "predictions", preds);
  const std::vector<MetricsRow> rows{ev.row};
  write_metrics_csv(dir / "metrics.csv", rows);
  json calib = {{"k", ev.calibration.k},
                {"target_coverage", ev.calibration.target_coverage},
                {"achieved_on_cal", ev.calibration.achieved_on_cal},
                {"points", ev.calibration.points},
                {"never_covered", ev.calibration.never_covered},
                {"normalization", ev.row.report.normalization},
                {"test_mean_rel_l2", ev.mean_rel_l2},
                {"degenerate", ev.degenerate_reason}};
  write_text(dir / "calibration.json", calib.dump(2) + "\n");
  return ev;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const auto cal = load_pairs(layout.split("calibration"));
  const auto test = load_pairs(layout.split("test"));
  const auto norm = calibration_normalization(cal);
  const std::uint64_t seed = derive_seed(cfg.seed, SeedPurpose::Uq);

  struct Cell {
    UqConfig uq;
    std::size_t group;
  };
  struct Group {
    UqMethod method;
    Site site;
    bool shared;
    std::optional<double> k;
    std::string error;
  };
  std::vector<Group> groups;
  std::vector<Cell> cells;
  for (auto m : cfg.sweep.methods) {
    for (auto s : cfg.sweep.sites) {
      if (!is_lift_method(m) && s != Site::Lift) continue;
      groups.push_back({m, s, is_lift_method(m) && s == Site::Lift, std::nullopt, ""});
      for (double p : cfg.sweep.p) {
        for (int T : cfg.sweep.T) {
          UqConfig u;
          u.method = m;
          u.site = s;
          u.p = p;
          u.T = T;
          u.seed = seed;
          cells.push_back({u, groups.size() - 1});
        }
      }
    }
  }
  std::map<UqMethod, std::vector<OperatorParams>> models;
  for (const auto& g : groups) {
    if (!models.count(g.method)) models[g.method] = load_members(cfg, g.method, cfg.ensemble_size);
  }
  for (auto& g : groups) {
    if (!g.shared) continue;
    UqConfig ref;
    ref.method = g.method;
    ref.p = cfg.sweep.reference_p;
    ref.T = cfg.sweep.reference_T;
    ref.seed = seed;
    try {
      g.k = fit_k(models[g.method], cal, ref, cfg.target_coverage, nullptr);
    } catch (const Error& e) {
      g.error = std::string("shared calibration failed: ") + e.what();
    }
  }

  std::vector<SweepRow> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    const Cell& c = cells[i];
    const Group& g = groups[c.group];
    SweepRow& row = rows[i];
    row.metrics.method = method_name(c.uq.method);
    row.metrics.site = site_name(c.uq.site);
    row.metrics.p = c.uq.p;
    row.metrics.T = c.uq.T;
    row.metrics.target = cfg.target_coverage;
    row.degenerate_reason = degenerate_reason(c.uq.p, c.uq.T);
    row.shared_k = g.k;
    if (!g.error.empty()) {
      row.status = "failed: " + g.error;
      return;
    }
    try {
      const UqEvaluation ev = evaluate_uq(models.at(c.uq.method), cal, test, c.uq, cfg.target_coverage, norm,
                                          g.shared ? g.k : std::nullopt);
      row.metrics = ev.row;
      row.mean_rel_l2 = ev.mean_rel_l2;
      row.degenerate_reason = ev.degenerate_reason;
    } catch (const Error& e) {
      row.status = std::string("failed: ") + e.what();
    }
  });
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::string text = std::string(kMetricsHeader) + kSweepExtraHeader + "\n";
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    if (ok) {
      text += metrics_csv_fields(r.metrics);
    } else {
      text += r.metrics.method + ',' + r.metrics.site + ',' + format_double(r.metrics.p) + ',' +
              std::to_string(r.metrics.T) + ",NA," + format_double(r.metrics.target) + ",NA,NA,NA,NA,NA,NA";
    }
    text += ',' + (r.shared_k ? format_double(*r.shared_k) : std::string("NA"));
    text += ',' + (ok ? format_double(r.mean_rel_l2) : std::string("NA"));
    text += ',' + std::string(r.degenerate_reason.empty() ? "0" : "1");
    text += ',' + csv_safe(r.status) + '\n';
  }
  write_text(path, text);
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg) {
  prepare_output(cfg);
  auto rows = run_sweep(cfg);
  const Layout layout{cfg.output_dir};
  write_sweep_csv(layout.sweep_csv(), rows);

  // Coverage spread across p at the reference T: one shared k for the lift
  // methods against per-p recalibration for naive MC-Dropout.
  std::ostringstream summary;
  for (auto m : cfg.sweep.methods) {
    double lo = 1.0, hi = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.status != "ok" || r.metrics.method != method_name(m) || r.metrics.site != "lift" ||
          r.metrics.T != cfg.sweep.reference_T || !r.degenerate_reason.empty()) {
        continue;
      }
      lo = std::min(lo, r.metrics.report.total_cr);
      hi = std::max(hi, r.metrics.report.total_cr);
      ++n;
    }
    summary << method_name(m) << " T=" << cfg.sweep.reference_T << " non-degenerate p values: " << n;
    if (n > 0) {
      summary << ", total_cr range [" << format_double(lo) << ", " << format_double(hi) << "], spread "
              << format_double(hi - lo);
    }
    summary << (is_lift_method(m) ? " (shared k)" : " (k refitted per cell)") << '\n';
  }
  write_text(cfg.output_dir / "sweep_summary.txt", summary.str());
  for (const auto& r : rows) {
    if (!r.degenerate_reason.empty() && r.status == "ok") {
      std::cerr << "warning: degenerate cell " << r.metrics.method << " p=" << format_double(r.metrics.p)
                << " T=" << r.metrics.T << ": " << r.degenerate_reason << '\n';
    }
    if (r.status != "ok") {
      std::cerr << "warning: sweep cell " << r.metrics.method << " p=" << format_double(r.metrics.p)
                << " T=" << r.metrics.T << " " << r.status << '\n';
    }
  }
  return rows;
}

void cmd_render(const RenderCommand& cmd) {
  if (cmd.case_index < 0) throw ConfigError("case index must be >= 0");
  const DatasetContainer truth = read_dataset(cmd.truth);
  const Grid2D grid = container_grid(truth);
  const auto samples = unpack_samples(truth);
  const auto i = static_cast<std::size_t>(cmd.case_index);
  if (i >= samples.size()) {
    throw ConfigError("case " + std::to_string(i) + " out of range (" + std::to_string(samples.size()) + " cases)");
  }
  Field f;
  ColorRange range = cmd.range;
  if (cmd.field == FieldSelector::Input) {
    f = samples[i].a;
  } else if (cmd.field == FieldSelector::Truth) {
    f = samples[i].u;
  } else {
    const DatasetContainer preds = read_dataset(cmd.predictions / "predictions");
    const Field mean = case_field(preds.get("mean"), grid, i);
    switch (cmd.field) {
      case FieldSelector::Mean: f = mean; break;
      case FieldSelector::Sigma: f = case_field(preds.get("sigma"), grid, i); break;
      case FieldSelector::Band: f = case_field(preds.get("band"), grid, i); break;
      case FieldSelector::Residual: f = subtract(mean, samples[i].u); break;
      case FieldSelector::CoverageMask:
        f = miss_mask_field(subtract(mean, samples[i].u), case_field(preds.get("band"), grid, i));
        range.min = 0.0;
        range.max = 1.0;
        break;
      default: break;
    }
  }
  write_bytes(cmd.image, render_ppm(f, range));
}

}  // namespace liftuq
