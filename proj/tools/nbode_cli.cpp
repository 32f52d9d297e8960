// nbode command-line driver: dataset generation, training, evaluation, and
// trajectory export, all config-driven and reproducible from a seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "nbode/checkpoint.hpp"
#include "nbode/dataset.hpp"
#include "nbode/evaluation.hpp"
#include "nbode/experiment.hpp"
#include "nbode/gnn.hpp"
#include "nbode/kernels.hpp"
#include "nbode/ode.hpp"
#include "nbode/parallel.hpp"
#include "nbode/sim.hpp"
#include "nbode/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nbode;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

fs::path resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("NBODE_OUT_DIR")) return env;
  throw CliError(kExitUsage, "no output directory: pass --out or set NBODE_OUT_DIR");
}

fs::path prepare_out_dir(const std::string& flag_value) {
  const fs::path dir = resolve_out_dir(flag_value);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

void echo_config(const fs::path& out_dir, const std::string& command, const json& config) {
  json echo;
  echo["command"] = command;
  echo["config"] = config;
  echo["kernel_backend"] = kernels::backend_name(kernels::active_backend());
  write_json(out_dir / "effective_config.json", echo);
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw CliError(kExitUsage, "empty numeric list: " + csv);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  for (double v : parse_doubles(csv)) out.push_back(static_cast<std::size_t>(v));
  return out;
}

std::vector<evaluation::Fraction> parse_fractions(const std::string& csv) {
  std::vector<evaluation::Fraction> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto slash = item.find('/');
    if (slash == std::string::npos) {
      out.emplace_back(std::stoull(item), 1);
    } else {
      out.emplace_back(std::stoull(item.substr(0, slash)),
                       std::stoull(item.substr(slash + 1)));
    }
  }
  if (out.empty()) throw CliError(kExitUsage, "empty fraction list: " + csv);
  return out;
}

/// Writes both a CSV file and, optionally, a gnuplot-style .dat twin.
void write_table(const fs::path& csv_path, bool gnuplot,
                 const std::vector<std::string>& columns,
                 const std::vector<std::vector<double>>& rows) {
  {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path.string());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out << (c ? "," : "") << columns[c];
    }
    out << '\n';
    out.precision(17);
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
      out << '\n';
    }
  }
  if (gnuplot) {
    fs::path dat_path = csv_path;
    dat_path.replace_extension(".dat");
    std::ofstream out(dat_path);
    if (!out) throw IoError("cannot write " + dat_path.string());
    out << "#";
    for (const auto& c : columns) out << ' ' << c;
    out << '\n';
    out.precision(17);
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << row[c];
      out << '\n';
    }
  }
}

json rollout_points_json(const std::vector<evaluation::RolloutPoint>& points) {
  json arr = json::array();
  for (const auto& p : points) {
    json row;
    row["window"] = p.window;
    if (p.n_alive > 0) {
      row["mse"] = p.mse;
    } else {
      row["mse"] = nullptr;
    }
    row["n_alive"] = p.n_alive;
    row["n_diverged"] = p.n_diverged;
    arr.push_back(row);
  }
  return arr;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOptions {
  std::string system = "gravity";
  std::size_t n_bodies = 5;
  std::size_t n_train = 100;
  std::size_t n_valid = 50;
  std::size_t n_test = 50;
  std::size_t steps = 10000;
  std::size_t record_every = 125;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  double softening = -1.0;  // negative: system default
  double strength = 1.0;
  double position_cap = 1e3;
  std::string out;
  std::size_t threads = 0;
};

int run_gen(const GenOptions& opt) {
  const sim::SystemKind kind = sim::system_kind_from_name(opt.system);
  sim::GenerationConfig config = sim::GenerationConfig::defaults(kind);
  config.n_bodies = opt.n_bodies;
  config.n_train = opt.n_train;
  config.n_valid = opt.n_valid;
  config.n_test = opt.n_test;
  config.total_steps = opt.steps;
  config.record_every = opt.record_every;
  config.dt = opt.dt;
  config.seed = opt.seed;
  if (opt.softening >= 0.0) config.softening = opt.softening;
  config.strength = opt.strength;
  config.position_cap = opt.position_cap;

  const fs::path out_dir = prepare_out_dir(opt.out);
  const std::size_t threads = opt.threads ? opt.threads : default_thread_count();
  const sim::DatasetSummary summary = sim::build_dataset(config, out_dir, threads);

  json config_echo = {{"system", opt.system},
                      {"n_bodies", config.n_bodies},
                      {"counts", {{"train", config.n_train},
                                  {"valid", config.n_valid},
                                  {"test", config.n_test}}},
                      {"total_steps", config.total_steps},
                      {"record_every", config.record_every},
                      {"dt", config.dt},
                      {"seed", config.seed},
                      {"softening", config.softening},
                      {"strength", config.strength},
                      {"position_cap", config.position_cap},
                      {"threads", threads}};
  echo_config(out_dir, "gen", config_echo);

  std::cout << "dataset written to " << out_dir.string() << "\n"
            << "  system=" << opt.system << " n_bodies=" << config.n_bodies
            << " dt=" << config.dt << " steps=" << config.total_steps
            << " recorded=" << config.total_steps / config.record_every << "\n"
            << "  counts: train=" << config.n_train << " valid=" << config.n_valid
            << " test=" << config.n_test << "\n";
  for (const auto& [split, rejections] : summary.rejections) {
    if (rejections > 0) {
      std::cout << "  resampled " << rejections << " trajectories in " << split << "\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string out;
  std::string model = "graph-ode";
  std::string variant = "second-order";
  std::size_t tau = 8;
  std::size_t window_steps = 0;  // 0: resume meta, else 1000
  std::size_t depth = 0;  // 0: family default (8 for graph-ode, 4 for baseline)
  std::size_t hidden = 64;
  std::size_t epochs = 1000;
  std::size_t batch_size = 100;
  double lr = 5e-4;
  double weight_decay = 1e-10;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
  std::string resume;
  std::size_t threads = 0;
};

int run_train(const TrainOptions& opt) {
  const fs::path out_dir = prepare_out_dir(opt.out);
  const sim::Dataset dataset = sim::load_dataset(opt.data);

  experiment::ModelBundle bundle;
  training::TrainerState resume_state;
  nlohmann::json resume_meta;
  bool resuming = false;
  if (!opt.resume.empty()) {
    experiment::LoadedTrainerState loaded = experiment::load_trainer_state(opt.resume);
    bundle = std::move(loaded.bundle);
    resume_state = std::move(loaded.state);
    resume_meta = loaded.meta.value("extra", nlohmann::json::object());
    resuming = true;
  }

  // window resolution: explicit flag, then the resumed run's own setting
  std::size_t window_steps = opt.window_steps;
  if (window_steps == 0 && resuming && resume_meta.contains("window_steps")) {
    window_steps = resume_meta["window_steps"].get<std::size_t>();
  }
  if (window_steps == 0) window_steps = 1000;
  if (window_steps % dataset.config.record_every != 0) {
    throw CliError(kExitUsage, "window of " + std::to_string(window_steps) +
                                   " steps does not land on recorded states");
  }
  const std::size_t window_recorded = window_steps / dataset.config.record_every;
  const double horizon = static_cast<double>(window_steps) * dataset.config.dt;

  const auto train_set = experiment::samples_from_trajectories(dataset.train, window_recorded);
  const auto valid_set = experiment::samples_from_trajectories(dataset.valid, window_recorded);

  if (resuming) {
    // model architecture comes from the checkpoint when resuming
  } else if (opt.model == "graph-ode") {
    Rng rng(opt.seed, 0xbeef);
    bundle.kind = experiment::ModelBundle::Kind::GraphOde;
    const std::size_t depth = opt.depth ? opt.depth : 8;
    bundle.graph_ode = ode::GraphOdeModel::init(
        gnn::AccelEgnnConfig::standard(depth, opt.hidden, 1), {opt.tau, horizon},
        ode::variant_from_name(opt.variant), rng);
  } else if (opt.model == "direct-egnn") {
    Rng rng(opt.seed, 0xbeef);
    bundle.kind = experiment::ModelBundle::Kind::DirectEgnn;
    const std::size_t depth = opt.depth ? opt.depth : 4;
    bundle.direct_config = gnn::DirectEgnnConfig::standard(depth, opt.hidden, 1);
    bundle.direct_params = gnn::DirectEgnnParams::init(bundle.direct_config, rng);
  } else {
    throw CliError(kExitUsage, "unknown model family: " + opt.model);
  }

  training::TrainConfig config;
  config.batch_size = opt.batch_size;
  config.epochs = opt.epochs;
  config.lr = opt.lr;
  config.weight_decay = opt.weight_decay;
  config.patience = opt.patience;
  config.seed = opt.seed;

  json config_echo = {{"data", opt.data},
                      {"model", opt.model},
                      {"variant", opt.variant},
                      {"tau", opt.tau},
                      {"window_steps", window_steps},
                      {"horizon", horizon},
                      {"depth", opt.depth},
                      {"hidden", opt.hidden},
                      {"epochs", opt.epochs},
                      {"batch_size", opt.batch_size},
                      {"lr", opt.lr},
                      {"weight_decay", opt.weight_decay},
                      {"patience", opt.patience},
                      {"seed", opt.seed},
                      {"resume", opt.resume}};
  echo_config(out_dir, "train", config_echo);

  const training::PredictFn predict =
      bundle.kind == experiment::ModelBundle::Kind::GraphOde
          ? experiment::graph_ode_predict_fn(bundle.graph_ode)
          : experiment::direct_egnn_predict_fn(bundle.direct_params, bundle.direct_config);

  std::ofstream log_stream(out_dir / "train_log.jsonl",
                           resuming ? std::ios::app : std::ios::trunc);
  if (!log_stream) throw IoError("cannot write train_log.jsonl in " + out_dir.string());

  json extra_meta = {{"window_steps", window_steps},
                     {"dataset", opt.data},
                     {"seed", opt.seed}};

  training::TrainerState last_good;
  bool have_last_good = resuming;
  if (resuming) last_good = resume_state;

  const training::EpochCallback on_epoch = [&](const training::EpochRecord& record,
                                               const training::TrainerState& state) {
    json line = {{"epoch", record.epoch},
                 {"train_mse", record.train_mse},
                 {"valid_mse", record.valid_mse},
                 {"wall_time_s", record.wall_time_s}};
    log_stream << line.dump() << '\n';
    log_stream.flush();
    last_good = state;
    have_last_good = true;
    if (record.epoch % 10 == 0) {
      std::cerr << "epoch " << record.epoch << " train " << record.train_mse << " valid "
                << record.valid_mse << "\n";
    }
  };

  const auto persist = [&](const training::TrainerState& state) {
    experiment::ModelBundle best = bundle;
    training::apply_snapshot(best.tensors(), state.best_params);
    experiment::save_model(out_dir / "model.ckpt", best, extra_meta);
    training::apply_snapshot(bundle.tensors(), state.last_params);
    experiment::save_trainer_state(out_dir / "trainer_state.ckpt", bundle, state, extra_meta);
    json summary = {{"best_epoch", state.best_epoch},
                    {"best_valid_mse", state.best_valid_mse},
                    {"epochs_run", state.next_epoch}};
    write_json(out_dir / "train_summary.json", summary);
  };

  try {
    const training::TrainResult result =
        training::fit(predict, bundle.tensors(), train_set, valid_set, config, on_epoch,
                      resuming ? &resume_state : nullptr);
    persist(result.state);
    std::cout << "best epoch " << result.state.best_epoch << " valid mse "
              << result.state.best_valid_mse << "\n";
    return kExitOk;
  } catch (const training::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    if (have_last_good) {
      persist(last_good);
      std::cerr << "last good state saved to " << out_dir.string() << "\n";
    }
    return kExitDivergence;
  } catch (const ode::IntegrationError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    if (have_last_good) {
      persist(last_good);
      std::cerr << "last good state saved to " << out_dir.string() << "\n";
    }
    return kExitDivergence;
  }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCommon {
  std::string data;
  std::string model;
  std::string out;
  std::string split = "test";
  std::size_t window_steps = 0;  // 0: from model meta, else 1000
  std::size_t threads = 0;
  bool gnuplot = false;
};

struct LoadedEval {
  sim::Dataset dataset;
  std::optional<experiment::ModelBundle> bundle;
  json model_extra;
  evaluation::EvalContext ctx;
  json metadata;
};

LoadedEval load_eval(const EvalCommon& common, bool need_model) {
  LoadedEval out;
  out.dataset = sim::load_dataset(common.data);
  std::size_t window_steps = common.window_steps;
  if (need_model) {
    if (common.model.empty()) throw CliError(kExitUsage, "--model is required");
    if (common.model != "linear") {
      out.bundle = experiment::load_model(common.model);
      const LoadedCheckpoint raw = load_checkpoint(common.model);
      out.model_extra = raw.meta.value("extra", json::object());
      if (window_steps == 0 && out.model_extra.contains("window_steps")) {
        window_steps = out.model_extra["window_steps"].get<std::size_t>();
      }
    }
  }
  if (window_steps == 0) window_steps = 1000;

  out.ctx.dataset = &out.dataset;
  out.ctx.split = common.split;
  out.ctx.window_fine_steps = window_steps;
  out.ctx.horizon = static_cast<double>(window_steps) * out.dataset.config.dt;
  out.ctx.n_threads = common.threads ? common.threads : default_thread_count();

  out.metadata["dataset_hash"] = sim::dataset_hash(common.data);
  out.metadata["split"] = common.split;
  out.metadata["window_steps"] = window_steps;
  if (need_model && common.model != "linear") {
    out.metadata["model_hash"] = file_hash_hex(common.model);
  }
  if (need_model && common.model == "linear") out.metadata["model"] = "linear";
  return out;
}

ode::WindowPredictor bundle_window_predictor(const experiment::ModelBundle& bundle,
                                             bool fd_velocity) {
  ode::WindowPredictor inner =
      bundle.kind == experiment::ModelBundle::Kind::GraphOde
          ? ode::window_predictor(bundle.graph_ode)
          : experiment::direct_window_predictor(bundle.direct_params, bundle.direct_config);
  if (!fd_velocity) return inner;
  return [inner](const sim::SystemState& state) {
    ode::WindowPrediction p = inner(state);
    p.has_velocity = false;  // force the finite-difference protocol
    return p;
  };
}

int run_eval_direct(const EvalCommon& common, const std::string& horizons_csv) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, true);
  const std::vector<double> horizons = parse_doubles(horizons_csv);

  evaluation::HorizonPredictor predictor;
  if (common.model == "linear") {
    predictor = evaluation::linear_horizon_predictor(loaded.ctx.horizon);
  } else if (loaded.bundle->kind == experiment::ModelBundle::Kind::GraphOde) {
    predictor = evaluation::graph_ode_horizon_predictor(loaded.bundle->graph_ode);
  } else {
    for (double h : horizons) {
      if (h != 1.0) {
        throw CliError(kExitUsage,
                       "direct-egnn evaluates only at its training horizon (1.0)");
      }
    }
    const auto& params = loaded.bundle->direct_params;
    const auto& config = loaded.bundle->direct_config;
    predictor = [&params, &config](const sim::SystemState& state, double) {
      NoGradGuard no_grad;
      const auto prediction = gnn::direct_egnn_predict(state, params, config);
      return Mat(state.positions.rows, 3,
                 {prediction.positions.data().begin(), prediction.positions.data().end()});
    };
  }

  const auto results = evaluation::eval_direct(loaded.ctx, predictor, horizons);
  json section = json::array();
  std::vector<std::vector<double>> rows;
  for (const auto& r : results) {
    section.push_back({{"horizon", r.horizon_multiple}, {"mse", r.mse}});
    rows.push_back({r.horizon_multiple, r.mse});
    std::cout << "horizon " << r.horizon_multiple << " mse " << r.mse << "\n";
  }
  write_json(out_dir / "report.json", {{"metadata", loaded.metadata}, {"direct", section}});
  write_table(out_dir / "direct.csv", common.gnuplot, {"horizon", "mse"}, rows);
  echo_config(out_dir, "eval direct",
              {{"data", common.data}, {"model", common.model}, {"horizons", horizons_csv}});
  return kExitOk;
}

int run_eval_intermediate(const EvalCommon& common, const std::string& fractions_csv) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, true);
  const auto fractions = parse_fractions(fractions_csv);

  std::vector<evaluation::FractionMse> results;
  if (loaded.bundle->kind == experiment::ModelBundle::Kind::GraphOde) {
    results = evaluation::eval_intermediate(loaded.ctx, loaded.bundle->graph_ode, fractions);
  } else {
    results = evaluation::eval_intermediate_baseline(
        loaded.ctx, loaded.bundle->direct_params, loaded.bundle->direct_config, fractions);
  }

  json section = json::array();
  std::vector<std::vector<double>> rows;
  for (const auto& r : results) {
    const double fraction = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    section.push_back({{"numerator", r.numerator},
                       {"denominator", r.denominator},
                       {"mse", r.mse}});
    rows.push_back({fraction, r.mse});
    std::cout << "fraction " << r.numerator << "/" << r.denominator << " mse " << r.mse
              << "\n";
  }
  write_json(out_dir / "report.json",
             {{"metadata", loaded.metadata}, {"intermediate", section}});
  write_table(out_dir / "intermediate.csv", common.gnuplot, {"fraction", "mse"}, rows);
  echo_config(out_dir, "eval intermediate",
              {{"data", common.data}, {"model", common.model}, {"fractions", fractions_csv}});
  return kExitOk;
}

int run_eval_rollout(const EvalCommon& common, std::size_t n_windows, double cap,
                     bool fd_velocity) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, true);

  ode::WindowPredictor predictor;
  if (common.model == "linear") {
    predictor = experiment::linear_window_predictor(loaded.ctx.horizon);
  } else {
    predictor = bundle_window_predictor(*loaded.bundle, fd_velocity);
  }

  const auto points = evaluation::eval_rollout(loaded.ctx, predictor, n_windows, cap);
  std::vector<std::vector<double>> rows;
  for (const auto& p : points) {
    rows.push_back({static_cast<double>(p.window), p.mse, static_cast<double>(p.n_alive),
                    static_cast<double>(p.n_diverged)});
    std::cout << "window " << p.window << " mse " << p.mse << " alive " << p.n_alive
              << " diverged " << p.n_diverged << "\n";
  }
  write_json(out_dir / "report.json",
             {{"metadata", loaded.metadata}, {"rollout", rollout_points_json(points)}});
  write_table(out_dir / "rollout.csv", common.gnuplot,
              {"window", "mse", "n_alive", "n_diverged"}, rows);
  echo_config(out_dir, "eval rollout",
              {{"data", common.data},
               {"model", common.model},
               {"windows", n_windows},
               {"cap", cap},
               {"fd_velocity", fd_velocity}});
  return kExitOk;
}

int run_eval_numerical(const EvalCommon& common, const std::string& dts_csv,
                       std::size_t n_windows) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, false);
  const std::vector<double> dts = parse_doubles(dts_csv);

  const auto curves = evaluation::compare_numerical(loaded.ctx, dts, n_windows);
  json section = json::array();
  std::vector<std::vector<double>> rows;
  for (const auto& curve : curves) {
    section.push_back({{"dt", curve.dt}, {"points", rollout_points_json(curve.points)}});
    for (const auto& p : curve.points) {
      rows.push_back({curve.dt, static_cast<double>(p.window), p.mse});
      std::cout << "dt " << curve.dt << " window " << p.window << " mse " << p.mse << "\n";
    }
  }
  write_json(out_dir / "report.json", {{"metadata", loaded.metadata}, {"numerical", section}});
  write_table(out_dir / "numerical.csv", common.gnuplot, {"dt", "window", "mse"}, rows);
  echo_config(out_dir, "eval numerical",
              {{"data", common.data}, {"dts", dts_csv}, {"windows", n_windows}});
  return kExitOk;
}

struct TauScanOptions {
  std::string taus = "1,2,4,8";
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t depth = 2;
  std::size_t hidden = 32;
  std::uint64_t seed = 0;
};

int run_eval_tau_scan(const EvalCommon& common, const TauScanOptions& opt) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, false);
  const auto taus = parse_sizes(opt.taus);
  const std::size_t window_recorded = loaded.ctx.window_recorded();

  const auto train_set =
      experiment::samples_from_trajectories(loaded.dataset.train, window_recorded);
  const auto valid_set =
      experiment::samples_from_trajectories(loaded.dataset.valid, window_recorded);

  const auto train_and_eval = [&](std::size_t tau) {
    Rng rng(opt.seed, tau);
    ode::GraphOdeModel model = ode::GraphOdeModel::init(
        gnn::AccelEgnnConfig::standard(opt.depth, opt.hidden, 1),
        {tau, loaded.ctx.horizon}, ode::Variant::SecondOrder, rng);
    training::TrainConfig config;
    config.batch_size = opt.batch_size;
    config.epochs = opt.epochs;
    config.lr = opt.lr;
    config.seed = opt.seed;
    config.patience = opt.epochs;
    const training::TrainResult result =
        training::fit(experiment::graph_ode_predict_fn(model), model.tensors(), train_set,
                      valid_set, config);
    training::apply_snapshot(model.tensors(), result.state.best_params);
    const auto direct = evaluation::eval_direct(
        loaded.ctx, evaluation::graph_ode_horizon_predictor(model), {1.0});
    std::cerr << "tau " << tau << " test mse " << direct.front().mse << "\n";
    return direct.front().mse;
  };

  const auto points = evaluation::tau_scan(train_and_eval, taus);
  json section = json::array();
  std::vector<std::vector<double>> rows;
  for (const auto& p : points) {
    section.push_back({{"tau", p.tau}, {"mse", p.mse}});
    rows.push_back({static_cast<double>(p.tau), p.mse});
    std::cout << "tau " << p.tau << " mse " << p.mse << "\n";
  }
  write_json(out_dir / "report.json", {{"metadata", loaded.metadata}, {"tau_scan", section}});
  write_table(out_dir / "tau_scan.csv", common.gnuplot, {"tau", "mse"}, rows);
  echo_config(out_dir, "eval tau-scan",
              {{"data", common.data},
               {"taus", opt.taus},
               {"epochs", opt.epochs},
               {"batch_size", opt.batch_size},
               {"lr", opt.lr},
               {"depth", opt.depth},
               {"hidden", opt.hidden},
               {"seed", opt.seed}});
  return kExitOk;
}

int run_eval_equivariance(const EvalCommon& common, std::size_t n_transforms,
                          std::uint64_t seed, double threshold, std::size_t n_states) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, true);
  if (common.model == "linear" ||
      loaded.bundle->kind != experiment::ModelBundle::Kind::GraphOde) {
    throw CliError(kExitUsage, "equivariance audit expects a graph-ode model");
  }

  std::vector<sim::SystemState> states;
  const auto& trajectories = loaded.ctx.trajectories();
  for (std::size_t i = 0; i < std::min(n_states, trajectories.size()); ++i) {
    states.push_back(trajectories[i].state_at(0));
  }

  const auto result = evaluation::equivariance_audit(loaded.bundle->graph_ode, states,
                                                     n_transforms, seed);
  std::cout << "max deviation " << result.max_deviation << " over " << result.n_transforms
            << " transforms (seed " << result.transform_seed << ")\n";

  loaded.metadata["transform_seed"] = result.transform_seed;
  write_json(out_dir / "report.json",
             {{"metadata", loaded.metadata},
              {"equivariance",
               {{"max_deviation", result.max_deviation},
                {"n_transforms", result.n_transforms},
                {"threshold", threshold}}}});
  echo_config(out_dir, "eval equivariance",
              {{"data", common.data},
               {"model", common.model},
               {"transforms", n_transforms},
               {"seed", seed},
               {"threshold", threshold},
               {"states", n_states}});
  if (result.max_deviation > threshold) {
    std::cerr << "deviation exceeds threshold " << threshold << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

struct TruncationOptions {
  std::string system = "gravity";
  std::size_t n_bodies = 3;
  std::string dts = "0.2,0.1,0.05,0.025";
  double horizon = 1.0;
  std::uint64_t seed = 0;
  double softening = -1.0;
  double strength = 1.0;
  std::string out;
  bool gnuplot = false;
};

int run_eval_truncation(const TruncationOptions& opt) {
  const fs::path out_dir = prepare_out_dir(opt.out);
  const sim::SystemKind kind = sim::system_kind_from_name(opt.system);
  sim::GenerationConfig config = sim::GenerationConfig::defaults(kind);
  config.n_bodies = opt.n_bodies;
  if (opt.softening >= 0.0) config.softening = opt.softening;
  config.strength = opt.strength;

  Rng rng(opt.seed);
  const sim::SystemState state = kind == sim::SystemKind::Charged
                                     ? sim::sample_initial_charged(config, rng, 0)
                                     : sim::sample_initial_gravity(config, rng);
  const auto force =
      evaluation::system_force(state, kind, config.softening, config.strength);
  const auto result =
      evaluation::truncation_scan(force, state, parse_doubles(opt.dts), opt.horizon);

  std::cout << "local slope " << result.local_slope << "\n"
            << "global slope " << result.global_slope << "\n";

  json section = {{"local_slope", result.local_slope},
                  {"global_slope", result.global_slope},
                  {"dts", result.dts},
                  {"local_errors", result.local_errors},
                  {"global_errors", result.global_errors}};
  write_json(out_dir / "report.json",
             {{"metadata", {{"system", opt.system}, {"seed", opt.seed}}},
              {"truncation", section}});
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < result.dts.size(); ++i) {
    rows.push_back({result.dts[i], result.local_errors[i], result.global_errors[i]});
  }
  write_table(out_dir / "truncation.csv", opt.gnuplot, {"dt", "local_error", "global_error"},
              rows);
  echo_config(out_dir, "eval truncation",
              {{"system", opt.system},
               {"n_bodies", opt.n_bodies},
               {"dts", opt.dts},
               {"horizon", opt.horizon},
               {"seed", opt.seed},
               {"softening", config.softening},
               {"strength", opt.strength}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-traj
// ---------------------------------------------------------------------------

int run_export_traj(const EvalCommon& common, std::size_t n_windows,
                    std::size_t traj_index) {
  const fs::path out_dir = prepare_out_dir(common.out);
  LoadedEval loaded = load_eval(common, true);
  if (loaded.bundle->kind != experiment::ModelBundle::Kind::GraphOde) {
    throw CliError(kExitUsage, "export-traj expects a graph-ode model");
  }
  const auto& trajectories = loaded.ctx.trajectories();
  if (traj_index >= trajectories.size()) {
    throw CliError(kExitUsage, "trajectory index out of range");
  }

  NoGradGuard no_grad;
  sim::SystemState state = trajectories[traj_index].state_at(0);
  std::vector<ode::PredictedPath> windows;
  for (std::size_t w = 0; w < n_windows; ++w) {
    windows.push_back(ode::integrate_window(state, loaded.bundle->graph_ode));
    state.positions = windows.back().positions.back();
    state.velocities = windows.back().velocities.back();
  }

  const fs::path csv_path = out_dir / "trajectory.csv";
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out.precision(17);
  ode::write_path_csv(out, windows);
  std::cout << "wrote " << csv_path.string() << "\n";
  echo_config(out_dir, "export-traj",
              {{"data", common.data},
               {"model", common.model},
               {"windows", n_windows},
               {"traj_index", traj_index}});
  return kExitOk;
}

void add_common_eval_options(CLI::App* cmd, EvalCommon& common, bool with_model = true) {
  cmd->add_option("--data", common.data, "dataset directory")->required();
  if (with_model) {
    cmd->add_option("--model", common.model, "model checkpoint ('linear' for the baseline)");
  }
  cmd->add_option("--out", common.out, "output directory")->envname("NBODE_OUT_DIR");
  cmd->add_option("--split", common.split, "dataset split")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  cmd->add_option("--window-steps", common.window_steps,
                  "ground-truth steps per window (default: model meta or 1000)");
  cmd->add_option("--threads", common.threads, "worker threads (default: cores)");
  cmd->add_flag("--gnuplot", common.gnuplot, "also write gnuplot .dat files");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equivariant graph network N-body dynamics with a symplectic integrator"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  GenOptions gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "generate a ground-truth dataset");
  cmd_gen->add_option("--system", gen.system, "system kind")
      ->check(CLI::IsMember({"gravity", "charged"}));
  cmd_gen->add_option("--n-bodies", gen.n_bodies, "particles per system");
  cmd_gen->add_option("--train", gen.n_train, "training trajectories");
  cmd_gen->add_option("--valid", gen.n_valid, "validation trajectories");
  cmd_gen->add_option("--test", gen.n_test, "test trajectories");
  cmd_gen->add_option("--steps", gen.steps, "fine integration steps per trajectory");
  cmd_gen->add_option("--record-every", gen.record_every, "state recording stride");
  cmd_gen->add_option("--dt", gen.dt, "integration timestep");
  cmd_gen->add_option("--seed", gen.seed, "RNG seed");
  cmd_gen->add_option("--softening", gen.softening,
                      "force softening (default: 0.01 charged, 0 gravity)");
  cmd_gen->add_option("--strength", gen.strength, "interaction strength");
  cmd_gen->add_option("--position-cap", gen.position_cap, "reject-and-resample threshold");
  cmd_gen->add_option("--out", gen.out, "output directory")->envname("NBODE_OUT_DIR");
  cmd_gen->add_option("--threads", gen.threads, "worker threads (default: cores)");

  TrainOptions train;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--data", train.data, "dataset directory")->required();
  cmd_train->add_option("--out", train.out, "output directory")->envname("NBODE_OUT_DIR");
  cmd_train->add_option("--model", train.model, "model family")
      ->check(CLI::IsMember({"graph-ode", "direct-egnn"}));
  cmd_train->add_option("--variant", train.variant, "derivative order")
      ->check(CLI::IsMember({"second-order", "first-order"}));
  cmd_train->add_option("--tau", train.tau, "integrator iterations per window");
  cmd_train->add_option("--window-steps", train.window_steps,
                        "ground-truth steps per training window");
  cmd_train->add_option("--depth", train.depth, "backbone layers (0: family default)");
  cmd_train->add_option("--hidden", train.hidden, "hidden width");
  cmd_train->add_option("--epochs", train.epochs, "training epochs");
  cmd_train->add_option("--batch-size", train.batch_size, "mini-batch size");
  cmd_train->add_option("--lr", train.lr, "Adam learning rate");
  cmd_train->add_option("--weight-decay", train.weight_decay, "L2 coefficient");
  cmd_train->add_option("--patience", train.patience, "early-stop patience (epochs)");
  cmd_train->add_option("--seed", train.seed, "RNG seed");
  cmd_train->add_option("--resume", train.resume, "trainer state checkpoint to resume");
  cmd_train->add_option("--threads", train.threads, "worker threads");

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluation protocols");
  cmd_eval->require_subcommand(1);

  EvalCommon direct_common;
  std::string direct_horizons = "1.0,1.5,2.0";
  CLI::App* cmd_direct = cmd_eval->add_subcommand("direct", "MSE across horizons");
  add_common_eval_options(cmd_direct, direct_common);
  cmd_direct->add_option("--horizons", direct_horizons, "horizon multiples of the window");

  EvalCommon inter_common;
  std::string fractions = "1/4,1/2,3/4,1";
  CLI::App* cmd_inter =
      cmd_eval->add_subcommand("intermediate", "long-to-short generalization");
  add_common_eval_options(cmd_inter, inter_common);
  cmd_inter->add_option("--fractions", fractions, "window fractions, e.g. 1/4,1/2");

  EvalCommon rollout_common;
  std::size_t rollout_windows = 40;
  double rollout_cap = 1e6;
  bool rollout_fd = false;
  CLI::App* cmd_rollout = cmd_eval->add_subcommand("rollout", "multi-window rollout");
  add_common_eval_options(cmd_rollout, rollout_common);
  cmd_rollout->add_option("--windows", rollout_windows, "number of rollout windows");
  cmd_rollout->add_option("--cap", rollout_cap, "divergence position cap");
  cmd_rollout->add_flag("--fd-velocity", rollout_fd,
                        "treat the model as position-only (finite-difference velocities)");

  EvalCommon numerical_common;
  std::string numerical_dts = "0.125,0.25,0.5";
  std::size_t numerical_windows = 10;
  CLI::App* cmd_numerical =
      cmd_eval->add_subcommand("numerical", "symplectic Euler solver comparison");
  add_common_eval_options(cmd_numerical, numerical_common, false);
  cmd_numerical->add_option("--dts", numerical_dts, "solver steps in model time");
  cmd_numerical->add_option("--windows", numerical_windows, "rollout windows");

  EvalCommon tau_common;
  TauScanOptions tau_opt;
  CLI::App* cmd_tau = cmd_eval->add_subcommand("tau-scan", "iteration-count ablation");
  add_common_eval_options(cmd_tau, tau_common, false);
  cmd_tau->add_option("--taus", tau_opt.taus, "tau values");
  cmd_tau->add_option("--epochs", tau_opt.epochs, "training epochs per tau");
  cmd_tau->add_option("--batch-size", tau_opt.batch_size, "mini-batch size");
  cmd_tau->add_option("--lr", tau_opt.lr, "learning rate");
  cmd_tau->add_option("--depth", tau_opt.depth, "backbone layers");
  cmd_tau->add_option("--hidden", tau_opt.hidden, "hidden width");
  cmd_tau->add_option("--seed", tau_opt.seed, "RNG seed");

  EvalCommon equiv_common;
  std::size_t equiv_transforms = 100;
  std::uint64_t equiv_seed = 0;
  double equiv_threshold = 1e-6;
  std::size_t equiv_states = 5;
  CLI::App* cmd_equiv = cmd_eval->add_subcommand("equivariance", "O(3) + translation audit");
  add_common_eval_options(cmd_equiv, equiv_common);
  cmd_equiv->add_option("--transforms", equiv_transforms, "random transforms");
  cmd_equiv->add_option("--seed", equiv_seed, "transform seed");
  cmd_equiv->add_option("--threshold", equiv_threshold,
                        "max relative deviation before nonzero exit");
  cmd_equiv->add_option("--states", equiv_states, "test states audited");

  TruncationOptions trunc;
  CLI::App* cmd_trunc = cmd_eval->add_subcommand("truncation", "truncation-order scan");
  cmd_trunc->add_option("--system", trunc.system, "system kind")
      ->check(CLI::IsMember({"gravity", "charged"}));
  cmd_trunc->add_option("--n-bodies", trunc.n_bodies, "particles");
  cmd_trunc->add_option("--dts", trunc.dts, "step sizes in model time");
  cmd_trunc->add_option("--horizon", trunc.horizon, "global-error horizon");
  cmd_trunc->add_option("--seed", trunc.seed, "initial-state seed");
  cmd_trunc->add_option("--softening", trunc.softening, "force softening");
  cmd_trunc->add_option("--strength", trunc.strength, "interaction strength");
  cmd_trunc->add_option("--out", trunc.out, "output directory")->envname("NBODE_OUT_DIR");
  cmd_trunc->add_flag("--gnuplot", trunc.gnuplot, "also write gnuplot .dat files");

  EvalCommon export_common;
  std::size_t export_windows = 1;
  std::size_t export_index = 0;
  CLI::App* cmd_export = app.add_subcommand("export-traj", "export a predicted path CSV");
  add_common_eval_options(cmd_export, export_common);
  cmd_export->add_option("--windows", export_windows, "windows to integrate");
  cmd_export->add_option("--traj-index", export_index, "test trajectory index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cmd_gen) return run_gen(gen);
    if (*cmd_train) return run_train(train);
    if (*cmd_direct) return run_eval_direct(direct_common, direct_horizons);
    if (*cmd_inter) return run_eval_intermediate(inter_common, fractions);
    if (*cmd_rollout)
      return run_eval_rollout(rollout_common, rollout_windows, rollout_cap, rollout_fd);
    if (*cmd_numerical)
      return run_eval_numerical(numerical_common, numerical_dts, numerical_windows);
    if (*cmd_tau) return run_eval_tau_scan(tau_common, tau_opt);
    if (*cmd_equiv)
      return run_eval_equivariance(equiv_common, equiv_transforms, equiv_seed,
                                   equiv_threshold, equiv_states);
    if (*cmd_trunc) return run_eval_truncation(trunc);
    if (*cmd_export) return run_export_traj(export_common, export_windows, export_index);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ode::IntegrationError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const training::TrainingDiverged& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const sim::SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const evaluation::EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
