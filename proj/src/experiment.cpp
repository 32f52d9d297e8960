#include "nbode/experiment.hpp"

#include "nbode/checkpoint.hpp"

namespace nbode::experiment {

using nlohmann::json;

std::vector<training::TrainSample> samples_from_trajectories(
    const std::vector<sim::Trajectory>& trajectories, std::size_t window_recorded) {
  std::vector<training::TrainSample> samples;
  samples.reserve(trajectories.size());
  for (const sim::Trajectory& trajectory : trajectories) {
    if (window_recorded >= trajectory.n_states()) {
      throw TensorError("samples: window of " + std::to_string(window_recorded) +
                        " recorded steps exceeds trajectory length");
    }
    training::TrainSample sample;
    sample.input = trajectory.state_at(0);
    sample.target_positions = trajectory.positions[window_recorded];
    sample.target_velocities = trajectory.velocities[window_recorded];
    samples.push_back(std::move(sample));
  }
  return samples;
}

training::PredictFn graph_ode_predict_fn(const ode::GraphOdeModel& model) {
  return [&model](const training::TrainSample& sample) {
    return ode::integrate_window(sample.input, model).q_final;
  };
}

training::PredictFn direct_egnn_predict_fn(const gnn::DirectEgnnParams& params,
                                           const gnn::DirectEgnnConfig& config) {
  return [&params, &config](const training::TrainSample& sample) {
    return gnn::direct_egnn_predict(sample.input, params, config).positions;
  };
}

ode::WindowPredictor direct_window_predictor(const gnn::DirectEgnnParams& params,
                                             const gnn::DirectEgnnConfig& config) {
  return [&params, &config](const sim::SystemState& state) {
    NoGradGuard no_grad;
    const gnn::DirectPrediction prediction = gnn::direct_egnn_predict(state, params, config);
    return ode::WindowPrediction{
        Mat(state.positions.rows, 3,
            {prediction.positions.data().begin(), prediction.positions.data().end()}),
        Mat(state.positions.rows, 3,
            {prediction.velocities.data().begin(), prediction.velocities.data().end()}),
        true};
  };
}

ode::WindowPredictor linear_window_predictor(double horizon) {
  return [horizon](const sim::SystemState& state) {
    Mat q = state.positions;
    for (std::size_t i = 0; i < q.size(); ++i) {
      q.values[i] += state.velocities.values[i] * horizon;
    }
    return ode::WindowPrediction{std::move(q), state.velocities, true};
  };
}

std::vector<NamedParam> ModelBundle::named_params() const {
  return kind == Kind::GraphOde ? graph_ode.named_params() : direct_params.named_params();
}

std::vector<Tensor> ModelBundle::tensors() const {
  return kind == Kind::GraphOde ? graph_ode.tensors() : direct_params.tensors();
}

json mlp_spec_to_json(const MlpSpec& spec) {
  return {{"widths", spec.layer_widths},
          {"activation", activation_name(spec.activation)},
          {"final", final_activation_name(spec.final_activation)}};
}

MlpSpec mlp_spec_from_json(const json& j) {
  MlpSpec spec;
  spec.layer_widths = j.at("widths").get<std::vector<std::size_t>>();
  spec.activation = activation_from_name(j.at("activation").get<std::string>());
  spec.final_activation = final_activation_from_name(j.at("final").get<std::string>());
  return spec;
}

namespace {

json accel_config_to_json(const gnn::AccelEgnnConfig& config) {
  return {{"n_layers", config.n_layers},
          {"hidden_dim", config.hidden_dim},
          {"d_node", config.d_node},
          {"message_mlp", mlp_spec_to_json(config.message_mlp)},
          {"gate_mlp", mlp_spec_to_json(config.gate_mlp)},
          {"node_mlp", mlp_spec_to_json(config.node_mlp)},
          {"reset_hidden_each_call", config.reset_hidden_each_call}};
}

gnn::AccelEgnnConfig accel_config_from_json(const json& j) {
  gnn::AccelEgnnConfig config;
  config.n_layers = j.at("n_layers").get<std::size_t>();
  config.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  config.d_node = j.at("d_node").get<std::size_t>();
  config.message_mlp = mlp_spec_from_json(j.at("message_mlp"));
  config.gate_mlp = mlp_spec_from_json(j.at("gate_mlp"));
  config.node_mlp = mlp_spec_from_json(j.at("node_mlp"));
  config.reset_hidden_each_call = j.value("reset_hidden_each_call", true);
  return config;
}

json direct_config_to_json(const gnn::DirectEgnnConfig& config) {
  return {{"n_layers", config.n_layers},
          {"hidden_dim", config.hidden_dim},
          {"d_node", config.d_node},
          {"message_mlp", mlp_spec_to_json(config.message_mlp)},
          {"coord_mlp", mlp_spec_to_json(config.coord_mlp)},
          {"vel_mlp", mlp_spec_to_json(config.vel_mlp)},
          {"node_mlp", mlp_spec_to_json(config.node_mlp)}};
}

gnn::DirectEgnnConfig direct_config_from_json(const json& j) {
  gnn::DirectEgnnConfig config;
  config.n_layers = j.at("n_layers").get<std::size_t>();
  config.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  config.d_node = j.at("d_node").get<std::size_t>();
  config.message_mlp = mlp_spec_from_json(j.at("message_mlp"));
  config.coord_mlp = mlp_spec_from_json(j.at("coord_mlp"));
  config.vel_mlp = mlp_spec_from_json(j.at("vel_mlp"));
  config.node_mlp = mlp_spec_from_json(j.at("node_mlp"));
  return config;
}

/// Builds an uninitialized (zero-weight) bundle matching the meta block;
/// weights come from the checkpoint blob afterwards.
ModelBundle bundle_from_meta(const json& meta) {
  ModelBundle bundle;
  Rng rng(0);
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "graph-ode") {
    bundle.kind = ModelBundle::Kind::GraphOde;
    bundle.graph_ode.backbone = accel_config_from_json(meta.at("backbone"));
    bundle.graph_ode.integrator.tau = meta.at("integrator").at("tau").get<std::size_t>();
    bundle.graph_ode.integrator.horizon = meta.at("integrator").at("horizon").get<double>();
    bundle.graph_ode.variant = ode::variant_from_name(meta.at("variant").get<std::string>());
    bundle.graph_ode.params = gnn::AccelEgnnParams::init(bundle.graph_ode.backbone, rng);
  } else if (kind == "direct-egnn") {
    bundle.kind = ModelBundle::Kind::DirectEgnn;
    bundle.direct_config = direct_config_from_json(meta.at("backbone"));
    bundle.direct_params = gnn::DirectEgnnParams::init(bundle.direct_config, rng);
  } else {
    throw IoError("model: unknown kind '" + kind + "'");
  }
  return bundle;
}

}  // namespace

json model_meta(const ModelBundle& bundle) {
  json meta;
  if (bundle.kind == ModelBundle::Kind::GraphOde) {
    meta["kind"] = "graph-ode";
    meta["backbone"] = accel_config_to_json(bundle.graph_ode.backbone);
    meta["integrator"] = {{"tau", bundle.graph_ode.integrator.tau},
                          {"horizon", bundle.graph_ode.integrator.horizon}};
    meta["variant"] = ode::variant_name(bundle.graph_ode.variant);
  } else {
    meta["kind"] = "direct-egnn";
    meta["backbone"] = direct_config_to_json(bundle.direct_config);
  }
  return meta;
}

void save_model(const std::filesystem::path& path, const ModelBundle& bundle,
                const json& extra_meta) {
  json meta = model_meta(bundle);
  meta["extra"] = extra_meta;
  save_checkpoint(path, bundle.named_params(), meta);
}

ModelBundle load_model(const std::filesystem::path& path) {
  const LoadedCheckpoint loaded = load_checkpoint(path);
  ModelBundle bundle = bundle_from_meta(loaded.meta);
  assign_params(loaded, bundle.named_params());
  return bundle;
}

void save_trainer_state(const std::filesystem::path& path, const ModelBundle& bundle,
                        const training::TrainerState& state, const json& extra_meta) {
  std::vector<NamedParam> entries = bundle.named_params();
  const std::size_t n_model_params = entries.size();
  if (state.adam_m.size() != n_model_params || state.best_params.size() != n_model_params) {
    throw IoError("trainer state: buffers do not match the model parameter list");
  }
  for (std::size_t i = 0; i < n_model_params; ++i) {
    const Shape& shape = entries[i].tensor.shape();
    const std::string name = entries[i].name;
    entries.push_back({"__adam_m." + name, Tensor::from_data(shape, state.adam_m[i])});
    entries.push_back({"__adam_v." + name, Tensor::from_data(shape, state.adam_v[i])});
    entries.push_back({"__best." + name, Tensor::from_data(shape, state.best_params[i])});
  }
  json meta = model_meta(bundle);
  meta["trainer"] = {{"next_epoch", state.next_epoch},
                     {"adam_step", state.adam_step},
                     {"best_epoch", state.best_epoch},
                     {"best_valid_mse", state.best_valid_mse}};
  meta["extra"] = extra_meta;
  save_checkpoint(path, entries, meta);
}

LoadedTrainerState load_trainer_state(const std::filesystem::path& path) {
  const LoadedCheckpoint loaded = load_checkpoint(path);
  LoadedTrainerState out;
  out.bundle = bundle_from_meta(loaded.meta);
  out.meta = loaded.meta;
  assign_params(loaded, out.bundle.named_params());

  const json& trainer = loaded.meta.at("trainer");
  out.state.next_epoch = trainer.at("next_epoch").get<std::size_t>();
  out.state.adam_step = trainer.at("adam_step").get<std::int64_t>();
  out.state.best_epoch = trainer.at("best_epoch").get<std::size_t>();
  out.state.best_valid_mse = trainer.at("best_valid_mse").get<double>();
  for (const NamedParam& p : out.bundle.named_params()) {
    const auto grab = [&](const std::string& prefix) {
      const auto it = loaded.params.find(prefix + p.name);
      if (it == loaded.params.end()) {
        throw IoError("trainer state: missing buffer " + prefix + p.name);
      }
      return std::vector<double>(it->second.data().begin(), it->second.data().end());
    };
    out.state.adam_m.push_back(grab("__adam_m."));
    out.state.adam_v.push_back(grab("__adam_v."));
    out.state.best_params.push_back(grab("__best."));
    out.state.last_params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  return out;
}

}  // namespace nbode::experiment
