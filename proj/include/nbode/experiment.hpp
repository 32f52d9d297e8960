#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbode/dataset.hpp"
#include "nbode/gnn.hpp"
#include "nbode/ode.hpp"
#include "nbode/training.hpp"

namespace nbode::experiment {

/// One training pair per trajectory: the stored state at index 0 mapped to
/// the state `window_recorded` stored steps later.
std::vector<training::TrainSample> samples_from_trajectories(
    const std::vector<sim::Trajectory>& trajectories, std::size_t window_recorded);

// Training predictors (positions on the autodiff graph).
training::PredictFn graph_ode_predict_fn(const ode::GraphOdeModel& model);
training::PredictFn direct_egnn_predict_fn(const gnn::DirectEgnnParams& params,
                                           const gnn::DirectEgnnConfig& config);

// Rollout predictors.
ode::WindowPredictor direct_window_predictor(const gnn::DirectEgnnParams& params,
                                             const gnn::DirectEgnnConfig& config);
ode::WindowPredictor linear_window_predictor(double horizon);

// --- model persistence -------------------------------------------------------

/// Either model family behind one file format; the manifest's meta block
/// records which one plus its full architecture.
struct ModelBundle {
  enum class Kind { GraphOde, DirectEgnn };
  Kind kind = Kind::GraphOde;
  ode::GraphOdeModel graph_ode;
  gnn::DirectEgnnConfig direct_config;
  gnn::DirectEgnnParams direct_params;

  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> tensors() const;
};

nlohmann::json mlp_spec_to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

nlohmann::json model_meta(const ModelBundle& bundle);

void save_model(const std::filesystem::path& path, const ModelBundle& bundle,
                const nlohmann::json& extra_meta = nlohmann::json::object());
ModelBundle load_model(const std::filesystem::path& path);

/// Full mid-run trainer snapshot (last parameters, Adam moments, best-so-far
/// weights) for exact resumption.
void save_trainer_state(const std::filesystem::path& path, const ModelBundle& bundle,
                        const training::TrainerState& state,
                        const nlohmann::json& extra_meta = nlohmann::json::object());

struct LoadedTrainerState {
  ModelBundle bundle;
  training::TrainerState state;
  nlohmann::json meta;
};

LoadedTrainerState load_trainer_state(const std::filesystem::path& path);

}  // namespace nbode::experiment
