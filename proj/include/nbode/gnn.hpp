#pragma once

#include <vector>

#include "nbode/mat.hpp"
#include "nbode/nn.hpp"
#include "nbode/rng.hpp"
#include "nbode/sim.hpp"
#include "nbode/tensor.hpp"

namespace nbode::gnn {

/// Per-state graph tensors shared by every layer and integrator iteration:
/// receiver/sender index lists plus constant attribute tensors.
struct GraphInputs {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> receivers;
  std::vector<std::size_t> senders;
  Tensor node_attrs;  // [N x d]
  Tensor edge_attrs;  // [E x 1]

  static GraphInputs from_state(const sim::SystemState& state);
};

/// Equivariant backbone mapping positions and node attributes to per-node
/// accelerations. Messages depend on squared pairwise distances; coordinate
/// output is a scalar-gated sum of coordinate differences normalized by
/// 1/(N-1); hidden features update through a skip connection.
struct AccelEgnnConfig {
  std::size_t n_layers = 8;
  std::size_t hidden_dim = 64;
  std::size_t d_node = 1;
  MlpSpec message_mlp;  // edge MLP on [dist^2, h_i, h_j, a_ij]
  MlpSpec gate_mlp;     // scalar head gating coordinate differences
  MlpSpec node_mlp;     // hidden update on [h_i, sum_j m_ij]
  // Hidden features restart from the raw attributes on every call by
  // default; when false the caller threads them across calls.
  bool reset_hidden_each_call = true;

  static AccelEgnnConfig standard(std::size_t n_layers, std::size_t hidden_dim,
                                  std::size_t d_node);
  void validate() const;
};

struct AccelEgnnLayer {
  Mlp message;
  Mlp gate;
  Mlp node;
};

struct AccelEgnnParams {
  Mlp embed;  // d_node -> hidden
  std::vector<AccelEgnnLayer> layers;

  static AccelEgnnParams init(const AccelEgnnConfig& config, Rng& rng);
  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> tensors() const;
};

/// Returns the final layer's acceleration [N x 3]; differentiable end to
/// end. N = 1 (no edges) yields zeros. When hidden_io is non-null it is used
/// as the incoming hidden state and replaced with the updated one.
Tensor egnn_accel(const Tensor& positions, const GraphInputs& graph,
                  const AccelEgnnParams& params, const AccelEgnnConfig& config,
                  Tensor* hidden_io = nullptr);

Tensor egnn_accel(const sim::SystemState& state, const AccelEgnnParams& params,
                  const AccelEgnnConfig& config);

// ---------------------------------------------------------------------------
// Direct-mapping baseline: a standard position/velocity EGNN stack that maps
// the state at t0 to the state at t1 in one shot. Node features receive a
// linear map of the initial velocity norm.
// ---------------------------------------------------------------------------

struct DirectEgnnConfig {
  std::size_t n_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t d_node = 1;   // raw attribute width; velocity norm is appended
  MlpSpec message_mlp;
  MlpSpec coord_mlp;  // scalar gate on coordinate differences
  MlpSpec vel_mlp;    // scalar gate on the running velocity
  MlpSpec node_mlp;

  static DirectEgnnConfig standard(std::size_t n_layers, std::size_t hidden_dim,
                                   std::size_t d_node);
  void validate() const;
};

struct DirectEgnnLayer {
  Mlp message;
  Mlp coord;
  Mlp vel;
  Mlp node;
};

struct DirectEgnnParams {
  Mlp embed;  // (d_node + 1) -> hidden
  std::vector<DirectEgnnLayer> layers;

  static DirectEgnnParams init(const DirectEgnnConfig& config, Rng& rng);
  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> tensors() const;
};

struct DirectPrediction {
  Tensor positions;   // [N x 3] at t1
  Tensor velocities;  // [N x 3] at t1
  // Positions after each layer (index 0 = input), read off for the
  // hidden-layer intermediate-state protocol.
  std::vector<Mat> layer_positions;
};

DirectPrediction direct_egnn_predict(const sim::SystemState& state,
                                     const DirectEgnnParams& params,
                                     const DirectEgnnConfig& config);

}  // namespace nbode::gnn
