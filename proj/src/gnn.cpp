#include "nbode/gnn.hpp"

#include <cmath>

namespace nbode::gnn {

namespace {

Tensor tensor_from_mat(const Mat& m) {
  return Tensor::from_data({m.rows, m.cols}, m.values);
}

Mat mat_from_tensor(const Tensor& t) {
  return Mat(t.dim(0), t.dim(1), {t.data().begin(), t.data().end()});
}

Tensor squared_distances(const Tensor& dq) {
  // [E x 3] -> [E x 1] row sums of squares via a constant ones column
  static thread_local const Tensor ones3 = Tensor::full({3, 1}, 1.0);
  return matmul(square(dq), ones3);
}

double neighbor_scale(std::size_t n_nodes) {
  return n_nodes > 1 ? 1.0 / static_cast<double>(n_nodes - 1) : 0.0;
}

}  // namespace

GraphInputs GraphInputs::from_state(const sim::SystemState& state) {
  GraphInputs g;
  g.n_nodes = state.n_bodies();
  g.receivers.reserve(state.edges.size());
  g.senders.reserve(state.edges.size());
  for (const auto& [i, j] : state.edges) {
    g.receivers.push_back(i);
    g.senders.push_back(j);
  }
  g.node_attrs = tensor_from_mat(state.attributes);
  g.edge_attrs = Tensor::from_data({state.edge_attrs.size(), 1}, state.edge_attrs);
  return g;
}

AccelEgnnConfig AccelEgnnConfig::standard(std::size_t n_layers, std::size_t hidden_dim,
                                          std::size_t d_node) {
  AccelEgnnConfig config;
  config.n_layers = n_layers;
  config.hidden_dim = hidden_dim;
  config.d_node = d_node;
  config.message_mlp = {{2 + 2 * hidden_dim, hidden_dim, hidden_dim},
                        Activation::SiLU, FinalActivation::None};
  config.gate_mlp = {{hidden_dim, hidden_dim, 1}, Activation::SiLU, FinalActivation::None};
  config.node_mlp = {{2 * hidden_dim, hidden_dim, hidden_dim}, Activation::SiLU,
                     FinalActivation::None};
  return config;
}

void AccelEgnnConfig::validate() const {
  message_mlp.validate();
  gate_mlp.validate();
  node_mlp.validate();
  if (n_layers == 0) throw TensorError("egnn: n_layers must be >= 1");
  if (gate_mlp.layer_widths.back() != 1) {
    throw TensorError("egnn: gate head must output a scalar per edge");
  }
  if (node_mlp.layer_widths.back() != hidden_dim) {
    throw TensorError("egnn: node update must output hidden_dim features");
  }
  if (message_mlp.layer_widths.front() != 2 + 2 * hidden_dim) {
    throw TensorError("egnn: message input is [dist^2, h_i, h_j, a_ij]");
  }
}

AccelEgnnParams AccelEgnnParams::init(const AccelEgnnConfig& config, Rng& rng) {
  config.validate();
  AccelEgnnParams params;
  params.embed = Mlp({{config.d_node, config.hidden_dim}, config.message_mlp.activation,
                      FinalActivation::None},
                     rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    params.layers.push_back({Mlp(config.message_mlp, rng), Mlp(config.gate_mlp, rng),
                             Mlp(config.node_mlp, rng)});
  }
  return params;
}

std::vector<NamedParam> AccelEgnnParams::named_params() const {
  std::vector<NamedParam> out = embed.named_params("embed");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    for (const auto& p : layers[l].message.named_params(prefix + ".message"))
      out.push_back(p);
    for (const auto& p : layers[l].gate.named_params(prefix + ".gate")) out.push_back(p);
    for (const auto& p : layers[l].node.named_params(prefix + ".node")) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> AccelEgnnParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : named_params()) out.push_back(p.tensor);
  return out;
}

Tensor egnn_accel(const Tensor& positions, const GraphInputs& graph,
                  const AccelEgnnParams& params, const AccelEgnnConfig& config,
                  Tensor* hidden_io) {
  const std::size_t n = graph.n_nodes;
  if (graph.receivers.empty()) {
    return Tensor::zeros({n, 3});  // no neighbors, no acceleration
  }

  Tensor hidden;
  if (hidden_io != nullptr && hidden_io->defined() && !config.reset_hidden_each_call) {
    hidden = *hidden_io;
  } else {
    hidden = params.embed.forward(graph.node_attrs);
  }

  const double scale_factor = neighbor_scale(n);
  Tensor accel;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const AccelEgnnLayer& layer = params.layers[l];
    const Tensor qi = index_select(positions, graph.receivers);
    const Tensor qj = index_select(positions, graph.senders);
    const Tensor dq = sub(qi, qj);
    const Tensor hi = index_select(hidden, graph.receivers);
    const Tensor hj = index_select(hidden, graph.senders);
    const Tensor features = concat({squared_distances(dq), hi, hj, graph.edge_attrs}, 1);
    const Tensor messages = silu(layer.message.forward(features));
    const Tensor gated = mul(dq, layer.gate.forward(messages));
    accel = scale(segment_sum(gated, graph.receivers, n), scale_factor);
    // the final hidden update only matters when the caller threads h onward
    if (l + 1 == params.layers.size() && hidden_io == nullptr) break;
    const Tensor aggregated = segment_sum(messages, graph.receivers, n);
    hidden = add(hidden, layer.node.forward(concat({hidden, aggregated}, 1)));
  }
  if (hidden_io != nullptr) *hidden_io = hidden;
  return accel;
}

Tensor egnn_accel(const sim::SystemState& state, const AccelEgnnParams& params,
                  const AccelEgnnConfig& config) {
  return egnn_accel(tensor_from_mat(state.positions), GraphInputs::from_state(state),
                    params, config);
}

DirectEgnnConfig DirectEgnnConfig::standard(std::size_t n_layers, std::size_t hidden_dim,
                                            std::size_t d_node) {
  DirectEgnnConfig config;
  config.n_layers = n_layers;
  config.hidden_dim = hidden_dim;
  config.d_node = d_node;
  config.message_mlp = {{2 + 2 * hidden_dim, hidden_dim, hidden_dim},
                        Activation::SiLU, FinalActivation::None};
  config.coord_mlp = {{hidden_dim, hidden_dim, 1}, Activation::SiLU, FinalActivation::None};
  config.vel_mlp = {{hidden_dim, 1}, Activation::SiLU, FinalActivation::None};
  config.node_mlp = {{2 * hidden_dim, hidden_dim, hidden_dim}, Activation::SiLU,
                     FinalActivation::None};
  return config;
}

void DirectEgnnConfig::validate() const {
  message_mlp.validate();
  coord_mlp.validate();
  vel_mlp.validate();
  node_mlp.validate();
  if (n_layers == 0) throw TensorError("direct egnn: n_layers must be >= 1");
  if (coord_mlp.layer_widths.back() != 1 || vel_mlp.layer_widths.back() != 1) {
    throw TensorError("direct egnn: coordinate and velocity gates must be scalar");
  }
}

DirectEgnnParams DirectEgnnParams::init(const DirectEgnnConfig& config, Rng& rng) {
  config.validate();
  DirectEgnnParams params;
  params.embed = Mlp({{config.d_node + 1, config.hidden_dim},
                      config.message_mlp.activation, FinalActivation::None},
                     rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    params.layers.push_back({Mlp(config.message_mlp, rng), Mlp(config.coord_mlp, rng),
                             Mlp(config.vel_mlp, rng), Mlp(config.node_mlp, rng)});
  }
  return params;
}

std::vector<NamedParam> DirectEgnnParams::named_params() const {
  std::vector<NamedParam> out = embed.named_params("embed");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    for (const auto& p : layers[l].message.named_params(prefix + ".message"))
      out.push_back(p);
    for (const auto& p : layers[l].coord.named_params(prefix + ".coord")) out.push_back(p);
    for (const auto& p : layers[l].vel.named_params(prefix + ".vel")) out.push_back(p);
    for (const auto& p : layers[l].node.named_params(prefix + ".node")) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> DirectEgnnParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : named_params()) out.push_back(p.tensor);
  return out;
}

DirectPrediction direct_egnn_predict(const sim::SystemState& state,
                                     const DirectEgnnParams& params,
                                     const DirectEgnnConfig& config) {
  const GraphInputs graph = GraphInputs::from_state(state);
  const std::size_t n = graph.n_nodes;

  // node features: raw attributes plus the initial velocity norm
  Mat features(n, state.attributes.cols + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < state.attributes.cols; ++c) {
      features.at(i, c) = state.attributes.at(i, c);
    }
    const double* v = state.velocities.row(i);
    features.at(i, state.attributes.cols) =
        std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  }

  Tensor x = tensor_from_mat(state.positions);
  Tensor v = tensor_from_mat(state.velocities);
  Tensor hidden = params.embed.forward(tensor_from_mat(features));

  DirectPrediction prediction;
  prediction.layer_positions.push_back(state.positions);

  const double scale_factor = neighbor_scale(n);
  for (const DirectEgnnLayer& layer : params.layers) {
    const Tensor xi = index_select(x, graph.receivers);
    const Tensor xj = index_select(x, graph.senders);
    const Tensor dx = sub(xi, xj);
    const Tensor hi = index_select(hidden, graph.receivers);
    const Tensor hj = index_select(hidden, graph.senders);
    const Tensor ft = concat({squared_distances(dx), hi, hj, graph.edge_attrs}, 1);
    const Tensor messages = silu(layer.message.forward(ft));
    const Tensor agg =
        scale(segment_sum(mul(dx, layer.coord.forward(messages)), graph.receivers, n),
              scale_factor);
    v = add(mul(v, layer.vel.forward(hidden)), agg);
    x = add(x, v);
    hidden = add(hidden, layer.node.forward(concat({hidden, segment_sum(messages, graph.receivers, n)}, 1)));
    prediction.layer_positions.push_back(mat_from_tensor(x));
  }
  prediction.positions = x;
  prediction.velocities = v;
  return prediction;
}

}  // namespace nbode::gnn
