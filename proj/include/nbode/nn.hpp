#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbode/rng.hpp"
#include "nbode/tensor.hpp"

namespace nbode {

enum class Activation { SiLU, ReLU, Tanh };
enum class FinalActivation { None, Sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);
std::string final_activation_name(FinalActivation a);
FinalActivation final_activation_from_name(const std::string& name);

/// Fully-connected stack: layer_widths[0] inputs through layer_widths.back()
/// outputs, `activation` between layers, optional squashing on the output.
struct MlpSpec {
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::SiLU;
  FinalActivation final_activation = FinalActivation::None;

  void validate() const;  // throws TensorError if layer_widths has < 2 entries
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class Mlp {
 public:
  Mlp() = default;

  /// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(MlpSpec spec, Rng& rng);

  /// x is [batch x in]; returns [batch x out].
  Tensor forward(const Tensor& x) const;

  const MlpSpec& spec() const { return spec_; }
  std::vector<NamedParam> named_params(const std::string& prefix) const;

  Tensor& weight(std::size_t layer) { return weights_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }
  std::size_t n_layers() const { return weights_.size(); }

 private:
  MlpSpec spec_;
  std::vector<Tensor> weights_;  // [in x out] each
  std::vector<Tensor> biases_;   // [1 x out] each
};

/// Adam with bias correction and optional decoupled-from-nothing L2 term
/// folded into the gradient (classic Adam weight decay).
struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// Applies one update in place and zeroes the gradients. Throws
  /// TensorError naming the parameter index if any grad is missing.
  void step();

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

  // Moment buffers, exposed for checkpointing a training run.
  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(std::int64_t step_count, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace nbode
