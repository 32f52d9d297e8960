#include "nbode/nn.hpp"

#include <cmath>

namespace nbode {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::SiLU: return "silu";
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "silu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "silu") return Activation::SiLU;
  if (name == "relu") return Activation::ReLU;
  if (name == "tanh") return Activation::Tanh;
  throw TensorError("unknown activation: " + name);
}

std::string final_activation_name(FinalActivation a) {
  return a == FinalActivation::Sigmoid ? "sigmoid" : "none";
}

FinalActivation final_activation_from_name(const std::string& name) {
  if (name == "none") return FinalActivation::None;
  if (name == "sigmoid") return FinalActivation::Sigmoid;
  throw TensorError("unknown final activation: " + name);
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) {
    throw TensorError("MlpSpec: layer_widths needs at least input and output width");
  }
  for (std::size_t w : layer_widths) {
    if (w == 0) throw TensorError("MlpSpec: zero layer width");
  }
}

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l + 1 < spec_.layer_widths.size(); ++l) {
    const std::size_t fan_in = spec_.layer_widths[l];
    const std::size_t fan_out = spec_.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    weights_.push_back(Tensor::uniform({fan_in, fan_out}, -bound, bound, rng, true));
    biases_.push_back(Tensor::uniform({1, fan_out}, -bound, bound, rng, true));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add(matmul(h, weights_[l]), biases_[l]);
    const bool last = l + 1 == weights_.size();
    if (!last) {
      switch (spec_.activation) {
        case Activation::SiLU: h = silu(h); break;
        case Activation::ReLU: h = relu(h); break;
        case Activation::Tanh: h = nbode::tanh(h); break;
      }
    }
  }
  if (spec_.final_activation == FinalActivation::Sigmoid) h = sigmoid(h);
  return h;
}

std::vector<NamedParam> Mlp::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), weights_[l]});
    out.push_back({prefix + ".b" + std::to_string(l), biases_[l]});
  }
  return out;
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (std::size_t idx = 0; idx < params_.size(); ++idx) {
    Tensor& p = params_[idx];
    if (!p.has_grad()) {
      throw TensorError("adam_step: parameter " + std::to_string(idx) + " has no gradient");
    }
    auto theta = p.raw_data();
    auto g = p.raw_grad();
    auto& m = m_[idx];
    auto& v = v_[idx];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double grad = g[i] + config_.weight_decay * theta[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad * grad;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
    p.zero_grad();
  }
}

void Adam::restore(std::int64_t step_count, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw TensorError("adam: moment buffers do not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].size() || v[i].size() != params_[i].size()) {
      throw TensorError("adam: moment buffer " + std::to_string(i) + " has wrong size");
    }
  }
  step_count_ = step_count;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace nbode
