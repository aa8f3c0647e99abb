#include "tsforge/core/module.hpp"

#include <cmath>

#include "tsforge/core/ops.hpp"

namespace tsforge {

Tensor Module::add_parameter(std::string name, Tensor value) {
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value});
  return value;
}

void Module::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (const auto& p : params_) out.push_back({prefix + p.name, p.tensor});
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

std::vector<NamedParameter> Module::named_parameters() const {
  std::vector<NamedParameter> out;
  collect("", out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias) : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = add_parameter("weight", Tensor::uniform({in, out}, rng, -bound, bound));
  if (bias) bias_ = add_parameter("bias", Tensor::uniform({out}, rng, -bound, bound));
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

LayerNorm::LayerNorm(std::size_t dim) {
  gamma_ = add_parameter("gamma", Tensor::ones({dim}));
  beta_ = add_parameter("beta", Tensor::zeros({dim}));
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

}  // namespace tsforge
