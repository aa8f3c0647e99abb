#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tsforge/core/tensor.hpp"

namespace tsforge {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Owner of learnable parameters and child modules. Children are registered
/// by pointer, so modules are pinned in memory (non-copyable, non-movable).
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedParameter> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 protected:
  Tensor add_parameter(std::string name, Tensor value);
  template <class M>
  M* add_module(std::string name, std::unique_ptr<M> module) {
    M* raw = module.get();
    owned_.push_back(std::move(module));
    children_.emplace_back(std::move(name), raw);
    return raw;
  }

 private:
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  std::vector<NamedParameter> params_;
  std::vector<std::unique_ptr<Module>> owned_;
  std::vector<std::pair<std::string, Module*>> children_;
};

/// y = x W + b over the last axis; W is [in, out].
class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor gamma_;
  Tensor beta_;
};

}  // namespace tsforge
