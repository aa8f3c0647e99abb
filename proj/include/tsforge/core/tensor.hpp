#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tsforge {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& out)>;

// One vertex of the compute graph. The forward value is immutable once the
// node is returned to the caller; `grad` is allocated lazily on first use.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Disables graph recording for the lifetime of the guard (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Dense row-major float64 tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap shared handle onto a graph node. Ops never mutate
/// their inputs; they allocate a new node that records its parents when any
/// parent requires a gradient and recording is enabled.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for leaves only (parameter initialisation, optimizer steps).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Runs reverse-mode accumulation from this scalar root. Each reachable node
  /// is visited exactly once in reverse topological order.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result. When recording is active and any parent requires a
// gradient, the result keeps its parents and the backward closure.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward, const char* op);

// Gradient buffer of parent `i` of `out`, or an empty span when that parent
// does not take gradients.
std::span<double> parent_grad(Node& out, std::size_t i);

}  // namespace detail

}  // namespace tsforge
