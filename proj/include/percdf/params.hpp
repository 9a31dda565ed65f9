#pragma once
// Named parameter storage living outside any tape. A forward pass binds the
// parameters it touches into its tape as leaves; after backward() the
// harvested node gradients are added back here. One optimizer owns a store;
// concurrent forward passes may read it but never mutate it mid-pass.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "percdf/rng.hpp"
#include "percdf/tensor.hpp"

namespace percdf {

// Fan-in-scaled initialization for weight matrices (LeCun). Latent seeds
// are pinned at 0.02 separately.
inline double fan_in_std(const Shape& shape) {
  const double fan_in = shape.size() >= 1 ? static_cast<double>(shape[0]) : 1.0;
  return 1.0 / std::sqrt(std::max(1.0, fan_in));
}

struct Parameter {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // accumulated across a batch, cleared by the optimizer
};

class ParamStore {
 public:
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
  }

  Parameter& create(const std::string& name, Shape shape, std::vector<double> value) {
    if (contains(name)) throw std::runtime_error("duplicate parameter: " + name);
    if (shape_numel(shape) != static_cast<std::int64_t>(value.size())) {
      throw ShapeError("parameter " + name + ": shape/data mismatch");
    }
    Parameter p;
    p.shape = std::move(shape);
    p.value = std::move(value);
    p.grad.assign(p.value.size(), 0.0);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Parameter& create_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return create(name, std::move(shape), std::move(v));
  }

  // Weight-matrix initialization scaled by fan-in.
  Parameter& create_weight(const std::string& name, Shape shape, Rng& rng) {
    const double stddev = fan_in_std(shape);
    return create_normal(name, std::move(shape), rng, stddev);
  }

  Parameter& create_zeros(const std::string& name, Shape shape) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    return create(name, std::move(shape), std::move(v));
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.assign(p.value.size(), 0.0);
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::int64_t>(p.value.size());
    return n;
  }

  // Deterministic (sorted) iteration, relied on by checkpoints and tests.
  std::map<std::string, Parameter>& entries() { return params_; }
  const std::map<std::string, Parameter>& entries() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

// One forward pass: a tape, the parameter bindings made on it, a ledger and
// an optional dropout stream. Not reusable across frames.
class Workspace {
 public:
  explicit Workspace(ParamStore* store, bool with_grad = false, bool training = false,
                     Rng* dropout_rng = nullptr)
      : store_(store), tape_(&ledger_), with_grad_(with_grad), training_(training),
        dropout_rng_(dropout_rng) {}

  Tape& tape() { return tape_; }
  MemoryLedger& ledger() { return ledger_; }
  bool grad_enabled() const { return with_grad_; }
  bool training() const { return training_; }
  Rng* dropout_rng() { return dropout_rng_; }

  Tensor param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return Tensor(&tape_, it->second);
    const Parameter& p = store_->at(name);
    Tensor t = tape_.leaf(p.shape, p.value, with_grad_);
    bound_.emplace(name, t.id());
    return t;
  }

  // Adds node gradients back into the store after backward().
  void harvest_grads() {
    for (const auto& [name, id] : bound_) {
      const Tape::Node& n = tape_.node(id);
      if (n.grad.empty()) continue;
      Parameter& p = store_->at(name);
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }

  Tensor constant(Shape shape, std::vector<double> data) {
    return tape_.constant(std::move(shape), std::move(data));
  }

 private:
  ParamStore* store_;
  MemoryLedger ledger_;
  Tape tape_;
  bool with_grad_;
  bool training_;
  Rng* dropout_rng_;
  std::map<std::string, int> bound_;
};

}  // namespace percdf
