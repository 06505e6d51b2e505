#pragma once

#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "glyphspot/tensor.hpp"

namespace glyphspot {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters with stable addresses, kept in insertion order.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p.name, p.value);
    return *this;
  }
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    Tensor<T> grad(value.shape());
    params_.push_back({name, std::move(value), std::move(grad)});
    return params_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records op outputs and their backward closures; `backward` replays them in
/// reverse and accumulates into the parameters' gradient tensors.
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// One node per parameter per tape: repeated uses share the node.
  Var parameter(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Var v = push(p.value, record_, &p);
    param_nodes_[&p] = v;
    return v;
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  bool has_grad(Var v) const { return !nodes_.at(static_cast<std::size_t>(v.id)).grad.empty(); }
  Tensor<T>& grad(Var v) {
    auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Adds an op output. `backward` receives the output node and runs only if
  /// some input requires grad and the output received a gradient.
  Var emit(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void(Var)> backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    needs = needs && record_;
    Var out = push(std::move(value), needs, nullptr);
    if (needs) ops_.push_back({out, std::move(backward)});
    return out;
  }

  /// Seeds d(loss)=1 and propagates. `loss` must hold exactly one value.
  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar");
    grad(loss)[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
      if (has_grad(it->out)) it->backward(it->out);
    for (auto& [param, var] : param_nodes_) {
      if (!has_grad(var)) continue;
      const auto& g = grad(var);
      for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
  };
  struct Op {
    Var out;
    std::function<void(Var)> backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Parameter<T>*) {
    nodes_.push_back({std::move(value), {}, requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  std::map<Parameter<T>*, Var> param_nodes_;
};

}  // namespace glyphspot
