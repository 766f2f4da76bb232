#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dglr/autodiff.hpp"
#include "dglr/common.hpp"

namespace dglr {

// Ordered collection of named trainable tensors. Names are unique and
// shapes are frozen at registration.
class ParamSet {
 public:
  Var add(const std::string& name, Tensor init) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
    Var v = make_var(std::move(init), /*requires_grad=*/true);
    index_[name] = entries_.size();
    entries_.push_back({name, v});
    return v;
  }

  const Var& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second].var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  struct Entry {
    std::string name;
    Var var;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var->zero_grad();
  }

  // Deep copy of the values, for snapshots and comparisons.
  std::vector<Tensor> values() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.var->value);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

// One bias-corrected Adam step using state.learning_rate.
inline void adam_update(ParamSet& params, AdamState& state) {
  for (const auto& e : params.entries()) {
    if (!e.var->has_grad()) {
      throw UsageError("adam_update: parameter '" + e.name + "' has no gradient");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& e : params.entries()) {
    Tensor& value = e.var->value;
    const Tensor& grad = e.var->grad;
    auto [m_it, m_new] = state.first_moment.try_emplace(e.name, value.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(e.name, value.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    m.require_same_shape(value, "adam first moment");
    v.require_same_shape(value, "adam second moment");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      value[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace dglr
