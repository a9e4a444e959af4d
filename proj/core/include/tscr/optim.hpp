#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tscr/tensor.hpp"

namespace tscr {

/// Named trainable tensor. `decay` selects whether L2 weight decay applies.
template <class T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  bool decay = true;
};

/// Ordered collection of parameters; iteration order is registration order,
/// which fixes the checkpoint layout and the optimizer's update order.
template <class T>
class BasicParameterSet {
 public:
  BasicTensor<T>& add(std::string name, BasicTensor<T> value, bool decay = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  BasicTensor<T>& get(const std::string& name);
  const BasicTensor<T>& get(const std::string& name) const;

  std::vector<BasicParameter<T>>& items() { return items_; }
  const std::vector<BasicParameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  template <class U>
  BasicParameterSet<U> cast() const {
    BasicParameterSet<U> out;
    for (const auto& p : items_) out.add(p.name, p.value.template cast<U>(), p.decay);
    return out;
  }

  friend bool operator==(const BasicParameterSet& a, const BasicParameterSet& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i) {
      if (a.items_[i].name != b.items_[i].name || !(a.items_[i].value == b.items_[i].value))
        return false;
    }
    return true;
  }

 private:
  std::vector<BasicParameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

using ParameterSet = BasicParameterSet<float>;

double global_norm(const GradientMap& grads);

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm.
GradientMap clip_global_norm(GradientMap grads, double max_norm);

/// Adds `other` into `acc` (creating entries as needed).
void accumulate_gradients(GradientMap& acc, const GradientMap& other);
void scale_gradients(GradientMap& grads, float factor);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. For parameters flagged `decay`, the L2
/// term weight_decay * theta is added to the gradient before the moments.
/// Parameters without a gradient entry are left untouched.
void adam_step(ParameterSet& params, const GradientMap& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace tscr
