#include "tscr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tscr {

template <class T>
BasicTensor<T>& BasicParameterSet<T>::add(std::string name, BasicTensor<T> value, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, items_.size());
  items_.push_back({std::move(name), std::move(value), decay});
  return items_.back().value;
}

template <class T>
BasicTensor<T>& BasicParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].value;
}

template <class T>
const BasicTensor<T>& BasicParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].value;
}

template <class T>
std::size_t BasicParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;

double global_norm(const GradientMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (float v : g.data()) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

GradientMap clip_global_norm(GradientMap grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) scale_gradients(grads, static_cast<float>(max_norm / norm));
  return grads;
}

void accumulate_gradients(GradientMap& acc, const GradientMap& other) {
  for (const auto& [name, g] : other) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, g);
      continue;
    }
    if (it->second.numel() != g.numel())
      throw std::invalid_argument("gradient shape mismatch for " + name);
    auto dst = it->second.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

void scale_gradients(GradientMap& grads, float factor) {
  for (auto& [name, g] : grads)
    for (auto& v : g.data()) v *= factor;
}

void adam_step(ParameterSet& params, const GradientMap& grads, AdamState& state,
               const AdamConfig& config) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& param : params.items()) {
    auto git = grads.find(param.name);
    if (git == grads.end()) continue;
    const auto& grad = git->second;
    if (grad.shape() != param.value.shape())
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + param.name);
    auto& m = state.first_moment[param.name];
    auto& v = state.second_moment[param.name];
    if (m.empty()) m = Tensor(param.value.shape());
    if (v.empty()) v = Tensor(param.value.shape());
    const double wd = param.decay ? config.weight_decay : 0.0;
    auto theta = param.value.data();
    auto g = grad.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + wd * theta[i];
      const double mi = config.beta1 * md[i] + (1.0 - config.beta1) * gi;
      const double vi = config.beta2 * vd[i] + (1.0 - config.beta2) * gi * gi;
      md[i] = static_cast<float>(mi);
      vd[i] = static_cast<float>(vi);
      const double step = config.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + config.epsilon);
      theta[i] = static_cast<float>(theta[i] - step);
    }
  }
}

}  // namespace tscr
