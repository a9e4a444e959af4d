#pragma once

#include <random>

namespace tscr {

template <class T, class Rng>
Var dropout(BasicTape<T>& tape, Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const auto n = tape.value(x).numel();
  std::bernoulli_distribution keep(1.0 - p);
  const T kept = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(n);
  for (auto& m : mask) m = keep(rng) ? kept : T{0};
  return dropout_with_mask(tape, x, std::move(mask));
}

}  // namespace tscr
