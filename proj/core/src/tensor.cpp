#include "tscr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

namespace tscr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

// ---------------------------------------------------------------------------
// BasicTensor

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

template <class T>
std::size_t BasicTensor<T>::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return numel() / shape_.back();
}

template <class T>
std::size_t BasicTensor<T>::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

template <class T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------------------
// Tape

template <class T>
Var BasicTape<T>::parameter(const TensorT& value, std::string name) {
  Node node;
  node.borrowed = &value;
  node.requires_grad = true;
  node.name = std::move(name);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
Var BasicTape<T>::input(TensorT value, bool requires_grad, std::string name) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  node.name = std::move(name);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
Var BasicTape<T>::record(TensorT value, std::vector<Var> inputs, BackwardFn backward,
                         const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op_name);
  }
  Node node;
  node.owned = std::move(value);
  node.is_leaf = false;
  node.backward = std::move(backward);
  node.name = op_name;
  node.inputs.reserve(inputs.size());
  for (auto v : inputs) {
    if (v.index >= nodes_.size()) throw std::out_of_range("tape input out of range");
    node.inputs.push_back(v.index);
    node.requires_grad = node.requires_grad || nodes_[v.index].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
const BasicTensor<T>& BasicTape<T>::value(Var v) const {
  const auto& node = nodes_.at(v.index);
  return node.borrowed ? *node.borrowed : node.owned;
}

template class BasicTape<float>;
template class BasicTape<double>;

template <class T>
BasicGradientMap<T> backward(const BasicTape<T>& tape, Var loss) {
  const auto& nodes = tape.nodes();
  if (loss.index >= nodes.size()) throw std::out_of_range("loss is not on the tape");
  if (tape.value(loss).numel() != 1) throw std::invalid_argument("loss must be a scalar");

  std::vector<BasicTensor<T>> grads(loss.index + 1);
  grads[loss.index] = BasicTensor<T>(tape.value(loss).shape(), T{1});

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const auto& node = nodes[i];
    if (node.is_leaf || !node.requires_grad || grads[i].empty()) continue;
    std::vector<BasicTensor<T>*> slots;
    slots.reserve(node.inputs.size());
    for (auto in : node.inputs) {
      if (in >= i) throw std::logic_error("cyclic tape: node " + std::to_string(i) +
                                          " consumes node " + std::to_string(in));
      if (!nodes[in].requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (grads[in].empty()) grads[in] = BasicTensor<T>(tape.value(Var{in}).shape());
      slots.push_back(&grads[in]);
    }
    node.backward(tape, Var{i}, grads[i], slots);
  }

  BasicGradientMap<T> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    auto name = node.name.empty() ? "leaf:" + std::to_string(i) : node.name;
    const bool reached = i < grads.size() && !grads[i].empty();
    auto it = out.find(name);
    if (it == out.end()) {
      out.emplace(name, reached ? std::move(grads[i]) : BasicTensor<T>(tape.value(Var{i}).shape()));
    } else if (reached) {
      // Same parameter registered twice: contributions add.
      for (std::size_t k = 0; k < it->second.numel(); ++k) it->second[k] += grads[i][k];
    }
  }
  return out;
}

template BasicGradientMap<float> backward(const BasicTape<float>&, Var);
template BasicGradientMap<double> backward(const BasicTape<double>&, Var);

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <class T>
using TensorOf = BasicTensor<T>;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void accumulate(TensorOf<T>* dst, const TensorOf<T>& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class T>
Shape matrix_shape(std::size_t rows, std::size_t cols) {
  return Shape{rows, cols};
}

}  // namespace

template <class T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  require(x.numel() == y.numel(), "add: shape mismatch " + shape_string(x.shape()) + " vs " +
                                      shape_string(y.shape()));
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b},
                     [](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       accumulate(in[0], g);
                       accumulate(in[1], g);
                     },
                     "add");
}

template <class T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  require(x.numel() == y.numel(), "mul: shape mismatch");
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b},
                     [a, b](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       const auto& x = tp.value(a);
                       const auto& y = tp.value(b);
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         if (in[0]) (*in[0])[i] += g[i] * y[i];
                         if (in[1]) (*in[1])[i] += g[i] * x[i];
                       }
                     },
                     "mul");
}

template <class T>
Var scale(BasicTape<T>& tape, Var a, T factor) {
  const auto& x = tape.value(a);
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * factor;
  return tape.record(std::move(out), {a},
                     [factor](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i] * factor;
                     },
                     "scale");
}

template <class T>
Var add_bias(BasicTape<T>& tape, Var a, Var bias) {
  const auto& x = tape.value(a);
  const auto& b = tape.value(bias);
  const auto rows = x.rows(), cols = x.cols();
  require(b.numel() == cols, "add_bias: bias length " + std::to_string(b.numel()) +
                                 " != columns " + std::to_string(cols));
  TensorOf<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + b[c];
  return tape.record(std::move(out), {a, bias},
                     [rows, cols](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       accumulate(in[0], g);
                       if (in[1]) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) (*in[1])[c] += g[r * cols + c];
                       }
                     },
                     "add_bias");
}

template <class T>
Var matmul(BasicTape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  const auto m = x.rows(), k = x.cols(), n = y.cols();
  require(y.rows() == k, "matmul: inner dimensions " + shape_string(x.shape()) + " * " +
                             shape_string(y.shape()));
  TensorOf<T> out(matrix_shape<T>(m, n));
  gemm_nn(x.data().data(), y.data().data(), out.data().data(), m, k, n);
  return tape.record(
      std::move(out), {a, b},
      [a, b, m, k, n](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
        const auto& x = tp.value(a);
        const auto& y = tp.value(b);
        if (in[0]) gemm_nt(g.data().data(), y.data().data(), in[0]->data().data(), m, n, k);
        if (in[1]) gemm_tn(x.data().data(), g.data().data(), in[1]->data().data(), m, k, n);
      },
      "matmul");
}

template <class T>
Var matmul_nt(BasicTape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  const auto m = x.rows(), k = x.cols(), n = y.rows();
  require(y.cols() == k, "matmul_nt: inner dimensions " + shape_string(x.shape()) + " * " +
                             shape_string(y.shape()) + "^T");
  TensorOf<T> out(matrix_shape<T>(m, n));
  gemm_nt(x.data().data(), y.data().data(), out.data().data(), m, k, n);
  return tape.record(
      std::move(out), {a, b},
      [a, b, m, k, n](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
        const auto& x = tp.value(a);
        const auto& y = tp.value(b);
        // dA = G * B, dB = G^T * A
        if (in[0]) gemm_nn(g.data().data(), y.data().data(), in[0]->data().data(), m, n, k);
        if (in[1]) gemm_tn(g.data().data(), x.data().data(), in[1]->data().data(), m, n, k);
      },
      "matmul_nt");
}

template <class T>
Var gelu(BasicTape<T>& tape, Var xv) {
  const auto& x = tape.value(xv);
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out[i] = static_cast<T>(gelu_scalar(static_cast<double>(x[i])));
  }
  return tape.record(std::move(out), {xv},
                     [xv](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       const auto& x = tp.value(xv);
                       constexpr double inv_sqrt_2pi = 0.3989422804014327;
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         const double v = x[i];
                         const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                         (*in[0])[i] += g[i] * static_cast<T>(cdf + v * pdf);
                       }
                     },
                     "gelu");
}

template <class T>
Var relu(BasicTape<T>& tape, Var xv) {
  const auto& x = tape.value(xv);
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return tape.record(std::move(out), {xv},
                     [xv](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       const auto& x = tp.value(xv);
                       for (std::size_t i = 0; i < g.numel(); ++i)
                         if (x[i] > T{0}) (*in[0])[i] += g[i];
                     },
                     "relu");
}

template <class T>
Var layer_norm(BasicTape<T>& tape, Var xv, Var gamma_v, Var beta_v, T eps) {
  const auto& x = tape.value(xv);
  const auto& gamma = tape.value(gamma_v);
  const auto& beta = tape.value(beta_v);
  const auto rows = x.rows(), cols = x.cols();
  require(gamma.numel() == cols && beta.numel() == cols,
          "layer_norm: gamma/beta must match the last dimension");
  TensorOf<T> out(x.shape());
  // Normalized activations and per-row inverse std kept for backward.
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * cols;
    T mean{0};
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(cols);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mean) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gamma[c] + beta[c];
    }
  }
  return tape.record(
      std::move(out), {xv, gamma_v, beta_v},
      [gamma_v, xhat, inv_std, rows, cols](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
        const auto& gamma = tp.value(gamma_v);
        const auto n = static_cast<T>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data().data() + r * cols;
          const T* hr = xhat->data() + r * cols;
          if (in[1] || in[2]) {
            for (std::size_t c = 0; c < cols; ++c) {
              if (in[1]) (*in[1])[c] += gr[c] * hr[c];
              if (in[2]) (*in[2])[c] += gr[c];
            }
          }
          if (!in[0]) continue;
          T sum_dh{0}, sum_dh_h{0};
          for (std::size_t c = 0; c < cols; ++c) {
            const T dh = gr[c] * gamma[c];
            sum_dh += dh;
            sum_dh_h += dh * hr[c];
          }
          const T is = (*inv_std)[r];
          T* dx = in[0]->data().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            const T dh = gr[c] * gamma[c];
            dx[c] += is * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
          }
        }
      },
      "layer_norm");
}

template <class T>
Var softmax_masked(BasicTape<T>& tape, Var lv, std::span<const std::uint8_t> blocked) {
  const auto& logits = tape.value(lv);
  const auto rows = logits.rows(), cols = logits.cols();
  require(blocked.empty() || blocked.size() == cols,
          "softmax_masked: blocked mask length must equal the last dimension");
  std::vector<std::uint8_t> block(blocked.begin(), blocked.end());
  if (block.empty()) block.assign(cols, 0);
  if (std::all_of(block.begin(), block.end(), [](auto b) { return b != 0; })) {
    throw NumericError("softmax_masked: every position is blocked");
  }
  TensorOf<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = logits.data().data() + r * cols;
    T* orow = out.data().data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!block[c]) mx = std::max(mx, lr[c]);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) {
      orow[c] = block[c] ? T{0} : std::exp(lr[c] - mx);
      total += orow[c];
    }
    for (std::size_t c = 0; c < cols; ++c) orow[c] /= total;
  }
  return tape.record(
      std::move(out), {lv},
      [rows, cols](const BasicTape<T>& tp, Var self, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
        if (!in[0]) return;
        const auto& p = tp.value(self);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* pr = p.data().data() + r * cols;
          const T* gr = g.data().data() + r * cols;
          T dot{0};
          for (std::size_t c = 0; c < cols; ++c) dot += pr[c] * gr[c];
          T* dx = in[0]->data().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dx[c] += pr[c] * (gr[c] - dot);
        }
      },
      "softmax_masked");
}

template <class T>
Var dropout_with_mask(BasicTape<T>& tape, Var xv, std::vector<T> keep_scale) {
  const auto& x = tape.value(xv);
  require(keep_scale.size() == x.numel(), "dropout: mask size mismatch");
  TensorOf<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * keep_scale[i];
  return tape.record(std::move(out), {xv},
                     [mask = std::move(keep_scale)](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i] * mask[i];
                     },
                     "dropout");
}

template <class T>
Var gather_rows(BasicTape<T>& tape, Var table_v, std::span<const std::int32_t> ids) {
  const auto& table = tape.value(table_v);
  const auto n_rows = table.rows(), cols = table.cols();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  TensorOf<T> out(Shape{idx.size(), cols});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n_rows) {
      throw std::out_of_range("gather_rows: id " + std::to_string(idx[i]) +
                              " outside table of " + std::to_string(n_rows) + " rows");
    }
    auto src = table.row(static_cast<std::size_t>(idx[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return tape.record(std::move(out), {table_v},
                     [idx = std::move(idx), cols](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         auto dst = in[0]->row(static_cast<std::size_t>(idx[i]));
                         auto src = g.row(i);
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                       }
                     },
                     "gather_rows");
}

template <class T>
Var mask_rows(BasicTape<T>& tape, Var xv, std::span<const std::uint8_t> keep) {
  const auto& x = tape.value(xv);
  const auto rows = x.rows(), cols = x.cols();
  require(keep.size() == rows, "mask_rows: flag count must equal row count");
  std::vector<std::uint8_t> flags(keep.begin(), keep.end());
  TensorOf<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    if (flags[r])
      std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin());
  return tape.record(std::move(out), {xv},
                     [flags = std::move(flags), cols](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < flags.size(); ++r) {
                         if (!flags[r]) continue;
                         for (std::size_t c = 0; c < cols; ++c) in[0]->at(r, c) += g.at(r, c);
                       }
                     },
                     "mask_rows");
}

template <class T>
Var scatter_add_rows(BasicTape<T>& tape, Var xv, std::span<const std::int32_t> src,
                     std::span<const std::int32_t> dst, std::size_t out_rows) {
  const auto& x = tape.value(xv);
  const auto cols = x.cols();
  require(src.size() == dst.size(), "scatter_add_rows: src/dst length mismatch");
  std::vector<std::int32_t> s(src.begin(), src.end()), d(dst.begin(), dst.end());
  TensorOf<T> out(Shape{out_rows, cols});
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0 || static_cast<std::size_t>(s[i]) >= x.rows() || d[i] < 0 ||
        static_cast<std::size_t>(d[i]) >= out_rows) {
      throw std::out_of_range("scatter_add_rows: index out of range");
    }
    auto from = x.row(static_cast<std::size_t>(s[i]));
    auto to = out.row(static_cast<std::size_t>(d[i]));
    for (std::size_t c = 0; c < cols; ++c) to[c] += from[c];
  }
  return tape.record(std::move(out), {xv},
                     [s = std::move(s), d = std::move(d), cols](
                         const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < s.size(); ++i) {
                         auto to = in[0]->row(static_cast<std::size_t>(s[i]));
                         auto from = g.row(static_cast<std::size_t>(d[i]));
                         for (std::size_t c = 0; c < cols; ++c) to[c] += from[c];
                       }
                     },
                     "scatter_add_rows");
}

template <class T>
Var slice_cols(BasicTape<T>& tape, Var xv, std::size_t begin, std::size_t width) {
  const auto& x = tape.value(xv);
  const auto rows = x.rows(), cols = x.cols();
  require(begin + width <= cols, "slice_cols: range exceeds columns");
  TensorOf<T> out(Shape{rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = x[r * cols + begin + c];
  return tape.record(std::move(out), {xv},
                     [rows, cols, begin, width](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           (*in[0])[r * cols + begin + c] += g.at(r, c);
                     },
                     "slice_cols");
}

template <class T>
Var concat_cols(BasicTape<T>& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto p : parts) {
    require(tape.value(p).rows() == rows, "concat_cols: row count mismatch");
    widths.push_back(tape.value(p).cols());
    total += widths.back();
  }
  TensorOf<T> out(Shape{rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& part = tape.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out.at(r, offset + c) = part.at(r, c);
    offset += widths[k];
  }
  return tape.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [widths, rows, total](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (in[k]) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               in[k]->at(r, c) += g[r * total + off + c];
                         }
                         off += widths[k];
                       }
                     },
                     "concat_cols");
}

template <class T>
Var sum(BasicTape<T>& tape, Var xv) {
  const auto& x = tape.value(xv);
  T total{0};
  for (auto v : x.data()) total += v;
  return tape.record(TensorOf<T>(Shape{1}, std::vector<T>{total}), {xv},
                     [](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (auto& v : in[0]->data()) v += g[0];
                     },
                     "sum");
}

template <class T>
Var row_sum(BasicTape<T>& tape, Var xv) {
  const auto& x = tape.value(xv);
  const auto rows = x.rows(), cols = x.cols();
  TensorOf<T> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += x[r * cols + c];
  return tape.record(std::move(out), {xv},
                     [rows, cols](const BasicTape<T>&, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) (*in[0])[r * cols + c] += g[r];
                     },
                     "row_sum");
}

template <class T>
Var nll_from_probs(BasicTape<T>& tape, Var pv, std::span<const std::int32_t> targets,
                   std::size_t* clamped, T floor) {
  const auto& p = tape.value(pv);
  const auto rows = p.rows(), cols = p.cols();
  require(targets.size() == rows, "nll_from_probs: one target per row required");
  require(rows > 0, "nll_from_probs: no rows");
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> was_clamped(rows, 0);
  T loss{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= cols)
      throw std::out_of_range("nll_from_probs: target outside distribution");
    T pr = p.at(r, static_cast<std::size_t>(tgt[r]));
    if (pr < floor) {
      pr = floor;
      was_clamped[r] = 1;
      if (clamped) ++*clamped;
    }
    loss -= std::log(pr);
  }
  loss /= static_cast<T>(rows);
  return tape.record(
      TensorOf<T>(Shape{1}, std::vector<T>{loss}), {pv},
      [pv, tgt = std::move(tgt), was_clamped = std::move(was_clamped), rows](
          const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
        if (!in[0]) return;
        const auto& p = tp.value(pv);
        for (std::size_t r = 0; r < rows; ++r) {
          if (was_clamped[r]) continue;
          const auto c = static_cast<std::size_t>(tgt[r]);
          in[0]->at(r, c) -= g[0] / (static_cast<T>(rows) * p.at(r, c));
        }
      },
      "nll_from_probs");
}

template <class T>
Var bce_with_logits(BasicTape<T>& tape, Var lv, std::span<const T> labels) {
  const auto& z = tape.value(lv);
  const auto n = z.numel();
  require(labels.size() == n && n > 0, "bce_with_logits: one label per logit required");
  std::vector<T> y(labels.begin(), labels.end());
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T v = z[i];
    // max(v,0) - v*y + log(1 + exp(-|v|))
    loss += std::max(v, T{0}) - v * y[i] + std::log1p(std::exp(-std::abs(v)));
  }
  loss /= static_cast<T>(n);
  return tape.record(TensorOf<T>(Shape{1}, std::vector<T>{loss}), {lv},
                     [lv, y = std::move(y), n](const BasicTape<T>& tp, Var, const TensorOf<T>& g, std::span<TensorOf<T>* const> in) {
                       if (!in[0]) return;
                       const auto& z = tp.value(lv);
                       for (std::size_t i = 0; i < n; ++i) {
                         const T s = T{1} / (T{1} + std::exp(-z[i]));
                         (*in[0])[i] += g[0] * (s - y[i]) / static_cast<T>(n);
                       }
                     },
                     "bce_with_logits");
}

#define TSCR_INSTANTIATE_OPS(T)                                                            \
  template Var add<T>(BasicTape<T>&, Var, Var);                                             \
  template Var mul<T>(BasicTape<T>&, Var, Var);                                             \
  template Var scale<T>(BasicTape<T>&, Var, T);                                             \
  template Var add_bias<T>(BasicTape<T>&, Var, Var);                                        \
  template Var matmul<T>(BasicTape<T>&, Var, Var);                                          \
  template Var matmul_nt<T>(BasicTape<T>&, Var, Var);                                       \
  template Var gelu<T>(BasicTape<T>&, Var);                                                 \
  template Var relu<T>(BasicTape<T>&, Var);                                                 \
  template Var layer_norm<T>(BasicTape<T>&, Var, Var, Var, T);                              \
  template Var softmax_masked<T>(BasicTape<T>&, Var, std::span<const std::uint8_t>);        \
  template Var dropout_with_mask<T>(BasicTape<T>&, Var, std::vector<T>);                    \
  template Var gather_rows<T>(BasicTape<T>&, Var, std::span<const std::int32_t>);           \
  template Var mask_rows<T>(BasicTape<T>&, Var, std::span<const std::uint8_t>);             \
  template Var scatter_add_rows<T>(BasicTape<T>&, Var, std::span<const std::int32_t>,       \
                                   std::span<const std::int32_t>, std::size_t);             \
  template Var slice_cols<T>(BasicTape<T>&, Var, std::size_t, std::size_t);                 \
  template Var concat_cols<T>(BasicTape<T>&, std::span<const Var>);                         \
  template Var sum<T>(BasicTape<T>&, Var);                                                  \
  template Var row_sum<T>(BasicTape<T>&, Var);                                              \
  template Var nll_from_probs<T>(BasicTape<T>&, Var, std::span<const std::int32_t>,         \
                                 std::size_t*, T);                                          \
  template Var bce_with_logits<T>(BasicTape<T>&, Var, std::span<const T>);

TSCR_INSTANTIATE_OPS(float)
TSCR_INSTANTIATE_OPS(double)

#undef TSCR_INSTANTIATE_OPS

}  // namespace tscr
