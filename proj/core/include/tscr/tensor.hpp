#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscr {

/// Raised whenever a forward op produces NaN or Inf, or a numeric
/// precondition (e.g. an all-blocked softmax row) cannot be met.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. The scalar type is float for the model and
/// double for gradient-check oracles.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers; rank-1 tensors act as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t row, std::size_t col) { return data_[row * cols() + col]; }
  const T& at(std::size_t row, std::size_t col) const {
    return data_[row * cols() + col];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(T value);
  bool all_finite() const;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Handle to a node recorded on a tape.
struct Var {
  std::size_t index = 0;
};

/// Ordered record of primitive ops. Leaves are parameters (borrowed,
/// never copied) or owned inputs; every op appends a node whose inputs
/// precede it, so reverse replay is a valid topological order.
template <class T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  // Receives the tape, the node's own handle, the output gradient and one
  // gradient slot per input (null for inputs that do not require gradients).
  // Values must be looked up through the tape: node storage may relocate.
  using BackwardFn = std::function<void(const BasicTape& tape, Var self, const TensorT& grad_out,
                                        std::span<TensorT* const> input_grads)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) noexcept = default;
  BasicTape& operator=(BasicTape&&) noexcept = default;

  /// Borrowed trainable leaf; `value` must outlive the tape.
  Var parameter(const TensorT& value, std::string name);
  /// Owned leaf.
  Var input(TensorT value, bool requires_grad = false, std::string name = {});

  Var record(TensorT value, std::vector<Var> inputs, BackwardFn backward,
             const char* op_name);

  const TensorT& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  struct Node {
    const TensorT* borrowed = nullptr;
    TensorT owned;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = true;
    std::string name;
  };
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

template <class T>
using BasicGradientMap = std::map<std::string, BasicTensor<T>>;
using GradientMap = BasicGradientMap<float>;

/// Reverse replay from a scalar loss. Returns the gradient of every
/// requires_grad leaf keyed by its name (unnamed leaves get "leaf:<index>").
/// Leaves the loss does not reach receive a zero gradient.
template <class T>
BasicGradientMap<T> backward(const BasicTape<T>& tape, Var loss);

// ---------------------------------------------------------------------------
// Differentiable ops. All take and return 2-d [rows x cols] tensors unless
// noted; a rank-1 tensor of length n is accepted where a [1 x n] row is.

template <class T> Var add(BasicTape<T>& tape, Var a, Var b);
template <class T> Var mul(BasicTape<T>& tape, Var a, Var b);
template <class T> Var scale(BasicTape<T>& tape, Var a, T factor);
/// a [n x m] + bias [m] broadcast over rows.
template <class T> Var add_bias(BasicTape<T>& tape, Var a, Var bias);
/// a [n x k] * b [k x m].
template <class T> Var matmul(BasicTape<T>& tape, Var a, Var b);
/// a [n x k] * b^T where b is [m x k].
template <class T> Var matmul_nt(BasicTape<T>& tape, Var a, Var b);

template <class T> Var gelu(BasicTape<T>& tape, Var x);
template <class T> Var relu(BasicTape<T>& tape, Var x);

/// Row-wise layer normalization over the last dimension (biased variance).
template <class T> Var layer_norm(BasicTape<T>& tape, Var x, Var gamma, Var beta, T eps);

/// Row-wise softmax over the last dimension. Columns flagged in `blocked`
/// get probability exactly zero. Throws NumericError if a row has no
/// unblocked column.
template <class T>
Var softmax_masked(BasicTape<T>& tape, Var logits, std::span<const std::uint8_t> blocked);

/// Inverted dropout driven by a caller-owned engine. p == 0 is identity.
template <class T, class Rng>
Var dropout(BasicTape<T>& tape, Var x, double p, Rng& rng);
template <class T>
Var dropout_with_mask(BasicTape<T>& tape, Var x, std::vector<T> keep_scale);

/// Rows of `table` selected by `ids` (embedding lookup).
template <class T> Var gather_rows(BasicTape<T>& tape, Var table, std::span<const std::int32_t> ids);
/// Zeroes rows whose flag in `keep` is 0.
template <class T> Var mask_rows(BasicTape<T>& tape, Var x, std::span<const std::uint8_t> keep);
/// Sums rows of x into an [out_rows x cols] result: out[dst[i]] += x[src[i]].
template <class T>
Var scatter_add_rows(BasicTape<T>& tape, Var x, std::span<const std::int32_t> src,
                     std::span<const std::int32_t> dst, std::size_t out_rows);
template <class T> Var slice_cols(BasicTape<T>& tape, Var x, std::size_t begin, std::size_t width);
template <class T> Var concat_cols(BasicTape<T>& tape, std::span<const Var> parts);

/// Sum of all elements -> [1].
template <class T> Var sum(BasicTape<T>& tape, Var x);
/// Per-row sum -> [rows].
template <class T> Var row_sum(BasicTape<T>& tape, Var x);

/// Mean over rows of -log(max(p[row, target[row]], floor)). Rows clamped by
/// the floor are counted in `*clamped` when non-null.
template <class T>
Var nll_from_probs(BasicTape<T>& tape, Var probs, std::span<const std::int32_t> targets,
                   std::size_t* clamped = nullptr, T floor = T(1e-12));

/// Mean binary cross-entropy of logits against {0,1} labels, computed in
/// the numerically stable log-sum-exp form.
template <class T>
Var bce_with_logits(BasicTape<T>& tape, Var logits, std::span<const T> labels);

// ---------------------------------------------------------------------------
// Scalar references used by both the ops and the tests.

double gelu_scalar(double x);

}  // namespace tscr

#include "tscr/detail/dropout_impl.hpp"
