#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "affplan/common.hpp"

namespace affplan::nn {

/// Dense row-major matrix. Rows are batch entries throughout the library.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  /// Copies `count` rows starting at `first`.
  Matrix slice_rows(std::size_t first, std::size_t count) const {
    Matrix out(count, cols);
    std::copy(data.begin() + first * cols, data.begin() + (first + count) * cols, out.data.begin());
    return out;
  }
};

/// One named parameter array with its gradient and Adam moments.
struct ParamArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> first_moment;
  std::vector<float> second_moment;

  std::size_t size() const { return value.size(); }
};

class ParamStore {
 public:
  /// Registers a zero-initialised array. Names must be unique.
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  ParamArray& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray& operator[](std::size_t i) const { return arrays_[i]; }
  std::size_t size() const { return arrays_.size(); }
  std::span<ParamArray> arrays() { return arrays_; }
  std::span<const ParamArray> arrays() const { return arrays_; }

  void zero_grad();
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  /// Throws NumericError naming the first array holding a non-finite value.
  void check_finite() const;
  std::size_t parameter_count() const;

 private:
  std::vector<ParamArray> arrays_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Bias-corrected Adam update over every array; increments the step counter.
/// Non-finite gradients raise NumericError before anything is modified.
void adam_step(ParamStore& params, const AdamConfig& config);

/// Uniform(+-sqrt(6 / (fan_in + fan_out))).
void glorot_uniform(ParamArray& array, Rng& rng);

enum class Activation { kLinear, kTanh, kSigmoid };

// ---------------------------------------------------------------------------
// Reverse-mode tape

enum class Op {
  kInput,
  kParam,
  kAffine,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kOneMinus,
  kTanh,
  kSigmoid,
  kConcat,
  kSliceCols,
  kBceLogits,
  kSoftmaxNll,
  kSquaredError,
  kWeightedSum,
};

/// Records operations over batched matrices and evaluates gradients of a
/// scalar loss. Every op's forward value depends only on its own row, so a
/// row computed in a batch of N is bit-identical to the same row alone.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Var input(Matrix<T> value);
  /// Parameter leaf; repeated calls for the same array return the same node.
  Var param(const ParamStore& store, std::size_t index);

  Var affine(Var x, Var w, Var b);  // x * W + b
  Var matmul(Var x, Var w);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var one_minus(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t first, std::size_t count);

  /// Sum_ij w_ij * BCE(sigmoid(l_ij), y_ij) with probabilities clamped to
  /// [1e-7, 1 - 1e-7] inside the log; gradient is w * (sigmoid(l) - y).
  Var bce_with_logits(Var logits, const Matrix<T>& labels, const Matrix<T>& weights);
  /// Sum_r w_r * -log softmax(l_r)[target_r]. weights is rows x 1.
  Var softmax_nll(Var logits, std::vector<int> targets, const Matrix<T>& weights);
  /// Sum_ij w_ij * (p_ij - t_ij)^2.
  Var squared_error(Var pred, const Matrix<T>& targets, const Matrix<T>& weights);
  Var weighted_sum(std::span<const Var> scalars, std::span<const T> weights);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Requires a 1x1 loss node.
  void backward(Var loss);

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Matrix<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  T scalar(Var v) const;

  /// Gradient for a parameter array (zeros if the array was never used).
  Matrix<T> param_grad(const ParamStore& store, std::size_t index) const;
  /// Adds parameter gradients into the store's float gradient buffers.
  void accumulate_param_grads(ParamStore& store) const;

  /// Adds `delta` to one element of a parameter when it is first loaded.
  /// Used by finite-difference checks in double precision.
  void perturb(std::size_t param_index, std::size_t flat_index, T delta);

  std::size_t node_count() const { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id).op; }

 private:
  struct Node {
    Op op = Op::kInput;
    int a = -1;
    int b = -1;
    int c = -1;
    std::vector<int> parts;
    std::size_t offset = 0;
    std::size_t param_index = 0;
    Matrix<T> value;
    Matrix<T> grad;
    Matrix<T> aux;
    Matrix<T> aux2;
    std::vector<int> targets;
  };

  Var push(Node node);
  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  void check_same_shape(Var a, Var b, const char* op) const;

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, int> param_nodes_;
  struct Perturbation {
    std::size_t param;
    std::size_t flat;
    T delta;
  };
  std::vector<Perturbation> perturbations_;
};

// ---------------------------------------------------------------------------
// Layers

struct DenseLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kLinear;
};

DenseLayer add_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                     Activation activation, Rng& rng);

template <typename T>
typename Tape<T>::Var dense(Tape<T>& tape, const ParamStore& store, const DenseLayer& layer,
                            typename Tape<T>::Var x);

/// Stack of dense layers: `hidden_layers` tanh layers of width `hidden`, then
/// an output layer with `output_activation`.
struct Mlp {
  std::vector<DenseLayer> layers;
  std::size_t in = 0;
  std::size_t out = 0;
};

Mlp add_mlp(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
            std::size_t hidden_layers, std::size_t out, Activation output_activation, Rng& rng);

template <typename T>
typename Tape<T>::Var mlp(Tape<T>& tape, const ParamStore& store, const Mlp& net,
                          typename Tape<T>::Var x);

/// Gated recurrent cell:
///   u = sigmoid(x Wxu + h Whu + bu)       update gate
///   r = sigmoid(x Wxr + h Whr + br)       reset gate
///   c = tanh(x Wxc + (r * h) Whc + bc)    candidate
///   h' = (1 - u) * h + u * c
/// A closed update gate (u -> 0) keeps the previous state.
struct GruCell {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t wxu = 0, whu = 0, bu = 0;
  std::size_t wxr = 0, whr = 0, br = 0;
  std::size_t wxc = 0, whc = 0, bc = 0;
};

/// Update-gate bias starts at -1 so fresh cells lean towards retaining state.
GruCell add_gru(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);

template <typename T>
typename Tape<T>::Var gru(Tape<T>& tape, const ParamStore& store, const GruCell& cell,
                          typename Tape<T>::Var h, typename Tape<T>::Var x);

/// Single-layer forward without a tape (for direct checks and tooling).
Matrix<float> dense_forward(const ParamStore& store, const DenseLayer& layer, const Matrix<float>& input);
Matrix<float> recurrent_cell_forward(const ParamStore& store, const GruCell& cell, const Matrix<float>& hidden,
                                     const Matrix<float>& input);

// ---------------------------------------------------------------------------
// Scalar losses

inline constexpr double kProbabilityClamp = 1e-7;

double bce_loss(double predicted, int label);
double categorical_nll(std::span<const float> logits, std::size_t target);

}  // namespace affplan::nn
