#include "affplan/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace affplan::nn {

// ---------------------------------------------------------------------------
// ParamStore

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter array '" + name + "'");
  ParamArray array;
  array.name = name;
  array.rows = rows;
  array.cols = cols;
  array.value.assign(rows * cols, 0.0f);
  array.grad.assign(rows * cols, 0.0f);
  array.first_moment.assign(rows * cols, 0.0f);
  array.second_moment.assign(rows * cols, 0.0f);
  arrays_.push_back(std::move(array));
  by_name_.emplace(std::move(name), arrays_.size() - 1);
  return arrays_.size() - 1;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter array '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

void ParamStore::zero_grad() {
  for (auto& a : arrays_) std::fill(a.grad.begin(), a.grad.end(), 0.0f);
}

void ParamStore::check_finite() const {
  for (const auto& a : arrays_) {
    for (float v : a.value) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in parameter '" + a.name + "'");
    }
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

void adam_step(ParamStore& params, const AdamConfig& config) {
  for (const auto& a : params.arrays()) {
    for (float g : a.grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + a.name + "'");
    }
  }
  const std::int64_t t = params.step() + 1;
  const double correction1 = 1.0 - std::pow(static_cast<double>(config.beta1), static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(static_cast<double>(config.beta2), static_cast<double>(t));
  const float step_size = static_cast<float>(config.learning_rate / correction1);
  const float sqrt_correction2 = static_cast<float>(std::sqrt(correction2));
  for (auto& a : params.arrays()) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const float g = a.grad[i];
      a.first_moment[i] = config.beta1 * a.first_moment[i] + (1.0f - config.beta1) * g;
      a.second_moment[i] = config.beta2 * a.second_moment[i] + (1.0f - config.beta2) * g * g;
      const float denom = std::sqrt(a.second_moment[i]) / sqrt_correction2 + config.epsilon;
      a.value[i] -= step_size * a.first_moment[i] / denom;
    }
  }
  params.set_step(t);
  params.check_finite();
}

void glorot_uniform(ParamArray& array, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(array.rows + array.cols));
  for (auto& v : array.value) v = static_cast<float>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// Kernels. Each output row accumulates its own terms in a fixed order.

namespace {

template <typename T>
void affine_rows(const Matrix<T>& x, const Matrix<T>& w, const T* bias, Matrix<T>& out) {
  out = Matrix<T>(x.rows, w.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    T* o = out.data.data() + r * out.cols;
    if (bias) std::copy(bias, bias + w.cols, o);
    const T* xr = x.data.data() + r * x.cols;
    for (std::size_t k = 0; k < x.cols; ++k) {
      const T xv = xr[k];
      if (xv == T(0)) continue;
      const T* wr = w.data.data() + k * w.cols;
      for (std::size_t j = 0; j < w.cols; ++j) o[j] += xv * wr[j];
    }
  }
}

// dx += dout * W^T ; dW += x^T * dout
template <typename T>
void affine_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dout, Matrix<T>* dx, Matrix<T>* dw,
                     Matrix<T>* db) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    const T* g = dout.data.data() + r * dout.cols;
    const T* xr = x.data.data() + r * x.cols;
    if (dx) {
      T* dxr = dx->data.data() + r * dx->cols;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const T* wr = w.data.data() + k * w.cols;
        T acc = T(0);
        for (std::size_t j = 0; j < w.cols; ++j) acc += g[j] * wr[j];
        dxr[k] += acc;
      }
    }
    if (dw) {
      for (std::size_t k = 0; k < x.cols; ++k) {
        const T xv = xr[k];
        if (xv == T(0)) continue;
        T* dwr = dw->data.data() + k * dw->cols;
        for (std::size_t j = 0; j < w.cols; ++j) dwr[j] += xv * g[j];
      }
    }
    if (db) {
      for (std::size_t j = 0; j < w.cols; ++j) db->data[j] += g[j];
    }
  }
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
double clamped_bce(T p, T y) {
  const double pc = std::clamp(static_cast<double>(p), kProbabilityClamp, 1.0 - kProbabilityClamp);
  const double yd = static_cast<double>(y);
  return -(yd * std::log(pc) + (1.0 - yd) * std::log(1.0 - pc));
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
typename Tape<T>::Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::check_same_shape(Var a, Var b, const char* op) const {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (x.rows != y.rows || x.cols != y.cols) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(x.rows) + "x" +
                      std::to_string(x.cols) + " vs " + std::to_string(y.rows) + "x" + std::to_string(y.cols));
  }
}

template <typename T>
typename Tape<T>::Var Tape<T>::input(Matrix<T> value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::param(const ParamStore& store, std::size_t index) {
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var{it->second};
  const ParamArray& array = store[index];
  Node n;
  n.op = Op::kParam;
  n.param_index = index;
  n.value = Matrix<T>(array.rows, array.cols);
  for (std::size_t i = 0; i < array.size(); ++i) n.value.data[i] = static_cast<T>(array.value[i]);
  for (const auto& p : perturbations_) {
    if (p.param == index) n.value.data.at(p.flat) += p.delta;
  }
  Var v = push(std::move(n));
  param_nodes_.emplace(index, v.id);
  return v;
}

template <typename T>
void Tape<T>::perturb(std::size_t param_index, std::size_t flat_index, T delta) {
  if (param_nodes_.count(param_index)) throw ConfigError("perturb() after the parameter was loaded");
  perturbations_.push_back({param_index, flat_index, delta});
}

template <typename T>
typename Tape<T>::Var Tape<T>::affine(Var x, Var w, Var b) {
  const auto& xv = node(x).value;
  const auto& wv = node(w).value;
  const auto& bv = node(b).value;
  if (xv.cols != wv.rows) {
    throw ConfigError("affine: input width " + std::to_string(xv.cols) + " does not match layer input " +
                      std::to_string(wv.rows));
  }
  if (bv.size() != wv.cols) throw ConfigError("affine: bias width mismatch");
  Node n;
  n.op = Op::kAffine;
  n.a = x.id;
  n.b = w.id;
  n.c = b.id;
  affine_rows(xv, wv, bv.data.data(), n.value);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var x, Var w) {
  const auto& xv = node(x).value;
  const auto& wv = node(w).value;
  if (xv.cols != wv.rows) throw ConfigError("matmul: inner dimension mismatch");
  Node n;
  n.op = Op::kMatmul;
  n.a = x.id;
  n.b = w.id;
  affine_rows<T>(xv, wv, nullptr, n.value);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a).value;
  add_into(n.value, node(b).value);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a).value;
  const auto& bv = node(b).value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= bv.data[i];
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a).value;
  const auto& bv = node(b).value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= bv.data[i];
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::one_minus(Var a) {
  Node n;
  n.op = Op::kOneMinus;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& v : n.value.data) v = T(1) - v;
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::tanh(Var a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::sigmoid(Var a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a.id;
  n.value = node(a).value;
  for (auto& v : n.value.data) v = stable_sigmoid(v);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  const std::size_t rows = node(parts[0]).value.rows;
  std::size_t cols = 0;
  for (Var p : parts) {
    if (node(p).value.rows != rows) throw ConfigError("concat: row count mismatch");
    cols += node(p).value.cols;
  }
  Node n;
  n.op = Op::kConcat;
  n.value = Matrix<T>(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& pv = node(p).value;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.data.begin() + r * pv.cols, pv.data.begin() + (r + 1) * pv.cols,
                n.value.data.begin() + r * cols + offset);
    }
    offset += pv.cols;
    n.parts.push_back(p.id);
  }
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::slice_cols(Var a, std::size_t first, std::size_t count) {
  const auto& av = node(a).value;
  if (first + count > av.cols) throw ConfigError("slice_cols: range out of bounds");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.offset = first;
  n.value = Matrix<T>(av.rows, count);
  for (std::size_t r = 0; r < av.rows; ++r) {
    for (std::size_t j = 0; j < count; ++j) n.value(r, j) = av(r, first + j);
  }
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::bce_with_logits(Var logits, const Matrix<T>& labels, const Matrix<T>& weights) {
  const auto& lv = node(logits).value;
  if (lv.rows != labels.rows || lv.cols != labels.cols || lv.rows != weights.rows || lv.cols != weights.cols) {
    throw ConfigError("bce: label/weight shape mismatch");
  }
  Node n;
  n.op = Op::kBceLogits;
  n.a = logits.id;
  n.aux = labels;
  n.aux2 = weights;
  double total = 0.0;
  for (std::size_t i = 0; i < lv.data.size(); ++i) {
    if (weights.data[i] == T(0)) continue;
    total += static_cast<double>(weights.data[i]) * clamped_bce(stable_sigmoid(lv.data[i]), labels.data[i]);
  }
  n.value = Matrix<T>(1, 1, static_cast<T>(total));
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax_nll(Var logits, std::vector<int> targets, const Matrix<T>& weights) {
  const auto& lv = node(logits).value;
  if (targets.size() != lv.rows || weights.rows != lv.rows || weights.cols != 1) {
    throw ConfigError("softmax_nll: target/weight shape mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= lv.cols) {
      throw ConfigError("softmax_nll: target index out of range");
    }
    if (weights.data[r] == T(0)) continue;
    const auto row = lv.row(r);
    const double mx = static_cast<double>(*std::max_element(row.begin(), row.end()));
    double denom = 0.0;
    for (T v : row) denom += std::exp(static_cast<double>(v) - mx);
    const double logp = static_cast<double>(row[targets[r]]) - mx - std::log(denom);
    total += static_cast<double>(weights.data[r]) * -logp;
  }
  Node n;
  n.op = Op::kSoftmaxNll;
  n.a = logits.id;
  n.targets = std::move(targets);
  n.aux2 = weights;
  n.value = Matrix<T>(1, 1, static_cast<T>(total));
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::squared_error(Var pred, const Matrix<T>& targets, const Matrix<T>& weights) {
  const auto& pv = node(pred).value;
  if (pv.rows != targets.rows || pv.cols != targets.cols || pv.rows != weights.rows || pv.cols != weights.cols) {
    throw ConfigError("squared_error: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pv.data.size(); ++i) {
    const double d = static_cast<double>(pv.data[i]) - static_cast<double>(targets.data[i]);
    total += static_cast<double>(weights.data[i]) * d * d;
  }
  Node n;
  n.op = Op::kSquaredError;
  n.a = pred.id;
  n.aux = targets;
  n.aux2 = weights;
  n.value = Matrix<T>(1, 1, static_cast<T>(total));
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::weighted_sum(std::span<const Var> scalars, std::span<const T> weights) {
  if (scalars.size() != weights.size()) throw ConfigError("weighted_sum: size mismatch");
  double total = 0.0;
  Node n;
  n.op = Op::kWeightedSum;
  n.aux = Matrix<T>(1, weights.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const auto& v = node(scalars[i]).value;
    if (v.size() != 1) throw ConfigError("weighted_sum: inputs must be scalar");
    total += static_cast<double>(weights[i]) * static_cast<double>(v.data[0]);
    n.parts.push_back(scalars[i].id);
    n.aux.data[i] = weights[i];
  }
  n.value = Matrix<T>(1, 1, static_cast<T>(total));
  return push(std::move(n));
}

template <typename T>
T Tape<T>::scalar(Var v) const {
  const auto& m = node(v).value;
  if (m.size() != 1) throw ConfigError("scalar(): node is not 1x1");
  return m.data[0];
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (!record_) throw ConfigError("backward() on a tape recorded without gradients");
  if (node(loss).value.size() != 1) throw ConfigError("backward(): loss is not a scalar");
  for (auto& n : nodes_) n.grad = Matrix<T>(n.value.rows, n.value.cols);
  node(loss).grad.data[0] = T(1);

  // Nodes are appended in topological order, so a reverse sweep visits each
  // node once after all of its consumers.
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    const Matrix<T>& g = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kAffine:
      case Op::kMatmul: {
        Node& x = nodes_[n.a];
        Node& w = nodes_[n.b];
        Matrix<T>* db = n.op == Op::kAffine ? &nodes_[n.c].grad : nullptr;
        affine_backward(x.value, w.value, g, &x.grad, &w.grad, db);
        break;
      }
      case Op::kAdd:
        add_into(nodes_[n.a].grad, g);
        add_into(nodes_[n.b].grad, g);
        break;
      case Op::kSub: {
        add_into(nodes_[n.a].grad, g);
        auto& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        break;
      }
      case Op::kMul: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          a.grad.data[i] += g.data[i] * b.value.data[i];
          b.grad.data[i] += g.data[i] * a.value.data[i];
        }
        break;
      }
      case Op::kOneMinus: {
        auto& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] -= g.data[i];
        break;
      }
      case Op::kTanh: {
        auto& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const T y = n.value.data[i];
          ga.data[i] += g.data[i] * (T(1) - y * y);
        }
        break;
      }
      case Op::kSigmoid: {
        auto& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const T y = n.value.data[i];
          ga.data[i] += g.data[i] * y * (T(1) - y);
        }
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        for (int pid : n.parts) {
          auto& pg = nodes_[pid].grad;
          for (std::size_t r = 0; r < pg.rows; ++r) {
            for (std::size_t j = 0; j < pg.cols; ++j) pg(r, j) += g(r, offset + j);
          }
          offset += pg.cols;
        }
        break;
      }
      case Op::kSliceCols: {
        auto& ga = nodes_[n.a].grad;
        for (std::size_t r = 0; r < g.rows; ++r) {
          for (std::size_t j = 0; j < g.cols; ++j) ga(r, n.offset + j) += g(r, j);
        }
        break;
      }
      case Op::kBceLogits: {
        Node& l = nodes_[n.a];
        const T up = g.data[0];
        for (std::size_t i = 0; i < l.value.data.size(); ++i) {
          const T w = n.aux2.data[i];
          if (w == T(0)) continue;
          l.grad.data[i] += up * w * (stable_sigmoid(l.value.data[i]) - n.aux.data[i]);
        }
        break;
      }
      case Op::kSoftmaxNll: {
        Node& l = nodes_[n.a];
        const T up = g.data[0];
        for (std::size_t r = 0; r < l.value.rows; ++r) {
          const T w = n.aux2.data[r];
          if (w == T(0)) continue;
          const auto row = l.value.row(r);
          const T mx = *std::max_element(row.begin(), row.end());
          T denom = T(0);
          for (T v : row) denom += std::exp(v - mx);
          for (std::size_t j = 0; j < row.size(); ++j) {
            const T p = std::exp(row[j] - mx) / denom;
            const T target = static_cast<int>(j) == n.targets[r] ? T(1) : T(0);
            l.grad(r, j) += up * w * (p - target);
          }
        }
        break;
      }
      case Op::kSquaredError: {
        Node& p = nodes_[n.a];
        const T up = g.data[0];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
          p.grad.data[i] += up * n.aux2.data[i] * T(2) * (p.value.data[i] - n.aux.data[i]);
        }
        break;
      }
      case Op::kWeightedSum: {
        const T up = g.data[0];
        for (std::size_t i = 0; i < n.parts.size(); ++i) nodes_[n.parts[i]].grad.data[0] += up * n.aux.data[i];
        break;
      }
    }
  }
}

template <typename T>
Matrix<T> Tape<T>::param_grad(const ParamStore& store, std::size_t index) const {
  auto it = param_nodes_.find(index);
  if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) {
    return Matrix<T>(store[index].rows, store[index].cols);
  }
  return nodes_[it->second].grad;
}

template <typename T>
void Tape<T>::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [index, id] : param_nodes_) {
    const auto& g = nodes_[id].grad;
    if (g.empty()) continue;
    auto& dst = store[index].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<float>(g.data[i]);
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Layers

DenseLayer add_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                     Activation activation, Rng& rng) {
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.activation = activation;
  layer.weight = store.add(prefix + ".w", in, out);
  layer.bias = store.add(prefix + ".b", 1, out);
  glorot_uniform(store[layer.weight], rng);
  return layer;
}

template <typename T>
typename Tape<T>::Var dense(Tape<T>& tape, const ParamStore& store, const DenseLayer& layer,
                            typename Tape<T>::Var x) {
  auto y = tape.affine(x, tape.param(store, layer.weight), tape.param(store, layer.bias));
  switch (layer.activation) {
    case Activation::kTanh:
      return tape.tanh(y);
    case Activation::kSigmoid:
      return tape.sigmoid(y);
    case Activation::kLinear:
      break;
  }
  return y;
}

Mlp add_mlp(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
            std::size_t hidden_layers, std::size_t out, Activation output_activation, Rng& rng) {
  Mlp net;
  net.in = in;
  net.out = out;
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    net.layers.push_back(add_dense(store, prefix + ".l" + std::to_string(i), width, hidden, Activation::kTanh, rng));
    width = hidden;
  }
  net.layers.push_back(add_dense(store, prefix + ".out", width, out, output_activation, rng));
  return net;
}

template <typename T>
typename Tape<T>::Var mlp(Tape<T>& tape, const ParamStore& store, const Mlp& net, typename Tape<T>::Var x) {
  for (const auto& layer : net.layers) x = dense(tape, store, layer, x);
  return x;
}

GruCell add_gru(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  GruCell cell;
  cell.in = in;
  cell.hidden = hidden;
  auto weights = [&](const std::string& name, std::size_t rows) {
    const std::size_t idx = store.add(prefix + "." + name, rows, hidden);
    glorot_uniform(store[idx], rng);
    return idx;
  };
  cell.wxu = weights("wxu", in);
  cell.whu = weights("whu", hidden);
  cell.bu = store.add(prefix + ".bu", 1, hidden);
  std::fill(store[cell.bu].value.begin(), store[cell.bu].value.end(), -1.0f);
  cell.wxr = weights("wxr", in);
  cell.whr = weights("whr", hidden);
  cell.br = store.add(prefix + ".br", 1, hidden);
  cell.wxc = weights("wxc", in);
  cell.whc = weights("whc", hidden);
  cell.bc = store.add(prefix + ".bc", 1, hidden);
  return cell;
}

template <typename T>
typename Tape<T>::Var gru(Tape<T>& tape, const ParamStore& store, const GruCell& cell, typename Tape<T>::Var h,
                          typename Tape<T>::Var x) {
  if (tape.value(x).cols != cell.in || tape.value(h).cols != cell.hidden) {
    throw ConfigError("recurrent cell: input/hidden width mismatch");
  }
  auto p = [&](std::size_t i) { return tape.param(store, i); };
  auto u = tape.sigmoid(tape.add(tape.affine(x, p(cell.wxu), p(cell.bu)), tape.matmul(h, p(cell.whu))));
  auto r = tape.sigmoid(tape.add(tape.affine(x, p(cell.wxr), p(cell.br)), tape.matmul(h, p(cell.whr))));
  auto c = tape.tanh(tape.add(tape.affine(x, p(cell.wxc), p(cell.bc)), tape.matmul(tape.mul(r, h), p(cell.whc))));
  return tape.add(tape.mul(tape.one_minus(u), h), tape.mul(u, c));
}

template Tape<float>::Var dense<float>(Tape<float>&, const ParamStore&, const DenseLayer&, Tape<float>::Var);
template Tape<double>::Var dense<double>(Tape<double>&, const ParamStore&, const DenseLayer&, Tape<double>::Var);
template Tape<float>::Var mlp<float>(Tape<float>&, const ParamStore&, const Mlp&, Tape<float>::Var);
template Tape<double>::Var mlp<double>(Tape<double>&, const ParamStore&, const Mlp&, Tape<double>::Var);
template Tape<float>::Var gru<float>(Tape<float>&, const ParamStore&, const GruCell&, Tape<float>::Var,
                                     Tape<float>::Var);
template Tape<double>::Var gru<double>(Tape<double>&, const ParamStore&, const GruCell&, Tape<double>::Var,
                                       Tape<double>::Var);

Matrix<float> dense_forward(const ParamStore& store, const DenseLayer& layer, const Matrix<float>& input) {
  Tape<float> tape(false);
  auto y = dense(tape, store, layer, tape.input(input));
  return tape.value(y);
}

Matrix<float> recurrent_cell_forward(const ParamStore& store, const GruCell& cell, const Matrix<float>& hidden,
                                     const Matrix<float>& input) {
  Tape<float> tape(false);
  auto y = gru(tape, store, cell, tape.input(hidden), tape.input(input));
  return tape.value(y);
}

// ---------------------------------------------------------------------------

double bce_loss(double predicted, int label) {
  const double p = std::clamp(predicted, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label ? -std::log(p) : -std::log(1.0 - p);
}

double categorical_nll(std::span<const float> logits, std::size_t target) {
  if (target >= logits.size()) throw ConfigError("categorical_nll: target index out of range");
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - mx);
  return -(static_cast<double>(logits[target]) - mx - std::log(denom));
}

}  // namespace affplan::nn
