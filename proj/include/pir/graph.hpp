#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pir/tensor.hpp"

namespace pir {

/// Named trainable leaves shared by the compute graphs of one model.
/// Values and gradient accumulators live here; graphs reference entries by
/// index. Gradients accumulate across backward calls until zero_grads().
class ParamStore {
 public:
  void create(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("param '" + name + "' already exists");
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    grads_.emplace_back(init.shape, 0.0);
    values_.push_back(std::move(init));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& value(const std::string& name) { return values_[index(name)]; }
  const Tensor& value(const std::string& name) const { return values_[index(name)]; }
  Tensor& grad(const std::string& name) { return grads_[index(name)]; }
  const Tensor& grad(const std::string& name) const { return grads_[index(name)]; }

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name_at(int i) const { return names_[i]; }
  Tensor& value_at(int i) { return values_[i]; }
  const Tensor& value_at(int i) const { return values_[i]; }
  Tensor& grad_at(int i) { return grads_[i]; }
  const Tensor& grad_at(int i) const { return grads_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  void zero_grads() {
    for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
  }
  void scale_grads(double s) {
    for (auto& g : grads_) {
      for (double& v : g.data) v *= s;
    }
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
};

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
inline constexpr double kLayerNormEps = 1e-5;

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}
}  // namespace detail

/// Static compute graph over 2-D tensors with reverse-mode gradients.
///
/// Nodes are appended in construction order, which is a topological order;
/// the backward pass walks them in exact reverse. Shapes are fixed and
/// validated when a node is created, so evaluation never allocates. Input
/// leaves are re-bindable between evaluations; parameter leaves read from
/// (and accumulate gradients into) a shared ParamStore.
class Graph {
 public:
  explicit Graph(ParamStore* store = nullptr) : store_(store) {}

  // ---- leaves ----

  int input(const std::string& name, int rows, int cols) {
    if (inputs_.count(name)) throw std::invalid_argument("input '" + name + "' already exists");
    const int id = new_node(Op::kInput, name, {}, rows, cols);
    inputs_[name] = id;
    return id;
  }

  int param(const std::string& name) {
    if (store_ == nullptr) throw std::invalid_argument("graph has no parameter store");
    const int idx = store_->index(name);
    const Tensor& v = store_->value_at(idx);
    const int id = new_node(Op::kParam, name, {}, v.rows(), v.cols());
    nodes_[id].i0 = idx;
    nodes_[id].needs_grad = true;
    return id;
  }

  int constant(Tensor v, const std::string& label = "") {
    const int r = v.rows(), c = v.cols();
    const int id = new_node(Op::kConstant, label.empty() ? auto_name("const") : label, {}, r, c);
    nodes_[id].value = std::move(v);
    return id;
  }

  // ---- primitives ----

  int matmul(int a, int b) {
    const std::string n = auto_name("matmul");
    check_id(a, n);
    check_id(b, n);
    if (nodes_[a].cols != nodes_[b].rows) shape_error(n, {a, b});
    return new_node(Op::kMatmul, n, {a, b}, nodes_[a].rows, nodes_[b].cols);
  }

  /// a * transpose(b); a is (m,k), b is (n,k).
  int matmul_nt(int a, int b) {
    const std::string n = auto_name("matmul_nt");
    check_id(a, n);
    check_id(b, n);
    if (nodes_[a].cols != nodes_[b].cols) shape_error(n, {a, b});
    return new_node(Op::kMatmulNT, n, {a, b}, nodes_[a].rows, nodes_[b].rows);
  }

  /// x * transpose(w) + b broadcast over rows; x is (n,i), w is (o,i), b is (o,1).
  int linear(int x, int w, int b) {
    const std::string n = auto_name("linear");
    check_id(x, n);
    check_id(w, n);
    check_id(b, n);
    const int out = nodes_[w].rows;
    if (nodes_[x].cols != nodes_[w].cols || nodes_[b].rows * nodes_[b].cols != out) {
      shape_error(n, {x, w, b});
    }
    return new_node(Op::kLinear, n, {x, w, b}, nodes_[x].rows, out);
  }

  int add(int a, int b) { return binary_same(Op::kAdd, "add", a, b); }
  int sub(int a, int b) { return binary_same(Op::kSub, "sub", a, b); }
  int mul(int a, int b) { return binary_same(Op::kMul, "mul", a, b); }

  /// Row-wise broadcast multiply; x is (m,n), s is (m,1).
  int row_scale(int x, int s) {
    const std::string n = auto_name("row_scale");
    check_id(x, n);
    check_id(s, n);
    if (nodes_[s].rows != nodes_[x].rows || nodes_[s].cols != 1) shape_error(n, {x, s});
    return new_node(Op::kRowScale, n, {x, s}, nodes_[x].rows, nodes_[x].cols);
  }

  int scale(int a, double c) {
    const std::string n = auto_name("scale");
    check_id(a, n);
    const int id = new_node(Op::kScale, n, {a}, nodes_[a].rows, nodes_[a].cols);
    nodes_[id].scalar = c;
    return id;
  }

  int sigmoid(int a) { return unary(Op::kSigmoid, "sigmoid", a); }
  int gelu(int a) { return unary(Op::kGelu, "gelu", a); }

  /// Softmax over the last axis (each row normalizes to 1).
  int softmax_rows(int a) { return unary(Op::kSoftmaxRows, "softmax", a); }

  /// Per-row normalization to zero mean / unit variance (eps 1e-5), then an
  /// affine map with per-column gain and bias, both shaped (1,n).
  int layer_norm(int x, int gain, int bias) {
    const std::string n = auto_name("layer_norm");
    check_id(x, n);
    check_id(gain, n);
    check_id(bias, n);
    const int c = nodes_[x].cols;
    if (nodes_[gain].rows * nodes_[gain].cols != c || nodes_[bias].rows * nodes_[bias].cols != c) {
      shape_error(n, {x, gain, bias});
    }
    return new_node(Op::kLayerNorm, n, {x, gain, bias}, nodes_[x].rows, c);
  }

  int concat_rows(const std::vector<int>& parts) {
    const std::string n = auto_name("concat_rows");
    if (parts.empty()) throw std::invalid_argument(n + ": no inputs");
    int rows = 0;
    for (int p : parts) {
      check_id(p, n);
      if (nodes_[p].cols != nodes_[parts[0]].cols) shape_error(n, parts);
      rows += nodes_[p].rows;
    }
    return new_node(Op::kConcatRows, n, parts, rows, nodes_[parts[0]].cols);
  }

  int concat_cols(const std::vector<int>& parts) {
    const std::string n = auto_name("concat_cols");
    if (parts.empty()) throw std::invalid_argument(n + ": no inputs");
    int cols = 0;
    for (int p : parts) {
      check_id(p, n);
      if (nodes_[p].rows != nodes_[parts[0]].rows) shape_error(n, parts);
      cols += nodes_[p].cols;
    }
    return new_node(Op::kConcatCols, n, parts, nodes_[parts[0]].rows, cols);
  }

  int slice_rows(int a, int r0, int count) {
    const std::string n = auto_name("slice_rows");
    check_id(a, n);
    if (r0 < 0 || count < 1 || r0 + count > nodes_[a].rows) {
      throw std::invalid_argument(n + ": row range [" + std::to_string(r0) + "," +
                                  std::to_string(r0 + count) + ") out of bounds for " +
                                  describe(a));
    }
    const int id = new_node(Op::kSliceRows, n, {a}, count, nodes_[a].cols);
    nodes_[id].i0 = r0;
    return id;
  }

  int slice_cols(int a, int c0, int count) {
    const std::string n = auto_name("slice_cols");
    check_id(a, n);
    if (c0 < 0 || count < 1 || c0 + count > nodes_[a].cols) {
      throw std::invalid_argument(n + ": column range [" + std::to_string(c0) + "," +
                                  std::to_string(c0 + count) + ") out of bounds for " +
                                  describe(a));
    }
    const int id = new_node(Op::kSliceCols, n, {a}, nodes_[a].rows, count);
    nodes_[id].i0 = c0;
    return id;
  }

  int reshape(int a, int rows, int cols) {
    const std::string n = auto_name("reshape");
    check_id(a, n);
    if (static_cast<std::int64_t>(rows) * cols !=
        static_cast<std::int64_t>(nodes_[a].rows) * nodes_[a].cols) {
      shape_error(n, {a});
    }
    return new_node(Op::kReshape, n, {a}, rows, cols);
  }

  /// Mean over all cells, yielding a (1,1) scalar.
  int mean_all(int a) {
    const std::string n = auto_name("mean");
    check_id(a, n);
    return new_node(Op::kMeanAll, n, {a}, 1, 1);
  }

  /// Mean squared difference over all cells, yielding a (1,1) scalar.
  int mse(int a, int b) { return reduce_pair(Op::kMse, "mse", a, b); }

  /// Mean absolute difference over all cells, yielding a (1,1) scalar.
  int mae(int a, int b) { return reduce_pair(Op::kMae, "mae", a, b); }

  void mark_output(const std::string& name, int id) {
    check_id(id, "output '" + name + "'");
    outputs_[name] = id;
  }

  // ---- execution ----

  /// Bind an input leaf's value. The tensor is copied into the node buffer.
  void bind(int input_id, const Tensor& v) {
    GraphNode& n = nodes_[input_id];
    if (n.op != Op::kInput) throw std::invalid_argument(n.name + ": not an input node");
    if (v.rows() != n.rows || v.cols() != n.cols) {
      throw std::invalid_argument("input '" + n.name + "': bound shape " + shape_str(v.shape) +
                                  " does not match declared " + std::to_string(n.rows) + "x" +
                                  std::to_string(n.cols));
    }
    n.value.data = v.data;
    n.bound = true;
  }

  void bind(const std::string& input_name, const Tensor& v) { bind(input_id(input_name), v); }

  /// Forward pass over every node in construction order.
  void run() {
    for (auto& n : nodes_) {
      forward_node(n);
    }
    evaluated_ = true;
  }

  /// Reverse pass from `node_id`, seeded with `seed` (shape must match the
  /// node). Parameter gradients accumulate into the store; call
  /// store->zero_grads() between batches.
  void run_backward(int node_id, const Tensor& seed) {
    if (!evaluated_) throw std::runtime_error("backward called before evaluate");
    check_id(node_id, "backward");
    GraphNode& out = nodes_[node_id];
    if (seed.rows() != out.rows || seed.cols() != out.cols) {
      throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape) +
                                  " does not match node " + out.name);
    }
    if (!out.needs_grad) return;  // no parameters upstream; all grads stay zero
    for (auto& n : nodes_) {
      if (n.op != Op::kParam) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }
    for (std::size_t i = 0; i < seed.data.size(); ++i) grad_of(node_id).data[i] += seed.data[i];
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].needs_grad) backward_node(nodes_[i]);
    }
  }

  void run_backward(int node_id, double seed = 1.0) {
    run_backward(node_id, Tensor({nodes_[node_id].rows, nodes_[node_id].cols}, seed));
  }

  /// Evaluate with named inputs; returns every marked output by name.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs) {
    for (const auto& [name, v] : inputs) bind(name, v);
    run();
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : outputs_) out[name] = value_of(id);
    return out;
  }

  /// Gradients of the named output w.r.t. every parameter, one tensor per
  /// parameter; parameters off the path get zeros.
  std::map<std::string, Tensor> backward(const std::string& output_name, const Tensor& seed) {
    if (store_ == nullptr) throw std::runtime_error("backward: graph has no parameter store");
    store_->zero_grads();
    run_backward(output(output_name), seed);
    std::map<std::string, Tensor> out;
    for (int i = 0; i < store_->count(); ++i) out[store_->name_at(i)] = store_->grad_at(i);
    return out;
  }

  std::map<std::string, Tensor> backward() {
    if (outputs_.size() != 1) {
      throw std::runtime_error("backward without output name requires exactly one marked output");
    }
    const auto& [name, id] = *outputs_.begin();
    return backward(name, Tensor({nodes_[id].rows, nodes_[id].cols}, 1.0));
  }

  const Tensor& value_of(int id) const {
    if (!evaluated_) throw std::runtime_error("value_of called before evaluate");
    return val(id);
  }

  double scalar_of(int id) const { return value_of(id).data[0]; }

  int output(const std::string& name) const {
    auto it = outputs_.find(name);
    if (it == outputs_.end()) throw std::invalid_argument("unknown output '" + name + "'");
    return it->second;
  }

  int input_id(const std::string& name) const {
    auto it = inputs_.find(name);
    if (it == inputs_.end()) throw std::invalid_argument("unknown input '" + name + "'");
    return it->second;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::string& node_name(int id) const { return nodes_[id].name; }
  ParamStore* store() const { return store_; }

 private:
  enum class Op {
    kInput,
    kParam,
    kConstant,
    kMatmul,
    kMatmulNT,
    kLinear,
    kAdd,
    kSub,
    kMul,
    kRowScale,
    kScale,
    kSigmoid,
    kGelu,
    kSoftmaxRows,
    kLayerNorm,
    kConcatRows,
    kConcatCols,
    kSliceRows,
    kSliceCols,
    kReshape,
    kMeanAll,
    kMse,
    kMae,
  };

  struct GraphNode {
    Op op;
    std::string name;
    std::vector<int> in;
    int rows = 0, cols = 0;
    int i0 = 0;          // slice offset or param index
    double scalar = 0.0; // kScale factor
    bool needs_grad = false;
    bool bound = false;
    Tensor value;
    Tensor grad;
  };

  int new_node(Op op, const std::string& name, std::vector<int> in, int rows, int cols) {
    GraphNode n;
    n.op = op;
    n.name = name;
    n.in = std::move(in);
    n.rows = rows;
    n.cols = cols;
    for (int p : n.in) {
      if (nodes_[p].needs_grad) n.needs_grad = true;
    }
    if (op != Op::kParam) {
      n.value = Tensor({rows, cols});
      if (n.needs_grad) n.grad = Tensor({rows, cols});
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int unary(Op op, const char* tag, int a) {
    const std::string n = auto_name(tag);
    check_id(a, n);
    return new_node(op, n, {a}, nodes_[a].rows, nodes_[a].cols);
  }

  int binary_same(Op op, const char* tag, int a, int b) {
    const std::string n = auto_name(tag);
    check_id(a, n);
    check_id(b, n);
    if (nodes_[a].rows != nodes_[b].rows || nodes_[a].cols != nodes_[b].cols) {
      shape_error(n, {a, b});
    }
    return new_node(op, n, {a, b}, nodes_[a].rows, nodes_[a].cols);
  }

  int reduce_pair(Op op, const char* tag, int a, int b) {
    const std::string n = auto_name(tag);
    check_id(a, n);
    check_id(b, n);
    if (nodes_[a].rows != nodes_[b].rows || nodes_[a].cols != nodes_[b].cols) {
      shape_error(n, {a, b});
    }
    return new_node(op, n, {a, b}, 1, 1);
  }

  std::string auto_name(const char* tag) {
    return std::string(tag) + "#" + std::to_string(nodes_.size());
  }

  void check_id(int id, const std::string& who) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument(who + ": invalid node id " + std::to_string(id));
    }
  }

  std::string describe(int id) const {
    return nodes_[id].name + "(" + std::to_string(nodes_[id].rows) + "x" +
           std::to_string(nodes_[id].cols) + ")";
  }

  [[noreturn]] void shape_error(const std::string& node, const std::vector<int>& ins) const {
    std::string msg = node + ": incompatible shapes";
    for (int i : ins) msg += " " + describe(i);
    throw std::invalid_argument(msg);
  }

  const Tensor& val(int id) const {
    const GraphNode& n = nodes_[id];
    return n.op == Op::kParam ? store_->value_at(n.i0) : n.value;
  }

  Tensor& grad_of(int id) {
    GraphNode& n = nodes_[id];
    return n.op == Op::kParam ? store_->grad_at(n.i0) : n.grad;
  }

  void forward_node(GraphNode& n) {
    switch (n.op) {
      case Op::kInput:
        if (!n.bound) throw std::runtime_error("input '" + n.name + "' not bound");
        return;
      case Op::kParam:
      case Op::kConstant:
        return;
      case Op::kMatmul: {
        const Tensor& a = val(n.in[0]);
        const Tensor& b = val(n.in[1]);
        const int m = n.rows, k = a.cols(), c = n.cols;
        std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            const double av = a.data[i * k + kk];
            const double* brow = &b.data[kk * c];
            double* out = &n.value.data[i * c];
            for (int j = 0; j < c; ++j) out[j] += av * brow[j];
          }
        }
        return;
      }
      case Op::kMatmulNT: {
        const Tensor& a = val(n.in[0]);
        const Tensor& b = val(n.in[1]);
        const int m = n.rows, k = a.cols(), c = n.cols;
        for (int i = 0; i < m; ++i) {
          const double* arow = &a.data[i * k];
          for (int j = 0; j < c; ++j) {
            const double* brow = &b.data[j * k];
            double s = 0.0;
            for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            n.value.data[i * c + j] = s;
          }
        }
        return;
      }
      case Op::kLinear: {
        const Tensor& x = val(n.in[0]);
        const Tensor& w = val(n.in[1]);
        const Tensor& b = val(n.in[2]);
        const int m = n.rows, k = x.cols(), o = n.cols;
        for (int i = 0; i < m; ++i) {
          const double* xrow = &x.data[i * k];
          for (int j = 0; j < o; ++j) {
            const double* wrow = &w.data[j * k];
            double s = b.data[j];
            for (int kk = 0; kk < k; ++kk) s += xrow[kk] * wrow[kk];
            n.value.data[i * o + j] = s;
          }
        }
        return;
      }
      case Op::kAdd: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a[i] + b[i];
        return;
      }
      case Op::kSub: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a[i] - b[i];
        return;
      }
      case Op::kMul: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a[i] * b[i];
        return;
      }
      case Op::kRowScale: {
        const Tensor& x = val(n.in[0]);
        const Tensor& s = val(n.in[1]);
        for (int i = 0; i < n.rows; ++i) {
          const double f = s.data[i];
          for (int j = 0; j < n.cols; ++j) n.value.data[i * n.cols + j] = f * x.data[i * n.cols + j];
        }
        return;
      }
      case Op::kScale: {
        const auto& a = val(n.in[0]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = n.scalar * a[i];
        return;
      }
      case Op::kSigmoid: {
        const auto& a = val(n.in[0]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = detail::sigmoid(a[i]);
        return;
      }
      case Op::kGelu: {
        const auto& a = val(n.in[0]).data;
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = detail::gelu(a[i]);
        return;
      }
      case Op::kSoftmaxRows: {
        const Tensor& a = val(n.in[0]);
        for (int i = 0; i < n.rows; ++i) {
          const double* row = &a.data[i * n.cols];
          double* out = &n.value.data[i * n.cols];
          double mx = row[0];
          for (int j = 1; j < n.cols; ++j) mx = std::max(mx, row[j]);
          double sum = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
          }
          for (int j = 0; j < n.cols; ++j) out[j] /= sum;
        }
        return;
      }
      case Op::kLayerNorm: {
        const Tensor& x = val(n.in[0]);
        const Tensor& g = val(n.in[1]);
        const Tensor& b = val(n.in[2]);
        const int c = n.cols;
        for (int i = 0; i < n.rows; ++i) {
          const double* row = &x.data[i * c];
          double* out = &n.value.data[i * c];
          double mean = 0.0;
          for (int j = 0; j < c; ++j) mean += row[j];
          mean /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
          var /= c;
          const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
          for (int j = 0; j < c; ++j) out[j] = (row[j] - mean) * inv * g.data[j] + b.data[j];
        }
        return;
      }
      case Op::kConcatRows: {
        double* out = n.value.data.data();
        for (int p : n.in) {
          const auto& src = val(p).data;
          std::copy(src.begin(), src.end(), out);
          out += src.size();
        }
        return;
      }
      case Op::kConcatCols: {
        int c0 = 0;
        for (int p : n.in) {
          const Tensor& src = val(p);
          const int pc = nodes_[p].cols;
          for (int i = 0; i < n.rows; ++i) {
            std::copy(&src.data[i * pc], &src.data[i * pc] + pc, &n.value.data[i * n.cols + c0]);
          }
          c0 += pc;
        }
        return;
      }
      case Op::kSliceRows: {
        const Tensor& a = val(n.in[0]);
        std::copy(&a.data[n.i0 * n.cols], &a.data[(n.i0 + n.rows) * n.cols], n.value.data.begin());
        return;
      }
      case Op::kSliceCols: {
        const Tensor& a = val(n.in[0]);
        const int ac = nodes_[n.in[0]].cols;
        for (int i = 0; i < n.rows; ++i) {
          std::copy(&a.data[i * ac + n.i0], &a.data[i * ac + n.i0] + n.cols,
                    &n.value.data[i * n.cols]);
        }
        return;
      }
      case Op::kReshape: {
        n.value.data = val(n.in[0]).data;
        return;
      }
      case Op::kMeanAll: {
        const auto& a = val(n.in[0]).data;
        double s = 0.0;
        for (double v : a) s += v;
        n.value.data[0] = s / static_cast<double>(a.size());
        return;
      }
      case Op::kMse: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double d = a[i] - b[i];
          s += d * d;
        }
        n.value.data[0] = s / static_cast<double>(a.size());
        return;
      }
      case Op::kMae: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        n.value.data[0] = s / static_cast<double>(a.size());
        return;
      }
    }
  }

  // Accumulates d(output)/d(input) into each input's grad buffer. Inputs
  // that do not need gradients are skipped.
  void backward_node(GraphNode& n) {
    const Tensor& dy = n.op == Op::kParam ? store_->grad_at(n.i0) : n.grad;
    auto wants = [&](int idx) { return nodes_[n.in[idx]].needs_grad; };
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
      case Op::kConstant:
        return;
      case Op::kMatmul: {
        const Tensor& a = val(n.in[0]);
        const Tensor& b = val(n.in[1]);
        const int m = n.rows, k = a.cols(), c = n.cols;
        if (wants(0)) {
          Tensor& da = grad_of(n.in[0]);
          for (int i = 0; i < m; ++i) {
            for (int kk = 0; kk < k; ++kk) {
              const double* brow = &b.data[kk * c];
              const double* dyrow = &dy.data[i * c];
              double s = 0.0;
              for (int j = 0; j < c; ++j) s += dyrow[j] * brow[j];
              da.data[i * k + kk] += s;
            }
          }
        }
        if (wants(1)) {
          Tensor& db = grad_of(n.in[1]);
          for (int i = 0; i < m; ++i) {
            for (int kk = 0; kk < k; ++kk) {
              const double av = a.data[i * k + kk];
              const double* dyrow = &dy.data[i * c];
              double* dbrow = &db.data[kk * c];
              for (int j = 0; j < c; ++j) dbrow[j] += av * dyrow[j];
            }
          }
        }
        return;
      }
      case Op::kMatmulNT: {
        const Tensor& a = val(n.in[0]);
        const Tensor& b = val(n.in[1]);
        const int m = n.rows, k = a.cols(), c = n.cols;
        if (wants(0)) {
          Tensor& da = grad_of(n.in[0]);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < c; ++j) {
              const double d = dy.data[i * c + j];
              const double* brow = &b.data[j * k];
              double* darow = &da.data[i * k];
              for (int kk = 0; kk < k; ++kk) darow[kk] += d * brow[kk];
            }
          }
        }
        if (wants(1)) {
          Tensor& db = grad_of(n.in[1]);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < c; ++j) {
              const double d = dy.data[i * c + j];
              const double* arow = &a.data[i * k];
              double* dbrow = &db.data[j * k];
              for (int kk = 0; kk < k; ++kk) dbrow[kk] += d * arow[kk];
            }
          }
        }
        return;
      }
      case Op::kLinear: {
        const Tensor& x = val(n.in[0]);
        const Tensor& w = val(n.in[1]);
        const int m = n.rows, k = x.cols(), o = n.cols;
        if (wants(0)) {
          Tensor& dx = grad_of(n.in[0]);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < o; ++j) {
              const double d = dy.data[i * o + j];
              const double* wrow = &w.data[j * k];
              double* dxrow = &dx.data[i * k];
              for (int kk = 0; kk < k; ++kk) dxrow[kk] += d * wrow[kk];
            }
          }
        }
        if (wants(1)) {
          Tensor& dw = grad_of(n.in[1]);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < o; ++j) {
              const double d = dy.data[i * o + j];
              const double* xrow = &x.data[i * k];
              double* dwrow = &dw.data[j * k];
              for (int kk = 0; kk < k; ++kk) dwrow[kk] += d * xrow[kk];
            }
          }
        }
        if (wants(2)) {
          Tensor& db = grad_of(n.in[2]);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < o; ++j) db.data[j] += dy.data[i * o + j];
          }
        }
        return;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          if (!wants(s)) continue;
          Tensor& d = grad_of(n.in[s]);
          for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += dy.data[i];
        }
        return;
      }
      case Op::kSub: {
        if (wants(0)) {
          Tensor& d = grad_of(n.in[0]);
          for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += dy.data[i];
        }
        if (wants(1)) {
          Tensor& d = grad_of(n.in[1]);
          for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] -= dy.data[i];
        }
        return;
      }
      case Op::kMul: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        if (wants(0)) {
          Tensor& d = grad_of(n.in[0]);
          for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += dy.data[i] * b[i];
        }
        if (wants(1)) {
          Tensor& d = grad_of(n.in[1]);
          for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += dy.data[i] * a[i];
        }
        return;
      }
      case Op::kRowScale: {
        const Tensor& x = val(n.in[0]);
        const Tensor& s = val(n.in[1]);
        if (wants(0)) {
          Tensor& dx = grad_of(n.in[0]);
          for (int i = 0; i < n.rows; ++i) {
            const double f = s.data[i];
            for (int j = 0; j < n.cols; ++j) dx.data[i * n.cols + j] += f * dy.data[i * n.cols + j];
          }
        }
        if (wants(1)) {
          Tensor& ds = grad_of(n.in[1]);
          for (int i = 0; i < n.rows; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n.cols; ++j) acc += dy.data[i * n.cols + j] * x.data[i * n.cols + j];
            ds.data[i] += acc;
          }
        }
        return;
      }
      case Op::kScale: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += n.scalar * dy.data[i];
        return;
      }
      case Op::kSigmoid: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
          const double y = n.value.data[i];
          d.data[i] += dy.data[i] * y * (1.0 - y);
        }
        return;
      }
      case Op::kGelu: {
        if (!wants(0)) return;
        const auto& x = val(n.in[0]).data;
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
          d.data[i] += dy.data[i] * detail::gelu_grad(x[i]);
        }
        return;
      }
      case Op::kSoftmaxRows: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        for (int i = 0; i < n.rows; ++i) {
          const double* y = &n.value.data[i * n.cols];
          const double* dyr = &dy.data[i * n.cols];
          double dot = 0.0;
          for (int j = 0; j < n.cols; ++j) dot += dyr[j] * y[j];
          for (int j = 0; j < n.cols; ++j) d.data[i * n.cols + j] += y[j] * (dyr[j] - dot);
        }
        return;
      }
      case Op::kLayerNorm: {
        const Tensor& x = val(n.in[0]);
        const Tensor& g = val(n.in[1]);
        const int c = n.cols;
        std::vector<double> z(c), dz(c);
        for (int i = 0; i < n.rows; ++i) {
          const double* row = &x.data[i * c];
          const double* dyr = &dy.data[i * c];
          double mean = 0.0;
          for (int j = 0; j < c; ++j) mean += row[j];
          mean /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
          var /= c;
          const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
          for (int j = 0; j < c; ++j) z[j] = (row[j] - mean) * inv;
          if (wants(1)) {
            Tensor& dg = grad_of(n.in[1]);
            for (int j = 0; j < c; ++j) dg.data[j] += dyr[j] * z[j];
          }
          if (wants(2)) {
            Tensor& db = grad_of(n.in[2]);
            for (int j = 0; j < c; ++j) db.data[j] += dyr[j];
          }
          if (wants(0)) {
            double mean_dz = 0.0, mean_dzz = 0.0;
            for (int j = 0; j < c; ++j) {
              dz[j] = dyr[j] * g.data[j];
              mean_dz += dz[j];
              mean_dzz += dz[j] * z[j];
            }
            mean_dz /= c;
            mean_dzz /= c;
            Tensor& dx = grad_of(n.in[0]);
            for (int j = 0; j < c; ++j) {
              dx.data[i * c + j] += inv * (dz[j] - mean_dz - z[j] * mean_dzz);
            }
          }
        }
        return;
      }
      case Op::kConcatRows: {
        std::size_t off = 0;
        for (int p : n.in) {
          const std::size_t sz = val(p).data.size();
          if (nodes_[p].needs_grad) {
            Tensor& d = grad_of(p);
            for (std::size_t i = 0; i < sz; ++i) d.data[i] += dy.data[off + i];
          }
          off += sz;
        }
        return;
      }
      case Op::kConcatCols: {
        int c0 = 0;
        for (int p : n.in) {
          const int pc = nodes_[p].cols;
          if (nodes_[p].needs_grad) {
            Tensor& d = grad_of(p);
            for (int i = 0; i < n.rows; ++i) {
              for (int j = 0; j < pc; ++j) d.data[i * pc + j] += dy.data[i * n.cols + c0 + j];
            }
          }
          c0 += pc;
        }
        return;
      }
      case Op::kSliceRows: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
          d.data[static_cast<std::size_t>(n.i0) * n.cols + i] += dy.data[i];
        }
        return;
      }
      case Op::kSliceCols: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        const int ac = nodes_[n.in[0]].cols;
        for (int i = 0; i < n.rows; ++i) {
          for (int j = 0; j < n.cols; ++j) d.data[i * ac + n.i0 + j] += dy.data[i * n.cols + j];
        }
        return;
      }
      case Op::kReshape: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < dy.data.size(); ++i) d.data[i] += dy.data[i];
        return;
      }
      case Op::kMeanAll: {
        if (!wants(0)) return;
        Tensor& d = grad_of(n.in[0]);
        const double f = dy.data[0] / static_cast<double>(d.data.size());
        for (double& v : d.data) v += f;
        return;
      }
      case Op::kMse: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        const double f = 2.0 * dy.data[0] / static_cast<double>(a.size());
        if (wants(0)) {
          Tensor& d = grad_of(n.in[0]);
          for (std::size_t i = 0; i < a.size(); ++i) d.data[i] += f * (a[i] - b[i]);
        }
        if (wants(1)) {
          Tensor& d = grad_of(n.in[1]);
          for (std::size_t i = 0; i < a.size(); ++i) d.data[i] -= f * (a[i] - b[i]);
        }
        return;
      }
      case Op::kMae: {
        const auto& a = val(n.in[0]).data;
        const auto& b = val(n.in[1]).data;
        const double f = dy.data[0] / static_cast<double>(a.size());
        // subgradient 0 at zero residual
        if (wants(0)) {
          Tensor& d = grad_of(n.in[0]);
          for (std::size_t i = 0; i < a.size(); ++i) {
            const double r = a[i] - b[i];
            d.data[i] += f * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
          }
        }
        if (wants(1)) {
          Tensor& d = grad_of(n.in[1]);
          for (std::size_t i = 0; i < a.size(); ++i) {
            const double r = a[i] - b[i];
            d.data[i] -= f * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
          }
        }
        return;
      }
    }
  }

  ParamStore* store_;
  std::vector<GraphNode> nodes_;
  std::unordered_map<std::string, int> inputs_;
  std::map<std::string, int> outputs_;
  bool evaluated_ = false;
};

}  // namespace pir
