#pragma once

// Minimal reverse-mode autodiff over dense double tensors (NCHW layout).
// Networks in this library are small enough that a dynamic tape is cheap
// compared to the convolutions it records.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mitodet::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (n, c, h, w).
  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] + w];
  }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

using Var = std::shared_ptr<Node>;

// While alive, newly built nodes record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Seeds d(root)/d(root) = 1 for a scalar root and accumulates gradients into
// every reachable node that requires them.
void backward(const Var& root);

// --- layers -----------------------------------------------------------------

// x [N,C,H,W], w [O,C,k,k], b [O] -> [N,O,Ho,Wo].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x [N,C,H,W], w [C,O,k,k], b [O] -> [N,O,(H-1)s-2p+k, ...].
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var max_pool2(const Var& x);
// Max pool with window = stride = factor (factor 1 returns x).
Var max_pool(const Var& x, int factor);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
Var linear(const Var& x, const Var& w, const Var& b);  // x [N,F], w [O,F], b [O]

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var add(const Var& a, const Var& b);

// f [N,C,H,W] scaled per location by (1 + a), a [N,1,H,W].
Var attention_gate(const Var& f, const Var& a);
// Class activation map: sum_c w[cls_n, c] * f[n, c] -> [N,1,H,W].
Var class_activation_map(const Var& f, const Var& w, std::vector<int> classes);
// Per (n, channel) min-max rescale to [0,1]; constant maps become zeros.
Var minmax_normalize(const Var& x);

// Mean 2-class (or K-class) softmax cross entropy; logits [N,K].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

// Channel slice [begin, end) of a 4-D tensor.
Var channels(const Var& x, int begin, int end);

// --- parameters -------------------------------------------------------------

struct NamedParam {
  std::string name;
  Var var;
};

class ParamSet {
 public:
  Var add(std::string name, Tensor init);
  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<NamedParam>& items() { return items_; }
  const Var& get(const std::string& name) const;
  std::size_t count() const;
  void zero_grad();
  // Deep copy of values into fresh leaf nodes.
  ParamSet clone() const;
  void copy_values_from(const ParamSet& other);

 private:
  std::vector<NamedParam> items_;
};

}  // namespace mitodet::nn
