#include "nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "error.hpp"

namespace mitodet::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

thread_local bool grad_enabled = true;

Var make_node(Tensor value, std::vector<Var> inputs) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!grad_enabled) return node;
  for (const auto& in : inputs) {
    if (in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->inputs = std::move(inputs);
  return node;
}

// cols[(c*k + ky)*k + kx, oy*Wo + ox] = src[c, oy*s - p + ky, ox*s - p + kx]
void im2col(const double* src, int C, int H, int W, int k, int s, int p, int Ho,
            int Wo, double* cols) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          double* out = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* in = src + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            out[ox] = (ix >= 0 && ix < W) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int C, int H, int W, int k, int s, int p, int Ho,
            int Wo, double* dst) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) continue;
          const double* in = row + static_cast<std::size_t>(oy) * Wo;
          double* out = dst + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < W) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <class F>
Var unary(const Var& x, F f) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x->value[i]);
  return make_node(std::move(out), {x});
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

void backward(const Var& root) {
  require(root->value.size() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (node.backward_fn && node.grad.size() == node.value.size()) node.backward_fn(node);
  }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& X = x->value;
  const Tensor& Wt = w->value;
  require(X.rank() == 4 && Wt.rank() == 4 && Wt.dim(1) == X.dim(1) && Wt.dim(2) == Wt.dim(3),
          "conv2d: shape mismatch " + shape_string(X.shape()) + " vs " +
              shape_string(Wt.shape()));
  require(b->value.size() == static_cast<std::size_t>(Wt.dim(0)), "conv2d: bias size");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const int O = Wt.dim(0), k = Wt.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (Wd + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d: empty output");
  const int K = C * k * k;
  const int P = Ho * Wo;

  Tensor out({N, O, Ho, Wo});
  std::vector<double> cols(static_cast<std::size_t>(K) * P);
  ConstMapMat Wm(Wt.data(), O, K);
  for (int n = 0; n < N; ++n) {
    im2col(X.data() + static_cast<std::size_t>(n) * C * H * Wd, C, H, Wd, k, stride, pad,
           Ho, Wo, cols.data());
    MapMat Om(out.data() + static_cast<std::size_t>(n) * O * P, O, P);
    Om.noalias() = Wm * ConstMapMat(cols.data(), K, P);
    for (int o = 0; o < O; ++o) Om.row(o).array() += b->value[o];
  }

  Var node = make_node(std::move(out), {x, w, b});
  if (node->requires_grad) {
    node->backward_fn = [=](Node& self) {
      const Tensor& G = self.grad;
      const Tensor& Xv = self.inputs[0]->value;
      const Tensor& Wv = self.inputs[1]->value;
      std::vector<double> col(static_cast<std::size_t>(K) * P);
      for (int n = 0; n < N; ++n) {
        ConstMapMat Gm(G.data() + static_cast<std::size_t>(n) * O * P, O, P);
        const double* xn = Xv.data() + static_cast<std::size_t>(n) * C * H * Wd;
        if (self.inputs[1]->requires_grad) {
          im2col(xn, C, H, Wd, k, stride, pad, Ho, Wo, col.data());
          MapMat dW(self.inputs[1]->ensure_grad().data(), O, K);
          dW.noalias() += Gm * ConstMapMat(col.data(), K, P).transpose();
        }
        if (self.inputs[2]->requires_grad) {
          Tensor& db = self.inputs[2]->ensure_grad();
          for (int o = 0; o < O; ++o) db[o] += Gm.row(o).sum();
        }
        if (self.inputs[0]->requires_grad) {
          MapMat dcol(col.data(), K, P);
          dcol.noalias() = ConstMapMat(Wv.data(), O, K).transpose() * Gm;
          col2im(col.data(), C, H, Wd, k, stride, pad, Ho, Wo,
                 self.inputs[0]->ensure_grad().data() + static_cast<std::size_t>(n) * C * H * Wd);
        }
      }
    };
  }
  return node;
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& X = x->value;
  const Tensor& Wt = w->value;
  require(X.rank() == 4 && Wt.rank() == 4 && Wt.dim(0) == X.dim(1) && Wt.dim(2) == Wt.dim(3),
          "conv_transpose2d: shape mismatch " + shape_string(X.shape()) + " vs " +
              shape_string(Wt.shape()));
  const int N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const int Co = Wt.dim(1), k = Wt.dim(2);
  require(b->value.size() == static_cast<std::size_t>(Co), "conv_transpose2d: bias size");
  const int Ho = (H - 1) * stride - 2 * pad + k;
  const int Wo = (Wd - 1) * stride - 2 * pad + k;
  require(Ho > 0 && Wo > 0, "conv_transpose2d: empty output");
  const int K = Co * k * k;
  const int P = H * Wd;
  const std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;

  Tensor out({N, Co, Ho, Wo});
  std::vector<double> cols(static_cast<std::size_t>(K) * P);
  ConstMapMat Wm(Wt.data(), Ci, K);
  for (int n = 0; n < N; ++n) {
    MapMat cm(cols.data(), K, P);
    cm.noalias() = Wm.transpose() * ConstMapMat(X.data() + static_cast<std::size_t>(n) * Ci * P, Ci, P);
    double* on = out.data() + static_cast<std::size_t>(n) * Co * out_plane;
    col2im(cols.data(), Co, Ho, Wo, k, stride, pad, H, Wd, on);
    for (int o = 0; o < Co; ++o) {
      for (std::size_t i = 0; i < out_plane; ++i) on[o * out_plane + i] += b->value[o];
    }
  }

  Var node = make_node(std::move(out), {x, w, b});
  if (node->requires_grad) {
    node->backward_fn = [=](Node& self) {
      const Tensor& G = self.grad;
      const Tensor& Xv = self.inputs[0]->value;
      const Tensor& Wv = self.inputs[1]->value;
      std::vector<double> col(static_cast<std::size_t>(K) * P);
      for (int n = 0; n < N; ++n) {
        const double* gn = G.data() + static_cast<std::size_t>(n) * Co * out_plane;
        im2col(gn, Co, Ho, Wo, k, stride, pad, H, Wd, col.data());
        ConstMapMat dcol(col.data(), K, P);
        if (self.inputs[0]->requires_grad) {
          MapMat dX(self.inputs[0]->ensure_grad().data() + static_cast<std::size_t>(n) * Ci * P, Ci, P);
          dX.noalias() += ConstMapMat(Wv.data(), Ci, K) * dcol;
        }
        if (self.inputs[1]->requires_grad) {
          MapMat dW(self.inputs[1]->ensure_grad().data(), Ci, K);
          dW.noalias() += ConstMapMat(Xv.data() + static_cast<std::size_t>(n) * Ci * P, Ci, P) *
                          dcol.transpose();
        }
        if (self.inputs[2]->requires_grad) {
          Tensor& db = self.inputs[2]->ensure_grad();
          for (int o = 0; o < Co; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) s += gn[o * out_plane + i];
            db[o] += s;
          }
        }
      }
    };
  }
  return node;
}

Var max_pool(const Var& x, int factor) {
  if (factor == 1) return x;
  const Tensor& X = x->value;
  require(X.rank() == 4 && factor > 1, "max_pool: expects a 4-D tensor");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int Ho = H / factor, Wo = W / factor;
  require(Ho > 0 && Wo > 0, "max_pool: input smaller than window");
  Tensor out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t oi = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          std::size_t best = base + static_cast<std::size_t>(oy * factor) * W + ox * factor;
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) {
              const std::size_t idx =
                  base + static_cast<std::size_t>(oy * factor + dy) * W + ox * factor + dx;
              if (X[idx] > X[best]) best = idx;
            }
          }
          out[oi] = X[best];
          argmax[oi] = best;
        }
      }
    }
  }
  Var node = make_node(std::move(out), {x});
  if (node->requires_grad) {
    node->backward_fn = [argmax = std::move(argmax)](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
    };
  }
  return node;
}

Var max_pool2(const Var& x) { return max_pool(x, 2); }

Var global_avg_pool(const Var& x) {
  const Tensor& X = x->value;
  require(X.rank() == 4, "global_avg_pool: expects a 4-D tensor");
  const int N = X.dim(0), C = X.dim(1);
  const std::size_t plane = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  Tensor out({N, C});
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += X[nc * plane + i];
    out[nc] = s / static_cast<double>(plane);
  }
  Var node = make_node(std::move(out), {x});
  if (node->requires_grad) {
    node->backward_fn = [plane](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
        const double g = self.grad[nc] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] += g;
      }
    };
  }
  return node;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& Wt = w->value;
  require(X.rank() == 2 && Wt.rank() == 2 && X.dim(1) == Wt.dim(1) &&
              b->value.size() == static_cast<std::size_t>(Wt.dim(0)),
          "linear: shape mismatch " + shape_string(X.shape()) + " vs " +
              shape_string(Wt.shape()));
  const int N = X.dim(0), F = X.dim(1), O = Wt.dim(0);
  Tensor out({N, O});
  MapMat Y(out.data(), N, O);
  Y.noalias() = ConstMapMat(X.data(), N, F) * ConstMapMat(Wt.data(), O, F).transpose();
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) Y(n, o) += b->value[o];
  }
  Var node = make_node(std::move(out), {x, w, b});
  if (node->requires_grad) {
    node->backward_fn = [N, F, O](Node& self) {
      ConstMapMat G(self.grad.data(), N, O);
      if (self.inputs[0]->requires_grad) {
        MapMat dX(self.inputs[0]->ensure_grad().data(), N, F);
        dX.noalias() += G * ConstMapMat(self.inputs[1]->value.data(), O, F);
      }
      if (self.inputs[1]->requires_grad) {
        MapMat dW(self.inputs[1]->ensure_grad().data(), O, F);
        dW.noalias() += G.transpose() * ConstMapMat(self.inputs[0]->value.data(), N, F);
      }
      if (self.inputs[2]->requires_grad) {
        Tensor& db = self.inputs[2]->ensure_grad();
        for (int o = 0; o < O; ++o) db[o] += G.col(o).sum();
      }
    };
  }
  return node;
}

Var relu(const Var& x) {
  Var node = unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (self.value[i] > 0.0) dx[i] += self.grad[i];
      }
    };
  }
  return node;
}

Var sigmoid(const Var& x) {
  Var node = unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double s = self.value[i];
        dx[i] += self.grad[i] * s * (1.0 - s);
      }
    };
  }
  return node;
}

Var tanh(const Var& x) {
  Var node = unary(x, [](double v) { return std::tanh(v); });
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double t = self.value[i];
        dx[i] += self.grad[i] * (1.0 - t * t);
      }
    };
  }
  return node;
}

Var add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  Var node = make_node(std::move(out), {a, b});
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      for (auto& in : self.inputs) {
        if (!in->requires_grad) continue;
        Tensor& d = in->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
      }
    };
  }
  return node;
}

Var attention_gate(const Var& f, const Var& a) {
  const Tensor& F = f->value;
  const Tensor& A = a->value;
  require(F.rank() == 4 && A.rank() == 4 && A.dim(0) == F.dim(0) && A.dim(1) == 1 &&
              A.dim(2) == F.dim(2) && A.dim(3) == F.dim(3),
          "attention_gate: shape mismatch " + shape_string(F.shape()) + " vs " +
              shape_string(A.shape()));
  const int N = F.dim(0), C = F.dim(1);
  const std::size_t plane = static_cast<std::size_t>(F.dim(2)) * F.dim(3);
  Tensor out(F.shape());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = F[base + i] * (1.0 + A[n * plane + i]);
      }
    }
  }
  Var node = make_node(std::move(out), {f, a});
  if (node->requires_grad) {
    node->backward_fn = [N, C, plane](Node& self) {
      const Tensor& Fv = self.inputs[0]->value;
      const Tensor& Av = self.inputs[1]->value;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
          if (self.inputs[0]->requires_grad) {
            Tensor& df = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < plane; ++i) {
              df[base + i] += self.grad[base + i] * (1.0 + Av[n * plane + i]);
            }
          }
          if (self.inputs[1]->requires_grad) {
            Tensor& da = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < plane; ++i) {
              da[n * plane + i] += self.grad[base + i] * Fv[base + i];
            }
          }
        }
      }
    };
  }
  return node;
}

Var class_activation_map(const Var& f, const Var& w, std::vector<int> classes) {
  const Tensor& F = f->value;
  const Tensor& Wt = w->value;
  require(F.rank() == 4 && Wt.rank() == 2 && Wt.dim(1) == F.dim(1) &&
              classes.size() == static_cast<std::size_t>(F.dim(0)),
          "class_activation_map: shape mismatch");
  const int N = F.dim(0), C = F.dim(1), H = F.dim(2), W = F.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    require(classes[n] >= 0 && classes[n] < Wt.dim(0), "class_activation_map: class index");
    for (int c = 0; c < C; ++c) {
      const double wc = Wt[static_cast<std::size_t>(classes[n]) * C + c];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[n * plane + i] += wc * F[base + i];
    }
  }
  Var node = make_node(std::move(out), {f, w});
  if (node->requires_grad) {
    node->backward_fn = [N, C, plane, classes = std::move(classes)](Node& self) {
      const Tensor& Fv = self.inputs[0]->value;
      const Tensor& Wv = self.inputs[1]->value;
      for (int n = 0; n < N; ++n) {
        const std::size_t row = static_cast<std::size_t>(classes[n]) * C;
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
          if (self.inputs[0]->requires_grad) {
            Tensor& df = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < plane; ++i) df[base + i] += Wv[row + c] * self.grad[n * plane + i];
          }
          if (self.inputs[1]->requires_grad) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += self.grad[n * plane + i] * Fv[base + i];
            self.inputs[1]->ensure_grad()[row + c] += s;
          }
        }
      }
    };
  }
  return node;
}

Var minmax_normalize(const Var& x) {
  const Tensor& X = x->value;
  require(X.rank() == 4, "minmax_normalize: expects a 4-D tensor");
  const std::size_t maps = static_cast<std::size_t>(X.dim(0)) * X.dim(1);
  const std::size_t plane = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  Tensor out(X.shape());
  std::vector<std::size_t> lo_idx(maps), hi_idx(maps);
  for (std::size_t m = 0; m < maps; ++m) {
    const double* v = X.data() + m * plane;
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (v[i] < v[lo]) lo = i;
      if (v[i] > v[hi]) hi = i;
    }
    lo_idx[m] = lo;
    hi_idx[m] = hi;
    const double range = v[hi] - v[lo];
    double* o = out.data() + m * plane;
    if (range > 0.0) {
      for (std::size_t i = 0; i < plane; ++i) o[i] = (v[i] - v[lo]) / range;
      o[lo] = 0.0;
      o[hi] = 1.0;
    }
  }
  Var node = make_node(std::move(out), {x});
  if (node->requires_grad) {
    node->backward_fn = [maps, plane, lo_idx = std::move(lo_idx),
                         hi_idx = std::move(hi_idx)](Node& self) {
      const Tensor& Xv = self.inputs[0]->value;
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (std::size_t m = 0; m < maps; ++m) {
        const double* v = Xv.data() + m * plane;
        const double* g = self.grad.data() + m * plane;
        const double a = v[lo_idx[m]], b = v[hi_idx[m]];
        const double range = b - a;
        if (!(range > 0.0)) continue;
        double* d = dx.data() + m * plane;
        double dlo = 0.0, dhi = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          d[i] += g[i] / range;
          dlo += g[i] * (v[i] - b) / (range * range);
          dhi -= g[i] * (v[i] - a) / (range * range);
        }
        d[lo_idx[m]] += dlo;
        d[hi_idx[m]] += dhi;
      }
    };
  }
  return node;
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& L = logits->value;
  require(L.rank() == 2 && labels.size() == static_cast<std::size_t>(L.dim(0)) && L.dim(0) > 0,
          "softmax_cross_entropy: shape mismatch");
  const int N = L.dim(0), K = L.dim(1);
  Tensor probs({N, K});
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    require(labels[n] >= 0 && labels[n] < K, "softmax_cross_entropy: label out of range");
    const double* z = L.data() + static_cast<std::size_t>(n) * K;
    const double zmax = *std::max_element(z, z + K);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(z[k] - zmax);
    for (int k = 0; k < K; ++k) probs[n * K + k] = std::exp(z[k] - zmax) / denom;
    loss += -(z[labels[n]] - zmax - std::log(denom));
  }
  Tensor out({1});
  out[0] = loss / N;
  Var node = make_node(std::move(out), {logits});
  if (node->requires_grad) {
    std::vector<int> lab(labels.begin(), labels.end());
    node->backward_fn = [N, K, probs = std::move(probs), lab = std::move(lab)](Node& self) {
      Tensor& dz = self.inputs[0]->ensure_grad();
      const double g = self.grad[0] / N;
      for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) {
          dz[n * K + k] += g * (probs[n * K + k] - (k == lab[n] ? 1.0 : 0.0));
        }
      }
    };
  }
  return node;
}

Var channels(const Var& x, int begin, int end) {
  const Tensor& X = x->value;
  require(X.rank() == 4 && 0 <= begin && begin < end && end <= X.dim(1),
          "channels: bad slice");
  const int N = X.dim(0), C = X.dim(1), S = end - begin;
  const std::size_t plane = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  Tensor out({N, S, X.dim(2), X.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(X.data() + (static_cast<std::size_t>(n) * C + begin) * plane, S * plane,
                out.data() + static_cast<std::size_t>(n) * S * plane);
  }
  Var node = make_node(std::move(out), {x});
  if (node->requires_grad) {
    node->backward_fn = [=](Node& self) {
      Tensor& dx = self.inputs[0]->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const double* g = self.grad.data() + static_cast<std::size_t>(n) * S * plane;
        double* d = dx.data() + (static_cast<std::size_t>(n) * C + begin) * plane;
        for (std::size_t i = 0; i < S * plane; ++i) d[i] += g[i];
      }
    };
  }
  return node;
}

Var ParamSet::add(std::string name, Tensor init) {
  Var v = parameter(std::move(init));
  items_.push_back({std::move(name), v});
  return v;
}

const Var& ParamSet::get(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p.var;
  }
  fail(ErrorCode::NotFound, "parameter not found: " + name);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.var->grad = Tensor();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& p : items_) out.add(p.name, p.var->value);
  return out;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  require(other.items_.size() == items_.size(), "copy_values_from: parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    require(items_[i].var->value.same_shape(other.items_[i].var->value),
            "copy_values_from: shape mismatch for " + items_[i].name);
    items_[i].var->value = other.items_[i].var->value;
  }
}

}  // namespace mitodet::nn
