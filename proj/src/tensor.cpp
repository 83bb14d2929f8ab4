#include "coop/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "coop/errors.hpp"

namespace coop {

namespace {

thread_local std::uint64_t g_op_count = 0;

using NodePtr = std::shared_ptr<detail::Node>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

const detail::Node& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return *t.node();
}

// Creates the output node; links parents only if any of them requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(detail::Node&)> backward_fn) {
  ++g_op_count;
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any = false;
  for (const Tensor* in : inputs) {
    if (in->defined() && in->requires_grad()) any = true;
  }
  if (any) {
    node->requires_grad = true;
    for (const Tensor* in : inputs) node->parents.push_back(in->defined() ? in->node() : nullptr);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const NodePtr& p) { return p && p->requires_grad; }

// [rows × cols] view of a rank-1 or rank-2 tensor.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(s));
}

void check_tau(double tau, const char* op) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError(std::string(op) + ": temperature must be positive, got " +
                         std::to_string(tau));
  }
}

// Row-wise softmax of z/tau and its log, max-subtracted.
void softmax_rows(std::span<const double> z, std::size_t rows, std::size_t cols, double tau,
                  std::vector<double>& prob, std::vector<double>& logp) {
  prob.assign(z.size(), 0.0);
  logp.assign(z.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = z.data() + r * cols;
    double mx = in[0] / tau;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c] / tau);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] / tau - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) {
      logp[r * cols + c] = in[c] / tau - lse;
      prob[r * cols + c] = std::exp(logp[r * cols + c]);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this, "numel").data.size(); }

std::span<const double> Tensor::data() const { return node_of(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
  node_of(*this, "mutable_data");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw IndexError("flat index out of range");
  return node_->data[i];
}

bool Tensor::requires_grad() const { return node_of(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool value) {
  node_of(*this, "set_requires_grad");
  if (!node_->parents.empty()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = value;
  if (!value) node_->grad.clear();
}

bool Tensor::has_grad() const { return !node_of(*this, "has_grad").grad.empty(); }

std::span<const double> Tensor::grad() const { return node_of(*this, "grad").grad; }

std::span<double> Tensor::mutable_grad() {
  node_of(*this, "mutable_grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  node_of(*this, "zero_grad");
  node_->grad.clear();
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()), requires_grad);
}

void Tensor::backward() const {
  const auto& root = node_of(*this, "backward");
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (root.consumed) throw ContractError("backward() already called on this graph");
  if (!root.requires_grad) return;

  // Iterative post-order DFS: parents precede children in `order`.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p && p->requires_grad && !p->parents.empty() && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release the graph; interior grads are no longer needed.
  for (detail::Node* n : order) {
    n->backward_fn = nullptr;
    n->parents.clear();
    n->consumed = true;
    if (n != node_.get()) n->grad.clear();
  }
}

std::uint64_t op_count() { return g_op_count; }
void reset_op_count() { g_op_count = 0; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!wants_grad(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (wants_grad(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {&a}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_constant(const Tensor& a, std::span<const double> c) {
  require(c.size() == a.numel(), "add_constant: length mismatch");
  std::vector<double> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c[i];
  return make_result("add_constant", a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor broadcast_mul(const Tensor& x, const Tensor& gate) {
  require(gate.numel() == 1, "broadcast_mul: gate must hold one element");
  const double gv = gate.data()[0];
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * gv;
  return make_result("broadcast_mul", x.shape(), std::move(out), {&x, &gate},
                     [](detail::Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       if (wants_grad(px)) {
                         auto& g = px->grad_buffer();
                         const double gv = pg->data[0];
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gv;
                       }
                       if (wants_grad(pg)) {
                         double s = 0.0;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           s += self.grad[i] * px->data[i];
                         pg->accumulate(0, s);
                       }
                     });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) throw IndexError("select: index out of range");
  return make_result("select", {1}, {x.data()[flat_index]}, {&x},
                     [flat_index](detail::Node& self) {
                       self.parents[0]->accumulate(flat_index, self.grad[0]);
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {&x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor gather(const Tensor& x, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  if (idx.empty()) throw DimensionError("gather: empty index list");
  std::vector<double> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= x.numel()) throw IndexError("gather: index out of range");
    out[j] = x.data()[idx[j]];
  }
  const std::size_t n = idx.size();
  return make_result("gather", {n}, std::move(out), {&x},
                     [idx = std::move(idx)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t j = 0; j < idx.size(); ++j) g[idx[j]] += self.grad[j];
                     });
}

Tensor scatter(const Tensor& values, std::span<const std::size_t> indices, std::size_t size,
               double fill) {
  require(values.numel() == indices.size(), "scatter: one index per value required");
  std::vector<double> out(size, fill);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= size) throw IndexError("scatter: index out of range");
    out[idx[j]] = values.data()[j];
  }
  return make_result("scatter", {size}, std::move(out), {&values},
                     [idx = std::move(idx)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t j = 0; j < idx.size(); ++j) g[j] += self.grad[idx[j]];
                     });
}

// ---------------------------------------------------------------------------
// Layers

Tensor matmul(const Tensor& a, const Tensor& b) { return linear(a, b, Tensor()); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2, "linear: x and w must be rank 2");
  const std::size_t B = x.dim(0), I = x.dim(1), O = w.dim(1);
  require(w.dim(0) == I, "linear: x " + shape_str(x.shape()) + " incompatible with w " +
                             shape_str(w.shape()));
  if (b.defined()) require(b.numel() == O, "linear: bias length must equal output width");

  std::vector<double> out(B * O, 0.0);
  auto dx = x.data();
  auto dw = w.data();
  for (std::size_t r = 0; r < B; ++r) {
    double* y = out.data() + r * O;
    if (b.defined()) std::copy(b.data().begin(), b.data().end(), y);
    for (std::size_t i = 0; i < I; ++i) {
      const double xv = dx[r * I + i];
      const double* wr = dw.data() + i * O;
      for (std::size_t o = 0; o < O; ++o) y[o] += xv * wr[o];
    }
  }
  return make_result("linear", {B, O}, std::move(out), {&x, &w, &b},
                     [B, I, O](detail::Node& self) {
                       auto& px = self.parents[0];
                       auto& pw = self.parents[1];
                       auto& pb = self.parents[2];
                       const double* gy = self.grad.data();
                       if (wants_grad(px)) {
                         auto& gx = px->grad_buffer();
                         for (std::size_t r = 0; r < B; ++r) {
                           for (std::size_t i = 0; i < I; ++i) {
                             const double* wr = pw->data.data() + i * O;
                             double s = 0.0;
                             for (std::size_t o = 0; o < O; ++o) s += gy[r * O + o] * wr[o];
                             gx[r * I + i] += s;
                           }
                         }
                       }
                       if (wants_grad(pw)) {
                         auto& gw = pw->grad_buffer();
                         for (std::size_t r = 0; r < B; ++r) {
                           for (std::size_t i = 0; i < I; ++i) {
                             const double xv = px->data[r * I + i];
                             double* gr = gw.data() + i * O;
                             for (std::size_t o = 0; o < O; ++o) gr[o] += xv * gy[r * O + o];
                           }
                         }
                       }
                       if (wants_grad(pb)) {
                         auto& gb = pb->grad_buffer();
                         for (std::size_t r = 0; r < B; ++r)
                           for (std::size_t o = 0; o < O; ++o) gb[o] += gy[r * O + o];
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require(x.rank() == 4 && k.rank() == 4, "conv2d: x and k must be rank 4");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), Kh = k.dim(2), Kw = k.dim(3);
  require(k.dim(1) == C, "conv2d: kernel channels " + std::to_string(k.dim(1)) +
                             " != input channels " + std::to_string(C));
  require(H + 2 * padding >= Kh && W + 2 * padding >= Kw,
          "conv2d: kernel larger than padded input");
  if (bias.defined()) require(bias.numel() == O, "conv2d: bias length must equal out channels");
  const std::size_t Ho = (H + 2 * padding - Kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - Kw) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  std::vector<double> out(B * O * Ho * Wo, 0.0);
  auto dx = x.data();
  auto dk = k.data();
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double* y = out.data() + ((n * O + o) * Ho) * Wo;
      if (bias.defined()) std::fill(y, y + Ho * Wo, bias.data()[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* xin = dx.data() + ((n * C + c) * H) * W;
        const double* kk = dk.data() + ((o * C + c) * Kh) * Kw;
        for (std::size_t i = 0; i < Ho; ++i) {
          for (std::size_t j = 0; j < Wo; ++j) {
            double s = 0.0;
            for (std::size_t u = 0; u < Kh; ++u) {
              const auto hi = static_cast<std::ptrdiff_t>(i * stride + u) - pad;
              if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < Kw; ++v) {
                const auto wi = static_cast<std::ptrdiff_t>(j * stride + v) - pad;
                if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                s += xin[hi * static_cast<std::ptrdiff_t>(W) + wi] * kk[u * Kw + v];
              }
            }
            y[i * Wo + j] += s;
          }
        }
      }
    }
  }
  return make_result(
      "conv2d", {B, O, Ho, Wo}, std::move(out), {&x, &k, &bias},
      [=](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pk = self.parents[1];
        auto& pb = self.parents[2];
        const bool gx_on = wants_grad(px), gk_on = wants_grad(pk);
        std::vector<double>* gx = gx_on ? &px->grad_buffer() : nullptr;
        std::vector<double>* gk = gk_on ? &pk->grad_buffer() : nullptr;
        for (std::size_t n = 0; n < B; ++n) {
          for (std::size_t o = 0; o < O; ++o) {
            const double* gy = self.grad.data() + ((n * O + o) * Ho) * Wo;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t xoff = ((n * C + c) * H) * W;
              const std::size_t koff = ((o * C + c) * Kh) * Kw;
              for (std::size_t i = 0; i < Ho; ++i) {
                for (std::size_t j = 0; j < Wo; ++j) {
                  const double g = gy[i * Wo + j];
                  if (g == 0.0) continue;
                  for (std::size_t u = 0; u < Kh; ++u) {
                    const auto hi = static_cast<std::ptrdiff_t>(i * stride + u) - pad;
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t v = 0; v < Kw; ++v) {
                      const auto wi = static_cast<std::ptrdiff_t>(j * stride + v) - pad;
                      if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                      const std::size_t xi = xoff + static_cast<std::size_t>(hi) * W +
                                             static_cast<std::size_t>(wi);
                      if (gk_on) (*gk)[koff + u * Kw + v] += g * px->data[xi];
                      if (gx_on) (*gx)[xi] += g * pk->data[koff + u * Kw + v];
                    }
                  }
                }
              }
            }
            if (wants_grad(pb)) {
              double s = 0.0;
              for (std::size_t q = 0; q < Ho * Wo; ++q) s += gy[q];
              pb->accumulate(o, s);
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > 0.0 ? dx[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {&x}, [](detail::Node& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->data[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: expected [BxCxHxW], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(B * C, 0.0);
  auto dx = x.data();
  for (std::size_t q = 0; q < B * C; ++q) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += dx[q * HW + i];
    out[q] = s / static_cast<double>(HW);
  }
  return make_result("global_avg_pool", {B, C}, std::move(out), {&x},
                     [B, C, HW](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double inv = 1.0 / static_cast<double>(HW);
                       for (std::size_t q = 0; q < B * C; ++q)
                         for (std::size_t i = 0; i < HW; ++i) g[q * HW + i] += self.grad[q] * inv;
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(x.rank() == 2, "layer_norm: expected [BxC], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1);
  require(gamma.numel() == C && beta.numel() == C, "layer_norm: gamma/beta length != features");
  auto dx = x.data();
  auto g = gamma.data();
  auto b = beta.data();
  std::vector<double> xhat(B * C), inv_std(B), out(B * C);
  for (std::size_t r = 0; r < B; ++r) {
    const double* row = dx.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + kBatchNormEps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (row[c] - mu) * inv_std[r];
      out[r * C + c] = g[c] * xhat[r * C + c] + b[c];
    }
  }
  return make_result(
      "layer_norm", {B, C}, std::move(out), {&x, &gamma, &beta},
      [B, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& px = self.parents[0];
        const auto& pg = self.parents[1];
        const auto& pb = self.parents[2];
        const auto& gam = pg->data;
        if (wants_grad(pg) || wants_grad(pb)) {
          for (std::size_t r = 0; r < B; ++r)
            for (std::size_t c = 0; c < C; ++c) {
              const double dy = self.grad[r * C + c];
              if (wants_grad(pg)) pg->accumulate(c, dy * xhat[r * C + c]);
              if (wants_grad(pb)) pb->accumulate(c, dy);
            }
        }
        if (!wants_grad(px)) return;
        auto& gx = px->grad_buffer();
        for (std::size_t r = 0; r < B; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double dxh = self.grad[r * C + c] * gam[c];
            m1 += dxh;
            m2 += dxh * xhat[r * C + c];
          }
          m1 /= static_cast<double>(C);
          m2 /= static_cast<double>(C);
          for (std::size_t c = 0; c < C; ++c) {
            const double dxh = self.grad[r * C + c] * gam[c];
            gx[r * C + c] += inv_std[r] * (dxh - m1 - xhat[r * C + c] * m2);
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode, bool update_stats) {
  require(x.rank() == 2 || x.rank() == 4, "batch_norm: expected rank 2 or 4 input");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  require(gamma.numel() == C && beta.numel() == C, "batch_norm: gamma/beta length != channels");
  require(stats.mean.size() == C && stats.var.size() == C,
          "batch_norm: running stats length != channels");
  if (mode == NormMode::Train && B < 2) {
    throw DegenerateBatchError("batch_norm: train mode needs batch size >= 2");
  }
  const std::size_t N = B * S;
  auto dx = x.data();
  auto idx = [C, S](std::size_t n, std::size_t c, std::size_t s) { return (n * C + c) * S + s; };

  std::vector<double> mu(C), inv_std(C);
  if (mode == NormMode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t s = 0; s < S; ++s) m += dx[idx(n, c, s)];
      m /= static_cast<double>(N);
      double v = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = dx[idx(n, c, s)] - m;
          v += d * d;
        }
      const double var_biased = v / static_cast<double>(N);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var_biased + kBatchNormEps);
      if (update_stats) {
        const double var_unbiased = v / static_cast<double>(N - 1);
        stats.mean[c] = (1.0 - kBatchNormMomentum) * stats.mean[c] + kBatchNormMomentum * m;
        stats.var[c] = (1.0 - kBatchNormMomentum) * stats.var[c] + kBatchNormMomentum * var_unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + kBatchNormEps);
    }
  }

  std::vector<double> xhat(x.numel()), out(x.numel());
  auto dg = gamma.data();
  auto db = beta.data();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const auto i = idx(n, c, s);
        xhat[i] = (dx[i] - mu[c]) * inv_std[c];
        out[i] = dg[c] * xhat[i] + db[c];
      }

  const bool train = mode == NormMode::Train;
  return make_result(
      "batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& gy = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < B; ++n)
            for (std::size_t s = 0; s < S; ++s) {
              const auto i = idx(n, c, s);
              sum_g += gy[i];
              sum_gx += gy[i] * xhat[i];
            }
          if (wants_grad(pg)) pg->accumulate(c, sum_gx);
          if (wants_grad(pb)) pb->accumulate(c, sum_g);
          if (wants_grad(px)) {
            auto& gx = px->grad_buffer();
            const double gam = pg->data[c];
            for (std::size_t n = 0; n < B; ++n)
              for (std::size_t s = 0; s < S; ++s) {
                const auto i = idx(n, c, s);
                if (train) {
                  gx[i] += gam * inv_std[c] / static_cast<double>(N) *
                           (static_cast<double>(N) * gy[i] - sum_g - xhat[i] * sum_gx);
                } else {
                  gx[i] += gam * inv_std[c] * gy[i];
                }
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Probability ops

Tensor softmax_tau(const Tensor& logits, double tau) {
  check_tau(tau, "softmax_tau");
  auto [rows, cols] = rows_cols(logits, "softmax_tau");
  std::vector<double> prob, logp;
  softmax_rows(logits.data(), rows, cols, tau, prob, logp);
  auto saved = prob;
  return make_result("softmax_tau", logits.shape(), std::move(prob), {&logits},
                     [rows, cols, tau, p = std::move(saved)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t o = r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += self.grad[o + c] * p[o + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           g[o + c] += p[o + c] * (self.grad[o + c] - dot) / tau;
                       }
                     });
}

Tensor log_softmax_tau(const Tensor& logits, double tau) {
  check_tau(tau, "log_softmax_tau");
  auto [rows, cols] = rows_cols(logits, "log_softmax_tau");
  std::vector<double> prob, logp;
  softmax_rows(logits.data(), rows, cols, tau, prob, logp);
  return make_result("log_softmax_tau", logits.shape(), std::move(logp), {&logits},
                     [rows, cols, tau, p = std::move(prob)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t o = r * cols;
                         double s = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) s += self.grad[o + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           g[o + c] += (self.grad[o + c] - p[o + c] * s) / tau;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be [BxK]");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  require(labels.size() == B, "cross_entropy: one label per row required");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(K) + ")");
    }
  }
  std::vector<double> prob, logp;
  softmax_rows(logits.data(), B, K, 1.0, prob, logp);
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) loss -= logp[r * K + static_cast<std::size_t>(lab[r])];
  loss /= static_cast<double>(B);
  return make_result("cross_entropy", {1}, {loss}, {&logits},
                     [B, K, lab = std::move(lab), p = std::move(prob)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(B);
                       for (std::size_t r = 0; r < B; ++r)
                         for (std::size_t c = 0; c < K; ++c) {
                           const double y = static_cast<std::size_t>(lab[r]) == c ? 1.0 : 0.0;
                           g[r * K + c] += s * (p[r * K + c] - y);
                         }
                     });
}

Tensor kl_div_tau(const Tensor& student_logits, const Tensor& teacher_logits, double tau) {
  check_tau(tau, "kl_div_tau");
  require(student_logits.shape() == teacher_logits.shape(),
          "kl_div_tau: shape mismatch " + shape_str(student_logits.shape()) + " vs " +
              shape_str(teacher_logits.shape()));
  if (tau < 1.0) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "warning: kl_div_tau with temperature " << tau << " < 1\n";
      warned = true;
    }
  }
  auto [rows, cols] = rows_cols(student_logits, "kl_div_tau");
  std::vector<double> ps, lps, pt, lpt;
  softmax_rows(student_logits.data(), rows, cols, tau, ps, lps);
  softmax_rows(teacher_logits.data(), rows, cols, tau, pt, lpt);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (pt[i] > 0.0) kl += pt[i] * (lpt[i] - lps[i]);
  }
  const double t2 = tau * tau;
  const double value = t2 * kl / static_cast<double>(rows);
  return make_result(
      "kl_div_tau", {1}, {value}, {&student_logits, &teacher_logits},
      [=, ps = std::move(ps), lps = std::move(lps), pt = std::move(pt),
       lpt = std::move(lpt)](detail::Node& self) {
        const double s = self.grad[0] * t2 / static_cast<double>(rows) / tau;
        auto& pst = self.parents[0];
        auto& ptt = self.parents[1];
        if (wants_grad(pst)) {
          auto& g = pst->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (ps[i] - pt[i]);
        }
        if (wants_grad(ptt)) {
          auto& g = ptt->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            double mean_d = 0.0;
            for (std::size_t c = 0; c < cols; ++c) mean_d += pt[o + c] * (lpt[o + c] - lps[o + c]);
            for (std::size_t c = 0; c < cols; ++c)
              g[o + c] += s * pt[o + c] * ((lpt[o + c] - lps[o + c]) - mean_d);
          }
        }
      });
}

Tensor stopgrad(const Tensor& x) {
  ++g_op_count;
  const auto& n = node_of(x, "stopgrad");
  return Tensor(n.shape, n.data, false);
}

Tensor straight_through(std::span<const double> hard, const Tensor& soft) {
  require(hard.size() == soft.numel(), "straight_through: length mismatch");
  std::vector<double> out(hard.begin(), hard.end());
  return make_result("straight_through", soft.shape(), std::move(out), {&soft},
                     [](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Optimization

void sgd_update(std::span<const Tensor> params, std::vector<std::vector<double>>& velocity,
                double lr, double momentum, double weight_decay) {
  if (velocity.size() != params.size()) velocity.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p];
    if (!t.has_grad()) continue;
    auto theta = t.mutable_data();
    auto g = t.grad();
    auto& v = velocity[p];
    if (v.size() != theta.size()) v.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * theta[i];
      theta[i] -= lr * v[i];
    }
  }
}

Sgd::Sgd(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), velocity_(params_.size()), config_(config) {}

void Sgd::step(double lr) {
  sgd_update(params_, velocity_, lr, config_.momentum, config_.weight_decay);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Finite differences

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double eps) {
  Tensor probe = x.clone(true);
  Tensor loss = f(probe);
  if (loss.numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
  loss.backward();
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  GradCheckResult res;
  auto base = x.data();
  for (std::size_t i = 0; i < base.size(); ++i) {
    Tensor plus = x.clone(false);
    Tensor minus = x.clone(false);
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * eps);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
    const double rel = abs_err / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
    }
    res.max_abs_error = std::max(res.max_abs_error, abs_err);
    ++res.checked;
  }
  return res;
}

}  // namespace coop
