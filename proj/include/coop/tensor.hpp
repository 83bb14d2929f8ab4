#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coop {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autograd graph. Parents precede children in any
// topological order produced by backward().
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode autograd.
///
/// Tensor is a shared handle: copies alias the same storage and graph node.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode accumulation from this scalar. The graph is released
  /// afterwards; a second call on the same result throws ContractError.
  void backward() const;

  /// Deep copy of the values, detached from any graph.
  Tensor clone(bool requires_grad = false) const;

  /// Identity of the underlying node (two handles alias iff equal).
  const void* id() const { return node_.get(); }

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Number of op invocations executed on this thread since the last reset.
std::uint64_t op_count();
void reset_op_count();

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a + c for a constant (non-differentiable) same-shape vector c.
Tensor add_constant(const Tensor& a, std::span<const double> c);
/// x * gate where gate holds a single element; gradient flows into both.
Tensor broadcast_mul(const Tensor& x, const Tensor& gate);
/// Single element of a tensor as a shape-{1} tensor.
Tensor select(const Tensor& x, std::size_t flat_index);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// out[j] = x[indices[j]] as a rank-1 tensor.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices);
/// out[indices[j]] = values[j]; all other entries hold `fill` and carry no gradient.
Tensor scatter(const Tensor& values, std::span<const std::size_t> indices, std::size_t size,
               double fill);

// ---------------------------------------------------------------------------
// Layers.

/// y = x·w + b with x [B×I], w [I×O], b [O]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of x [B×C×H×W] with k [O×C×Kh×Kw]; optional bias [O].
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// max(0, x); subgradient at 0 is 0.
Tensor relu(const Tensor& x);
/// Spatial mean: [B×C×H×W] -> [B×C].
Tensor global_avg_pool(const Tensor& x);

enum class NormMode { Train, Eval };

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;

  RunningStats() = default;
  explicit RunningStats(std::size_t channels) : mean(channels, 0.0), var(channels, 1.0) {}
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel normalization of [B×C] or [B×C×H×W]. Train mode uses batch
/// statistics and, when `update_stats`, folds them into `stats` with
/// momentum 0.1 (unbiased variance). Eval mode uses `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode, bool update_stats = true);

/// Per-row standardization of [B x C] (biased variance, eps 1e-5), then gamma * xhat + beta.
/// Carries no running statistics, so train and eval behave identically.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// ---------------------------------------------------------------------------
// Probability ops. Rank-1 inputs are treated as a single row.

/// Row softmax of logits / tau (max-subtracted).
Tensor softmax_tau(const Tensor& logits, double tau);
Tensor log_softmax_tau(const Tensor& logits, double tau);

/// Batch mean of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// tau^2 * batch-mean of sum_k p_t (log p_t - log p_s) with p = softmax(. / tau).
/// The teacher is differentiable unless the caller wraps it in stopgrad.
Tensor kl_div_tau(const Tensor& student_logits, const Tensor& teacher_logits, double tau);

/// Value-identical tensor with no gradient path to `x`.
Tensor stopgrad(const Tensor& x);

/// Forward value `hard`, gradient routed unchanged into `soft`. Equal to
/// stopgrad(hard - soft) + soft, but with the forward value exactly `hard`.
Tensor straight_through(std::span<const double> hard, const Tensor& soft);

// ---------------------------------------------------------------------------
// Optimization.

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Classic momentum SGD: v <- momentum*v + grad + wd*theta; theta <- theta - lr*v.
/// Parameters without a gradient are skipped. `velocity` is resized on first use.
void sgd_update(std::span<const Tensor> params, std::vector<std::vector<double>>& velocity,
                double lr, double momentum, double weight_decay);

class Sgd {
 public:
  Sgd() = default;
  Sgd(std::vector<Tensor> params, SgdConfig config);

  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }
  const SgdConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle.

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares backward() gradients of scalar f at x against central differences.
/// Relative error is |a - n| / max(|a|, |n|, 1e-4).
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double eps = 1e-5);

}  // namespace coop
