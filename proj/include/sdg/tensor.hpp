#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdg/errors.hpp"

namespace sdg {

// Shape is a list of positive extents; an empty shape denotes a scalar.
using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<double> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parent) into each parent's grad buffer, reading
  // this node's grad. Empty for leaves.
  std::function<void(Node&)> backprop;

  std::vector<double>& grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense 64-bit real tensor participating in a recorded computation graph.
// Tensors are immutable values after creation; ops return fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op_name() const { return node_->op; }

  std::span<const double> data() const { return node_->value; }
  double item() const;

  // Gradient of the last backward() pass; zeros if the tensor was not reached.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  // In-place value update for optimizer steps on leaf parameters. The tensor
  // must be a leaf; graphs never hold stale copies of leaf values.
  void set_data(std::span<const double> values);

  double at(std::initializer_list<int> idx) const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the differentiable ops reachable from a root, in
// topological order (every op's inputs precede it).
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t op_count() const;
  std::size_t node_count() const { return order_.size(); }
  bool is_topologically_ordered() const;
  std::vector<const char*> op_names() const;

  // Runs the backward sweep; the root's grad must already be seeded.
  void run_backward();

 private:
  std::vector<detail::Node*> order_;  // topological, leaves included
};

// Reverse-mode differentiation of a scalar loss; each requires_grad leaf
// receives its exact gradient (disconnected leaves keep a zero gradient).
void backward(const Tensor& loss);
// Same, seeding d(root) with an arbitrary cotangent instead of 1.
void backward_with_grad(const Tensor& root, std::span<const double> output_grad);

bool& grad_recording();

// Disables graph recording in a scope; ops produce constant leaves.
struct NoGradGuard {
  NoGradGuard() : prev_(grad_recording()) { grad_recording() = false; }
  ~NoGradGuard() { grad_recording() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor silu(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // along dim 1 of NCHW

// ---- convolution and spatial ----
// Cross-correlation of input [N,C,H,W] with kernel [K,C,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);           // bias [C]
Tensor channel_affine(const Tensor& x, const Tensor& s, const Tensor& b);  // s,b [C]
Tensor instance_norm(const Tensor& x, double eps = 1e-5);
Tensor avg_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);
Tensor spatial_mean(const Tensor& x);  // [N,C,H,W] -> [N,C]

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [N,I] x [I,O]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [N,D] x [M,D]^T
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // [N,O] + [O]
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor mean_rows(const Tensor& x);  // [n,D] -> [D]
Tensor stack_rows(const std::vector<Tensor>& rows);  // n x [D] -> [n,D]
Tensor l2_normalize(const Tensor& x);  // [D] or row-wise [N,D]

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);

// Per-channel second moments over HxW positions, normalized by C*H*W.
// G[a,b] = (1/(C*H*W)) sum_{h,w} F[a,h,w] * F[b,h,w], for features [C,H,W].
Tensor gram_matrix(const Tensor& features, bool normalize = true);

Tensor dot(const Tensor& a, const Tensor& b);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// InfoNCE over square logits: mean_i (logsumexp_j l[i,j] - l[i,i]) when
// by_rows, the column-wise analogue otherwise.
Tensor info_nce_loss(const Tensor& logits, bool by_rows);

// Per-channel normalization over spatial positions with a variance floor,
// followed by an affine whose scale and bias are predicted from t_embed.
struct AdaptiveNormParams {
  Tensor scale_weight;  // [D,C]
  Tensor scale_bias;    // [C]
  Tensor bias_weight;   // [D,C]
  Tensor bias_bias;     // [C]
};
Tensor adaptive_norm(const Tensor& x, const Tensor& t_embed,
                     const AdaptiveNormParams& params);

// ---- non-differentiating helpers ----
Tensor clamp_values(const Tensor& x, double lo, double hi);
Tensor detach(const Tensor& x);
bool all_finite(const Tensor& x);

}  // namespace sdg
