#include "sdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace sdg {

using detail::Node;

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_positive_extents(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      fail(ErrorCode::invalid_argument,
           "tensor: extent at dim " + std::to_string(i) + " must be positive, got " +
               std::to_string(shape[i]));
    }
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size()) {
    fail(ErrorCode::invalid_argument,
         std::string(op) + ": rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] != sb[i]) {
      fail(ErrorCode::invalid_argument,
           std::string(op) + ": shape mismatch at dim " + std::to_string(i) + " (" +
               std::to_string(sa[i]) + " vs " + std::to_string(sb[i]) + ")");
    }
  }
}

void check_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.shape().size() != rank) {
    fail(ErrorCode::invalid_argument,
         std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
             shape_str(t.shape()));
  }
}

Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (grad_recording()) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = name;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(node));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_positive_extents(shape);
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<std::size_t>(numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_positive_extents(shape);
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    fail(ErrorCode::invalid_argument,
         "tensor: shape " + shape_str(shape) + " wants " + std::to_string(numel(shape)) +
             " values, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

double Tensor::item() const {
  if (size() != 1) {
    fail(ErrorCode::invalid_argument,
         "item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::set_data(std::span<const double> values) {
  if (!node_->is_leaf) {
    fail(ErrorCode::invalid_argument, "set_data: only leaf tensors may be updated");
  }
  if (values.size() != node_->value.size()) {
    fail(ErrorCode::invalid_argument, "set_data: size mismatch");
  }
  std::copy(values.begin(), values.end(), node_->value.begin());
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    fail(ErrorCode::invalid_argument, "at: index rank mismatch");
  }
  std::int64_t off = 0;
  std::size_t d = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[d]) fail(ErrorCode::invalid_argument, "at: index out of range");
    off = off * s[d] + i;
    ++d;
  }
  return node_->value[static_cast<std::size_t>(off)];
}

// ---------------------------------------------------------------------------
// Graph and backward
// ---------------------------------------------------------------------------

bool& grad_recording() {
  thread_local bool enabled = true;
  return enabled;
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  Node* r = root.node().get();
  if (!r->requires_grad) return g;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      g.order_.push_back(n);
      stack.pop_back();
    }
  }
  return g;
}

std::size_t Graph::op_count() const {
  std::size_t n = 0;
  for (Node* node : order_) n += node->is_leaf ? 0 : 1;
  return n;
}

bool Graph::is_topologically_ordered() const {
  std::unordered_set<const Node*> seen;
  for (const Node* n : order_) {
    for (const auto& p : n->parents) {
      if (p->requires_grad && !seen.count(p.get())) return false;
    }
    seen.insert(n);
  }
  return seen.size() == order_.size();
}

std::vector<const char*> Graph::op_names() const {
  std::vector<const char*> names;
  for (Node* n : order_) {
    if (!n->is_leaf) names.push_back(n->op);
  }
  return names;
}

void Graph::run_backward() {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && !n->grad.empty()) n->backprop(*n);
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    fail(ErrorCode::invalid_argument,
         "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    fail(ErrorCode::invalid_argument, "backward: loss is not part of a recorded graph");
  }
  loss.node()->grad_buf()[0] += 1.0;
  Graph::trace(loss).run_backward();
}

void backward_with_grad(const Tensor& root, std::span<const double> output_grad) {
  if (!root.requires_grad()) {
    fail(ErrorCode::invalid_argument, "backward: root is not part of a recorded graph");
  }
  if (output_grad.size() != static_cast<std::size_t>(root.size())) {
    fail(ErrorCode::invalid_argument, "backward: cotangent size mismatch");
  }
  auto& g = root.node()->grad_buf();
  for (std::size_t i = 0; i < output_grad.size(); ++i) g[i] += output_grad[i];
  Graph::trace(root).run_backward();
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& n) {
    for (int side = 0; side < 2; ++side) {
      Node* p = n.parents[side].get();
      if (!p->requires_grad) continue;
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& n) {
    if (Node* p = n.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (Node* p = n.parents[1].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (Node* p = n.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (Node* p = n.parents[1].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return make_op("scale", x.shape(), std::move(out), {x.node()}, [c](Node& n) {
    if (Node* p = n.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c;
    }
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
  return make_op("add_scalar", x.shape(), std::move(out), {x.node()}, [](Node& n) {
    if (Node* p = n.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor silu(const Tensor& x) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
  return make_op("silu", x.shape(), std::move(out), {x.node()}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    const auto& xv = p->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = stable_sigmoid(xv[i]);
      g[i] += n.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_positive_extents(new_shape);
  if (numel(new_shape) != x.size()) {
    fail(ErrorCode::invalid_argument,
         "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  std::vector<double> out(x.node()->value);
  return make_op("reshape", std::move(new_shape), std::move(out), {x.node()}, [](Node& n) {
    if (Node* p = n.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank("concat_channels", a, 4);
  check_rank("concat_channels", b, 4);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  for (std::size_t d : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
    if (sa[d] != sb[d]) {
      fail(ErrorCode::invalid_argument,
           "concat_channels: shape mismatch at dim " + std::to_string(d) + " (" +
               std::to_string(sa[d]) + " vs " + std::to_string(sb[d]) + ")");
    }
  }
  const int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(N) * (Ca + Cb) * hw);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (int n = 0; n < N; ++n) {
    double* dst = out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * hw;
    const double* pa = av.data() + static_cast<std::size_t>(n) * Ca * hw;
    const double* pb = bv.data() + static_cast<std::size_t>(n) * Cb * hw;
    std::copy(pa, pa + static_cast<std::size_t>(Ca) * hw, dst);
    std::copy(pb, pb + static_cast<std::size_t>(Cb) * hw, dst + static_cast<std::size_t>(Ca) * hw);
  }
  return make_op("concat_channels", {N, Ca + Cb, H, W}, std::move(out),
                 {a.node(), b.node()}, [N, Ca, Cb, hw](Node& n) {
                   for (int node_idx = 0; node_idx < 2; ++node_idx) {
                     Node* p = n.parents[node_idx].get();
                     if (!p->requires_grad) continue;
                     auto& g = p->grad_buf();
                     const int C = node_idx == 0 ? Ca : Cb;
                     const std::size_t off = node_idx == 0 ? 0 : static_cast<std::size_t>(Ca) * hw;
                     for (int b = 0; b < N; ++b) {
                       const double* src =
                           n.grad.data() + (static_cast<std::size_t>(b) * (Ca + Cb)) * hw + off;
                       double* dst = g.data() + static_cast<std::size_t>(b) * C * hw;
                       for (std::size_t i = 0; i < static_cast<std::size_t>(C) * hw; ++i)
                         dst[i] += src[i];
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Convolution and spatial ops
// ---------------------------------------------------------------------------

namespace {

// Gathers padded input windows into a [C*kh*kw, OH*OW] matrix.
void im2col(const double* input, int C, int H, int W, int kh, int kw, int stride,
            int pad, int OH, int OW, double* col) {
  const int S = OH * OW;
  for (int c = 0; c < C; ++c) {
    const double* plane = input + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = col + (static_cast<std::size_t>(c) * kh * kw +
                             static_cast<std::size_t>(i) * kw + j) *
                                S;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride + i - pad;
          double* out_row = row + static_cast<std::size_t>(oy) * OW;
          if (y < 0 || y >= H) {
            std::fill(out_row, out_row + OW, 0.0);
            continue;
          }
          const double* in_row = plane + static_cast<std::size_t>(y) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int x = ox * stride + j - pad;
            out_row[ox] = (x >= 0 && x < W) ? in_row[x] : 0.0;
          }
        }
      }
    }
  }
}

// Scatters a [C*kh*kw, OH*OW] gradient matrix back onto the input layout.
void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int OH, int OW, double* input_grad) {
  const int S = OH * OW;
  for (int c = 0; c < C; ++c) {
    double* plane = input_grad + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row = col + (static_cast<std::size_t>(c) * kh * kw +
                                   static_cast<std::size_t>(i) * kw + j) *
                                      S;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride + i - pad;
          if (y < 0 || y >= H) continue;
          const double* src_row = row + static_cast<std::size_t>(oy) * OW;
          double* dst_row = plane + static_cast<std::size_t>(y) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int x = ox * stride + j - pad;
            if (x >= 0 && x < W) dst_row[x] += src_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  check_rank("conv2d", input, 4);
  check_rank("conv2d", kernel, 4);
  if (stride < 1) {
    fail(ErrorCode::invalid_argument, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  }
  if (padding < 0) {
    fail(ErrorCode::invalid_argument, "conv2d: padding must be >= 0");
  }
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const int K = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != C) {
    fail(ErrorCode::invalid_argument,
         "conv2d: kernel channel extent (dim 1) is " + std::to_string(ks[1]) +
             " but input has " + std::to_string(C) + " channels");
  }
  if (kh > H + 2 * padding) {
    fail(ErrorCode::invalid_argument,
         "conv2d: kernel height " + std::to_string(kh) + " exceeds padded input height " +
             std::to_string(H + 2 * padding));
  }
  if (kw > W + 2 * padding) {
    fail(ErrorCode::invalid_argument,
         "conv2d: kernel width " + std::to_string(kw) + " exceeds padded input width " +
             std::to_string(W + 2 * padding));
  }
  const int OH = (H + 2 * padding - kh) / stride + 1;
  const int OW = (W + 2 * padding - kw) / stride + 1;
  const int R = C * kh * kw;
  const int S = OH * OW;

  std::vector<double> out(static_cast<std::size_t>(N) * K * S, 0.0);
  std::vector<double> col(static_cast<std::size_t>(R) * S);
  const auto& iv = input.node()->value;
  const auto& kv = kernel.node()->value;
  for (int n = 0; n < N; ++n) {
    im2col(iv.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, kh, kw, stride,
           padding, OH, OW, col.data());
    for (int k = 0; k < K; ++k) {
      double* dst = out.data() + (static_cast<std::size_t>(n) * K + k) * S;
      const double* wrow = kv.data() + static_cast<std::size_t>(k) * R;
      for (int r = 0; r < R; ++r) {
        const double w = wrow[r];
        const double* src = col.data() + static_cast<std::size_t>(r) * S;
        for (int s = 0; s < S; ++s) dst[s] += w * src[s];
      }
    }
  }

  auto bp = [N, C, H, W, K, kh, kw, stride, padding, OH, OW, R, S](Node& nd) {
    Node* in = nd.parents[0].get();
    Node* ker = nd.parents[1].get();
    std::vector<double> col(static_cast<std::size_t>(R) * S);
    std::vector<double> dcol;
    if (in->requires_grad) dcol.assign(static_cast<std::size_t>(R) * S, 0.0);
    for (int n = 0; n < N; ++n) {
      const double* dout = nd.grad.data() + static_cast<std::size_t>(n) * K * S;
      if (ker->requires_grad) {
        im2col(in->value.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, kh,
               kw, stride, padding, OH, OW, col.data());
        auto& kg = ker->grad_buf();
        for (int k = 0; k < K; ++k) {
          const double* drow = dout + static_cast<std::size_t>(k) * S;
          double* kgrow = kg.data() + static_cast<std::size_t>(k) * R;
          for (int r = 0; r < R; ++r) {
            const double* src = col.data() + static_cast<std::size_t>(r) * S;
            double acc = 0.0;
            for (int s = 0; s < S; ++s) acc += drow[s] * src[s];
            kgrow[r] += acc;
          }
        }
      }
      if (in->requires_grad) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        for (int k = 0; k < K; ++k) {
          const double* drow = dout + static_cast<std::size_t>(k) * S;
          const double* wrow = ker->value.data() + static_cast<std::size_t>(k) * R;
          for (int r = 0; r < R; ++r) {
            const double w = wrow[r];
            double* dst = dcol.data() + static_cast<std::size_t>(r) * S;
            for (int s = 0; s < S; ++s) dst[s] += w * drow[s];
          }
        }
        col2im_add(dcol.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                   in->grad_buf().data() + static_cast<std::size_t>(n) * C * H * W);
      }
    }
  };
  return make_op("conv2d", {N, K, OH, OW}, std::move(out), {input.node(), kernel.node()},
                 std::move(bp));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  check_rank("add_channel_bias", x, 4);
  check_rank("add_channel_bias", bias, 1);
  const Shape& s = x.shape();
  const int N = s[0], C = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  if (bias.shape()[0] != C) {
    fail(ErrorCode::invalid_argument,
         "add_channel_bias: bias extent " + std::to_string(bias.shape()[0]) +
             " does not match channel extent " + std::to_string(C));
  }
  const auto& xv = x.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> out(xv.size());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
      const double b = bv[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = xv[base + i] + b;
    }
  }
  return make_op("add_channel_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                 [N, C, hw](Node& nd) {
                   if (Node* p = nd.parents[0].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                   }
                   if (Node* p = nd.parents[1].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (int n = 0; n < N; ++n) {
                       for (int c = 0; c < C; ++c) {
                         const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                         double acc = 0.0;
                         for (std::size_t i = 0; i < hw; ++i) acc += nd.grad[base + i];
                         g[static_cast<std::size_t>(c)] += acc;
                       }
                     }
                   }
                 });
}

Tensor channel_affine(const Tensor& x, const Tensor& s, const Tensor& b) {
  check_rank("channel_affine", x, 4);
  check_rank("channel_affine", s, 1);
  check_rank("channel_affine", b, 1);
  const Shape& xs = x.shape();
  const int N = xs[0], C = xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  if (s.shape()[0] != C || b.shape()[0] != C) {
    fail(ErrorCode::invalid_argument,
         "channel_affine: affine extents (" + std::to_string(s.shape()[0]) + "," +
             std::to_string(b.shape()[0]) + ") do not match channel extent " +
             std::to_string(C));
  }
  const auto& xv = x.node()->value;
  const auto& sv = s.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(xv.size());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
      const double sc = sv[static_cast<std::size_t>(c)];
      const double bc = bv[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = xv[base + i] * sc + bc;
    }
  }
  return make_op(
      "channel_affine", x.shape(), std::move(out), {x.node(), s.node(), b.node()},
      [N, C, hw](Node& nd) {
        Node* px = nd.parents[0].get();
        Node* ps = nd.parents[1].get();
        Node* pb = nd.parents[2].get();
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
            const double sc = ps->value[static_cast<std::size_t>(c)];
            if (px->requires_grad) {
              auto& g = px->grad_buf();
              for (std::size_t i = 0; i < hw; ++i) g[base + i] += nd.grad[base + i] * sc;
            }
            if (ps->requires_grad) {
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i)
                acc += nd.grad[base + i] * px->value[base + i];
              ps->grad_buf()[static_cast<std::size_t>(c)] += acc;
            }
            if (pb->requires_grad) {
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i) acc += nd.grad[base + i];
              pb->grad_buf()[static_cast<std::size_t>(c)] += acc;
            }
          }
        }
      });
}

Tensor instance_norm(const Tensor& x, double eps) {
  check_rank("instance_norm", x, 4);
  const Shape& s = x.shape();
  const int N = s[0], C = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(static_cast<std::size_t>(N) * C);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
      double m = 0.0;
      for (std::size_t i = 0; i < hw; ++i) m += xv[base + i];
      m /= static_cast<double>(hw);
      double v = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = xv[base + i] - m;
        v += d * d;
      }
      v /= static_cast<double>(hw);
      const double is = 1.0 / std::sqrt(v + eps);
      inv_std[static_cast<std::size_t>(n) * C + c] = is;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = (xv[base + i] - m) * is;
    }
  }
  return make_op("instance_norm", x.shape(), std::move(out), {x.node()},
                 [N, C, hw, inv_std](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (int n = 0; n < N; ++n) {
                     for (int c = 0; c < C; ++c) {
                       const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                       const double is = inv_std[static_cast<std::size_t>(n) * C + c];
                       double mean_dy = 0.0, mean_dy_y = 0.0;
                       for (std::size_t i = 0; i < hw; ++i) {
                         mean_dy += nd.grad[base + i];
                         mean_dy_y += nd.grad[base + i] * nd.value[base + i];
                       }
                       mean_dy /= static_cast<double>(hw);
                       mean_dy_y /= static_cast<double>(hw);
                       for (std::size_t i = 0; i < hw; ++i) {
                         g[base + i] += is * (nd.grad[base + i] - mean_dy -
                                              nd.value[base + i] * mean_dy_y);
                       }
                     }
                   }
                 });
}

Tensor avg_pool2(const Tensor& x) {
  check_rank("avg_pool2", x, 4);
  const Shape& s = x.shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 2 != 0) {
    fail(ErrorCode::invalid_argument,
         "avg_pool2: height extent " + std::to_string(H) + " must be even");
  }
  if (W % 2 != 0) {
    fail(ErrorCode::invalid_argument,
         "avg_pool2: width extent " + std::to_string(W) + " must be even");
  }
  const int OH = H / 2, OW = W / 2;
  const auto& xv = x.node()->value;
  std::vector<double> out(static_cast<std::size_t>(N) * C * OH * OW);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data() + static_cast<std::size_t>(nc) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(nc) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const double* p = src + (2 * oy) * W + 2 * ox;
        dst[oy * OW + ox] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
    }
  }
  return make_op("avg_pool2", {N, C, OH, OW}, std::move(out), {x.node()},
                 [N, C, H, W, OH, OW](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (int nc = 0; nc < N * C; ++nc) {
                     const double* dsrc = nd.grad.data() + static_cast<std::size_t>(nc) * OH * OW;
                     double* dst = g.data() + static_cast<std::size_t>(nc) * H * W;
                     for (int oy = 0; oy < OH; ++oy) {
                       for (int ox = 0; ox < OW; ++ox) {
                         const double d = 0.25 * dsrc[oy * OW + ox];
                         double* q = dst + (2 * oy) * W + 2 * ox;
                         q[0] += d;
                         q[1] += d;
                         q[W] += d;
                         q[W + 1] += d;
                       }
                     }
                   }
                 });
}

Tensor upsample2(const Tensor& x) {
  check_rank("upsample2", x, 4);
  const Shape& s = x.shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  const int OH = H * 2, OW = W * 2;
  const auto& xv = x.node()->value;
  std::vector<double> out(static_cast<std::size_t>(N) * C * OH * OW);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data() + static_cast<std::size_t>(nc) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(nc) * OH * OW;
    for (int y = 0; y < H; ++y) {
      for (int xcol = 0; xcol < W; ++xcol) {
        const double v = src[y * W + xcol];
        double* q = dst + (2 * y) * OW + 2 * xcol;
        q[0] = v;
        q[1] = v;
        q[OW] = v;
        q[OW + 1] = v;
      }
    }
  }
  return make_op("upsample2", {N, C, OH, OW}, std::move(out), {x.node()},
                 [N, C, H, W, OW](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (int nc = 0; nc < N * C; ++nc) {
                     const double* dsrc =
                         nd.grad.data() + static_cast<std::size_t>(nc) * (H * 2) * OW;
                     double* dst = g.data() + static_cast<std::size_t>(nc) * H * W;
                     for (int y = 0; y < H; ++y) {
                       for (int xcol = 0; xcol < W; ++xcol) {
                         const double* q = dsrc + (2 * y) * OW + 2 * xcol;
                         dst[y * W + xcol] += q[0] + q[1] + q[OW] + q[OW + 1];
                       }
                     }
                   }
                 });
}

Tensor spatial_mean(const Tensor& x) {
  check_rank("spatial_mean", x, 4);
  const Shape& s = x.shape();
  const int N = s[0], C = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  const auto& xv = x.node()->value;
  std::vector<double> out(static_cast<std::size_t>(N) * C);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data() + static_cast<std::size_t>(nc) * hw;
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
    out[static_cast<std::size_t>(nc)] = acc / static_cast<double>(hw);
  }
  return make_op("spatial_mean", {N, C}, std::move(out), {x.node()}, [N, C, hw](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    for (int nc = 0; nc < N * C; ++nc) {
      const double d = nd.grad[static_cast<std::size_t>(nc)] / static_cast<double>(hw);
      double* dst = g.data() + static_cast<std::size_t>(nc) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += d;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  const int N = a.shape()[0], I = a.shape()[1];
  const int I2 = b.shape()[0], O = b.shape()[1];
  if (I != I2) {
    fail(ErrorCode::invalid_argument,
         "matmul: inner extents differ (" + std::to_string(I) + " vs " + std::to_string(I2) + ")");
  }
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(static_cast<std::size_t>(N) * O, 0.0);
  for (int n = 0; n < N; ++n) {
    double* dst = out.data() + static_cast<std::size_t>(n) * O;
    for (int i = 0; i < I; ++i) {
      const double av_ni = av[static_cast<std::size_t>(n) * I + i];
      const double* brow = bv.data() + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) dst[o] += av_ni * brow[o];
    }
  }
  return make_op("matmul", {N, O}, std::move(out), {a.node(), b.node()}, [N, I, O](Node& nd) {
    Node* pa = nd.parents[0].get();
    Node* pb = nd.parents[1].get();
    if (pa->requires_grad) {
      auto& g = pa->grad_buf();
      for (int n = 0; n < N; ++n) {
        const double* drow = nd.grad.data() + static_cast<std::size_t>(n) * O;
        for (int i = 0; i < I; ++i) {
          const double* brow = pb->value.data() + static_cast<std::size_t>(i) * O;
          double acc = 0.0;
          for (int o = 0; o < O; ++o) acc += drow[o] * brow[o];
          g[static_cast<std::size_t>(n) * I + i] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buf();
      for (int n = 0; n < N; ++n) {
        const double* drow = nd.grad.data() + static_cast<std::size_t>(n) * O;
        for (int i = 0; i < I; ++i) {
          const double av_ni = pa->value[static_cast<std::size_t>(n) * I + i];
          double* grow = g.data() + static_cast<std::size_t>(i) * O;
          for (int o = 0; o < O; ++o) grow[o] += av_ni * drow[o];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank("matmul_nt", a, 2);
  check_rank("matmul_nt", b, 2);
  const int N = a.shape()[0], D = a.shape()[1];
  const int M = b.shape()[0];
  if (b.shape()[1] != D) {
    fail(ErrorCode::invalid_argument,
         "matmul_nt: inner extents differ (" + std::to_string(D) + " vs " +
             std::to_string(b.shape()[1]) + ")");
  }
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(static_cast<std::size_t>(N) * M);
  for (int n = 0; n < N; ++n) {
    const double* arow = av.data() + static_cast<std::size_t>(n) * D;
    for (int m = 0; m < M; ++m) {
      const double* brow = bv.data() + static_cast<std::size_t>(m) * D;
      double acc = 0.0;
      for (int d = 0; d < D; ++d) acc += arow[d] * brow[d];
      out[static_cast<std::size_t>(n) * M + m] = acc;
    }
  }
  return make_op("matmul_nt", {N, M}, std::move(out), {a.node(), b.node()}, [N, D, M](Node& nd) {
    Node* pa = nd.parents[0].get();
    Node* pb = nd.parents[1].get();
    if (pa->requires_grad) {
      auto& g = pa->grad_buf();
      for (int n = 0; n < N; ++n) {
        const double* drow = nd.grad.data() + static_cast<std::size_t>(n) * M;
        double* grow = g.data() + static_cast<std::size_t>(n) * D;
        for (int m = 0; m < M; ++m) {
          const double d = drow[m];
          const double* brow = pb->value.data() + static_cast<std::size_t>(m) * D;
          for (int k = 0; k < D; ++k) grow[k] += d * brow[k];
        }
      }
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buf();
      for (int n = 0; n < N; ++n) {
        const double* drow = nd.grad.data() + static_cast<std::size_t>(n) * M;
        const double* arow = pa->value.data() + static_cast<std::size_t>(n) * D;
        for (int m = 0; m < M; ++m) {
          const double d = drow[m];
          double* grow = g.data() + static_cast<std::size_t>(m) * D;
          for (int k = 0; k < D; ++k) grow[k] += d * arow[k];
        }
      }
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  check_rank("add_row_bias", x, 2);
  check_rank("add_row_bias", bias, 1);
  const int N = x.shape()[0], O = x.shape()[1];
  if (bias.shape()[0] != O) {
    fail(ErrorCode::invalid_argument,
         "add_row_bias: bias extent " + std::to_string(bias.shape()[0]) +
             " does not match row extent " + std::to_string(O));
  }
  const auto& xv = x.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> out(xv.size());
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      out[static_cast<std::size_t>(n) * O + o] =
          xv[static_cast<std::size_t>(n) * O + o] + bv[static_cast<std::size_t>(o)];
    }
  }
  return make_op("add_row_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                 [N, O](Node& nd) {
                   if (Node* p = nd.parents[0].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                   }
                   if (Node* p = nd.parents[1].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (int n = 0; n < N; ++n)
                       for (int o = 0; o < O; ++o)
                         g[static_cast<std::size_t>(o)] +=
                             nd.grad[static_cast<std::size_t>(n) * O + o];
                   }
                 });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_rank("embedding_rows", table, 2);
  if (ids.empty()) {
    fail(ErrorCode::invalid_argument, "embedding_rows: empty id sequence");
  }
  const int V = table.shape()[0], D = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || id >= V) {
      fail(ErrorCode::invalid_argument,
           "embedding_rows: id " + std::to_string(id) + " out of range [0," +
               std::to_string(V) + ")");
    }
  }
  const auto& tv = table.node()->value;
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(n) * D);
  for (int i = 0; i < n; ++i) {
    const double* src = tv.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * D;
    std::copy(src, src + D, out.data() + static_cast<std::size_t>(i) * D);
  }
  return make_op("embedding_rows", {n, D}, std::move(out), {table.node()},
                 [ids, D](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     const double* src = nd.grad.data() + i * static_cast<std::size_t>(D);
                     double* dst =
                         g.data() + static_cast<std::size_t>(ids[i]) * static_cast<std::size_t>(D);
                     for (int d = 0; d < D; ++d) dst[d] += src[d];
                   }
                 });
}

Tensor mean_rows(const Tensor& x) {
  check_rank("mean_rows", x, 2);
  const int n = x.shape()[0], D = x.shape()[1];
  const auto& xv = x.node()->value;
  std::vector<double> out(static_cast<std::size_t>(D), 0.0);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(d)] += xv[static_cast<std::size_t>(i) * D + d];
  for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(d)] /= static_cast<double>(n);
  return make_op("mean_rows", {D}, std::move(out), {x.node()}, [n, D](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < D; ++d)
        g[static_cast<std::size_t>(i) * D + d] +=
            nd.grad[static_cast<std::size_t>(d)] / static_cast<double>(n);
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) {
    fail(ErrorCode::invalid_argument, "stack_rows: empty row list");
  }
  const int D = rows[0].shape().empty() ? 1 : rows[0].shape()[0];
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(rows.size());
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<std::size_t>(D));
  for (const Tensor& r : rows) {
    check_rank("stack_rows", r, 1);
    if (r.shape()[0] != D) {
      fail(ErrorCode::invalid_argument,
           "stack_rows: row extents differ (" + std::to_string(D) + " vs " +
               std::to_string(r.shape()[0]) + ")");
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(r.node());
  }
  const int n = static_cast<int>(rows.size());
  return make_op("stack_rows", {n, D}, std::move(out), std::move(parents), [D](Node& nd) {
    for (std::size_t r = 0; r < nd.parents.size(); ++r) {
      Node* p = nd.parents[r].get();
      if (!p->requires_grad) continue;
      auto& g = p->grad_buf();
      const double* src = nd.grad.data() + r * static_cast<std::size_t>(D);
      for (int d = 0; d < D; ++d) g[static_cast<std::size_t>(d)] += src[d];
    }
  });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t rank = x.shape().size();
  if (rank != 1 && rank != 2) {
    fail(ErrorCode::invalid_argument,
         "l2_normalize: expected rank 1 or 2, got " + shape_str(x.shape()));
  }
  const int rows = rank == 2 ? x.shape()[0] : 1;
  const int D = rank == 2 ? x.shape()[1] : x.shape()[0];
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  std::vector<double> norms(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* src = xv.data() + static_cast<std::size_t>(r) * D;
    double acc = 0.0;
    for (int d = 0; d < D; ++d) acc += src[d] * src[d];
    const double norm = std::sqrt(acc);
    if (norm <= 1e-12) {
      fail(ErrorCode::invalid_argument, "l2_normalize: degenerate embedding (zero norm)");
    }
    norms[static_cast<std::size_t>(r)] = norm;
    double* dst = out.data() + static_cast<std::size_t>(r) * D;
    for (int d = 0; d < D; ++d) dst[d] = src[d] / norm;
  }
  return make_op("l2_normalize", x.shape(), std::move(out), {x.node()},
                 [rows, D, norms](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (int r = 0; r < rows; ++r) {
                     const std::size_t base = static_cast<std::size_t>(r) * D;
                     double y_dot_dy = 0.0;
                     for (int d = 0; d < D; ++d)
                       y_dot_dy += nd.value[base + d] * nd.grad[base + d];
                     const double inv = 1.0 / norms[static_cast<std::size_t>(r)];
                     for (int d = 0; d < D; ++d) {
                       g[base + d] +=
                           inv * (nd.grad[base + d] - nd.value[base + d] * y_dot_dy);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto& xv = x.node()->value;
  double acc = 0.0;
  for (double v : xv) acc += v;
  return make_op("sum", {}, {acc}, {x.node()}, [](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    const double d = nd.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Tensor mean(const Tensor& x) {
  const auto& xv = x.node()->value;
  double acc = 0.0;
  for (double v : xv) acc += v;
  const double inv = 1.0 / static_cast<double>(xv.size());
  return make_op("mean", {}, {acc * inv}, {x.node()}, [inv](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    const double d = nd.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Tensor sum_squares(const Tensor& x) {
  const auto& xv = x.node()->value;
  double acc = 0.0;
  for (double v : xv) acc += v * v;
  return make_op("sum_squares", {}, {acc}, {x.node()}, [](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    auto& g = p->grad_buf();
    const double d = nd.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * 2.0 * p->value[i];
  });
}

Tensor gram_matrix(const Tensor& features, bool normalize) {
  check_rank("gram_matrix", features, 3);
  const int C = features.shape()[0];
  const std::size_t hw =
      static_cast<std::size_t>(features.shape()[1]) * features.shape()[2];
  const double norm =
      normalize ? 1.0 / (static_cast<double>(C) * static_cast<double>(hw)) : 1.0;
  const auto& fv = features.node()->value;
  std::vector<double> out(static_cast<std::size_t>(C) * C);
  for (int a = 0; a < C; ++a) {
    const double* fa = fv.data() + static_cast<std::size_t>(a) * hw;
    for (int b = a; b < C; ++b) {
      const double* fb = fv.data() + static_cast<std::size_t>(b) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += fa[i] * fb[i];
      const double g = acc * norm;
      out[static_cast<std::size_t>(a) * C + b] = g;
      out[static_cast<std::size_t>(b) * C + a] = g;
    }
  }
  return make_op("gram_matrix", {C, C}, std::move(out), {features.node()},
                 [C, hw, norm](Node& nd) {
                   Node* p = nd.parents[0].get();
                   if (!p->requires_grad) return;
                   auto& g = p->grad_buf();
                   for (int a = 0; a < C; ++a) {
                     double* dst = g.data() + static_cast<std::size_t>(a) * hw;
                     for (int b = 0; b < C; ++b) {
                       const double w = (nd.grad[static_cast<std::size_t>(a) * C + b] +
                                         nd.grad[static_cast<std::size_t>(b) * C + a]) *
                                        norm;
                       if (w == 0.0) continue;
                       const double* fb = p->value.data() + static_cast<std::size_t>(b) * hw;
                       for (std::size_t i = 0; i < hw; ++i) dst[i] += w * fb[i];
                     }
                   }
                 });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_rank("dot", a, 1);
  check_rank("dot", b, 1);
  check_same_shape("dot", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return make_op("dot", {}, {acc}, {a.node(), b.node()}, [](Node& nd) {
    const double d = nd.grad[0];
    if (Node* p = nd.parents[0].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      const auto& bv = nd.parents[1]->value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * bv[i];
    }
    if (Node* p = nd.parents[1].get(); p->requires_grad) {
      auto& g = p->grad_buf();
      const auto& av = nd.parents[0]->value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * av[i];
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  check_rank("cosine_similarity", a, 1);
  check_rank("cosine_similarity", b, 1);
  check_same_shape("cosine_similarity", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= 1e-12 || nb <= 1e-12) {
    fail(ErrorCode::invalid_argument,
         "cosine_similarity: degenerate embedding (zero norm)");
  }
  const double s = ab / (na * nb);
  return make_op("cosine_similarity", {}, {s}, {a.node(), b.node()},
                 [na, nb, s](Node& nd) {
                   const double d = nd.grad[0];
                   const auto& av = nd.parents[0]->value;
                   const auto& bv = nd.parents[1]->value;
                   if (Node* p = nd.parents[0].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += d * (bv[i] / (na * nb) - s * av[i] / (na * na));
                   }
                   if (Node* p = nd.parents[1].get(); p->requires_grad) {
                     auto& g = p->grad_buf();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += d * (av[i] / (na * nb) - s * bv[i] / (nb * nb));
                   }
                 });
}

Tensor info_nce_loss(const Tensor& logits, bool by_rows) {
  check_rank("info_nce_loss", logits, 2);
  const int N = logits.shape()[0];
  if (logits.shape()[1] != N) {
    fail(ErrorCode::invalid_argument,
         "info_nce_loss: logits must be square, got " + shape_str(logits.shape()));
  }
  const auto& lv = logits.node()->value;
  auto at = [&](int i, int j) {
    return by_rows ? lv[static_cast<std::size_t>(i) * N + j]
                   : lv[static_cast<std::size_t>(j) * N + i];
  };
  double loss = 0.0;
  for (int i = 0; i < N; ++i) {
    double mx = at(i, 0);
    for (int j = 1; j < N; ++j) mx = std::max(mx, at(i, j));
    double acc = 0.0;
    for (int j = 0; j < N; ++j) acc += std::exp(at(i, j) - mx);
    loss += mx + std::log(acc) - at(i, i);
  }
  loss /= static_cast<double>(N);
  return make_op("info_nce_loss", {}, {loss}, {logits.node()}, [N, by_rows](Node& nd) {
    Node* p = nd.parents[0].get();
    if (!p->requires_grad) return;
    const double d = nd.grad[0] / static_cast<double>(N);
    auto& g = p->grad_buf();
    const auto& lv = p->value;
    auto at = [&](int i, int j) {
      return by_rows ? lv[static_cast<std::size_t>(i) * N + j]
                     : lv[static_cast<std::size_t>(j) * N + i];
    };
    auto gref = [&](int i, int j) -> double& {
      return by_rows ? g[static_cast<std::size_t>(i) * N + j]
                     : g[static_cast<std::size_t>(j) * N + i];
    };
    std::vector<double> p_row(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      double mx = at(i, 0);
      for (int j = 1; j < N; ++j) mx = std::max(mx, at(i, j));
      double acc = 0.0;
      for (int j = 0; j < N; ++j) {
        p_row[static_cast<std::size_t>(j)] = std::exp(at(i, j) - mx);
        acc += p_row[static_cast<std::size_t>(j)];
      }
      for (int j = 0; j < N; ++j) {
        const double soft = p_row[static_cast<std::size_t>(j)] / acc;
        gref(i, j) += d * (soft - (i == j ? 1.0 : 0.0));
      }
    }
  });
}

Tensor adaptive_norm(const Tensor& x, const Tensor& t_embed,
                     const AdaptiveNormParams& params) {
  check_rank("adaptive_norm", x, 4);
  check_rank("adaptive_norm", t_embed, 1);
  const int D = t_embed.shape()[0];
  const int C = x.shape()[1];
  if (params.scale_weight.shape() != Shape{D, C} ||
      params.bias_weight.shape() != Shape{D, C}) {
    fail(ErrorCode::invalid_argument,
         "adaptive_norm: affine weight shapes must be [" + std::to_string(D) + "," +
             std::to_string(C) + "]");
  }
  Tensor t_row = reshape(t_embed, {1, D});
  Tensor s = reshape(add_row_bias(matmul(t_row, params.scale_weight), params.scale_bias), {C});
  Tensor b = reshape(add_row_bias(matmul(t_row, params.bias_weight), params.bias_bias), {C});
  return channel_affine(instance_norm(x), s, b);
}

// ---------------------------------------------------------------------------
// Non-differentiating helpers
// ---------------------------------------------------------------------------

Tensor clamp_values(const Tensor& x, double lo, double hi) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  return Tensor::from_data(x.shape(), std::move(out));
}

Tensor detach(const Tensor& x) {
  return Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace sdg
