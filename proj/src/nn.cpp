#include "sdg/nn.hpp"

#include <algorithm>
#include <cmath>

namespace sdg {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) {
    fail(ErrorCode::invalid_argument, "params: duplicate parameter name '" + name + "'");
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    fail(ErrorCode::invalid_argument, "params: unknown parameter '" + name + "'");
  }
  return entries_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += static_cast<std::size_t>(t.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParamStore::round_trip_f32() {
  for (auto& [name, t] : entries_) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    t.set_data(v);
  }
}

std::vector<std::string> ParamStore::copy_matching_from(const ParamStore& src) {
  std::vector<std::string> copied;
  for (auto& [name, t] : entries_) {
    if (!src.contains(name)) continue;
    const Tensor& s = src.get(name);
    if (s.shape() != t.shape()) {
      fail(ErrorCode::invalid_argument,
           "params: shape mismatch copying '" + name + "': " + shape_str(s.shape()) +
               " vs " + shape_str(t.shape()));
    }
    t.set_data(s.data());
    copied.push_back(name);
  }
  return copied;
}

void Adam::step(ParamStore& params, double clip_norm) {
  double factor = 1.0;
  if (clip_norm > 0.0) {
    const double norm = global_grad_norm(params);
    if (norm > clip_norm) factor = clip_norm / norm;
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (auto& [name, t] : params.mutable_entries()) {
    const std::vector<double> g = t.grad();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    std::vector<double> p(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i] * factor;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    t.set_data(p);
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("opt.t", Tensor::scalar(static_cast<double>(step_count_)));
  std::vector<std::string> names;
  names.reserve(m_.size());
  for (const auto& [name, m] : m_) names.push_back(name);
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const auto& m = m_.at(name);
    out.emplace_back("opt.m." + name, Tensor::from_data({static_cast<int>(m.size())}, m));
    const auto& v = v_.at(name);
    out.emplace_back("opt.v." + name, Tensor::from_data({static_cast<int>(v.size())}, v));
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& entries) {
  m_.clear();
  v_.clear();
  step_count_ = 0;
  for (const auto& [name, t] : entries) {
    if (name == "opt.t") {
      step_count_ = static_cast<std::int64_t>(t.item());
    } else if (name.rfind("opt.m.", 0) == 0) {
      m_[name.substr(6)] = std::vector<double>(t.data().begin(), t.data().end());
    } else if (name.rfind("opt.v.", 0) == 0) {
      v_[name.substr(6)] = std::vector<double>(t.data().begin(), t.data().end());
    }
  }
}

void Adam::round_trip_f32() {
  for (auto* table : {&m_, &v_}) {
    for (auto& [name, vec] : *table) {
      for (double& x : vec) x = static_cast<double>(static_cast<float>(x));
    }
  }
}

double global_grad_norm(const ParamStore& params) {
  double acc = 0.0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

// ---- layers ----

namespace {

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

}  // namespace

Conv2dLayer Conv2dLayer::create(ParamStore& params, const std::string& name, int in_ch,
                                int out_ch, int ksize, int stride, int padding, Rng& rng,
                                bool zero_init) {
  Conv2dLayer layer;
  const double stddev =
      zero_init ? 0.0 : std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
  layer.kernel = params.add(name + ".kernel",
                            zero_init ? Tensor::zeros({out_ch, in_ch, ksize, ksize}, true)
                                      : init_normal({out_ch, in_ch, ksize, ksize}, stddev, rng));
  layer.bias = params.add(name + ".bias", Tensor::zeros({out_ch}, true));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
  return add_channel_bias(conv2d(x, kernel, stride, padding), bias);
}

LinearLayer LinearLayer::create(ParamStore& params, const std::string& name, int in_dim,
                                int out_dim, Rng& rng, bool zero_init) {
  LinearLayer layer;
  layer.weight = params.add(
      name + ".weight", zero_init ? Tensor::zeros({in_dim, out_dim}, true)
                                  : init_normal({in_dim, out_dim},
                                                std::sqrt(1.0 / static_cast<double>(in_dim)), rng));
  layer.bias = params.add(name + ".bias", Tensor::zeros({out_dim}, true));
  return layer;
}

Tensor LinearLayer::forward(const Tensor& x) const {
  return add_row_bias(matmul(x, weight), bias);
}

FiLMLayer FiLMLayer::create(ParamStore& params, const std::string& name, int t_dim,
                            int channels, Rng& rng) {
  FiLMLayer layer;
  layer.to_scale = LinearLayer::create(params, name + ".scale", t_dim, channels, rng,
                                       /*zero_init=*/true);
  layer.to_bias = LinearLayer::create(params, name + ".bias", t_dim, channels, rng,
                                      /*zero_init=*/true);
  return layer;
}

Tensor FiLMLayer::forward(const Tensor& x, const Tensor& t_vec) const {
  const int d = t_vec.shape()[0];
  const int c = x.shape()[1];
  Tensor row = reshape(t_vec, {1, d});
  Tensor s = add_scalar(reshape(to_scale.forward(row), {c}), 1.0);
  Tensor b = reshape(to_bias.forward(row), {c});
  return channel_affine(x, s, b);
}

StaticNormLayer StaticNormLayer::create(ParamStore& params, const std::string& name,
                                        int channels) {
  StaticNormLayer layer;
  layer.gamma = params.add(name + ".gamma", Tensor::full({channels}, 1.0, true));
  layer.beta = params.add(name + ".beta", Tensor::zeros({channels}, true));
  return layer;
}

Tensor StaticNormLayer::forward(const Tensor& x) const {
  return channel_affine(instance_norm(x), gamma, beta);
}

AdaptiveNormLayer AdaptiveNormLayer::create(ParamStore& params, const std::string& name,
                                            int t_dim, int channels) {
  AdaptiveNormLayer layer;
  layer.p.scale_weight = params.add(name + ".scale_weight", Tensor::zeros({t_dim, channels}, true));
  layer.p.scale_bias = params.add(name + ".scale_bias", Tensor::full({channels}, 1.0, true));
  layer.p.bias_weight = params.add(name + ".bias_weight", Tensor::zeros({t_dim, channels}, true));
  layer.p.bias_bias = params.add(name + ".bias_bias", Tensor::zeros({channels}, true));
  return layer;
}

Tensor AdaptiveNormLayer::forward(const Tensor& x, const Tensor& t_embed) const {
  return adaptive_norm(x, t_embed, p);
}

Tensor sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    fail(ErrorCode::invalid_argument,
         "time embedding dim must be even and >= 2, got " + std::to_string(dim));
  }
  const int half = dim / 2;
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    v[static_cast<std::size_t>(i)] = std::sin(t * freq);
    v[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return Tensor::from_data({dim}, std::move(v));
}

}  // namespace sdg
