#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sdg/rng.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

// Ordered registry of named leaf parameters. Order is insertion order and is
// part of the determinism contract (checkpoints, optimizer sweeps).
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& mutable_entries() { return entries_; }
  std::size_t parameter_count() const;

  void zero_grad();
  // Quantizes every parameter through 32-bit floats, matching what a
  // checkpoint round-trip produces. Called at checkpoint boundaries so a
  // resumed run continues from exactly the persisted state.
  void round_trip_f32();

  // Copies values from another store for every name present in both.
  // Returns the copied names.
  std::vector<std::string> copy_matching_from(const ParamStore& src);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Adam with bias correction and optional global-norm gradient clipping.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, double clip_norm = 0.0);

  // Optimizer state as named tensors for checkpointing ("opt.m.<p>",
  // "opt.v.<p>", "opt.t").
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& entries);
  void round_trip_f32();
  std::int64_t step_count() const { return step_count_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
  std::unordered_map<std::string, std::vector<double>> m_, v_;
};

// ---- layers ----

struct Conv2dLayer {
  Tensor kernel;  // [K,C,kh,kw]
  Tensor bias;    // [K]
  int stride = 1;
  int padding = 0;

  static Conv2dLayer create(ParamStore& params, const std::string& name, int in_ch,
                            int out_ch, int ksize, int stride, int padding, Rng& rng,
                            bool zero_init = false);
  Tensor forward(const Tensor& x) const;
};

struct LinearLayer {
  Tensor weight;  // [I,O]
  Tensor bias;    // [O]

  static LinearLayer create(ParamStore& params, const std::string& name, int in_dim,
                            int out_dim, Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x) const;  // [N,I] -> [N,O]
};

// Time-conditioned affine: y = x * (1 + f_s(t_vec)) + f_b(t_vec), with both
// maps zero-initialized so the layer starts as the identity.
struct FiLMLayer {
  LinearLayer to_scale;
  LinearLayer to_bias;

  static FiLMLayer create(ParamStore& params, const std::string& name, int t_dim,
                          int channels, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& t_vec) const;  // t_vec [D]
};

// Instance norm with a learned static affine (clean encoder flavor).
struct StaticNormLayer {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]

  static StaticNormLayer create(ParamStore& params, const std::string& name, int channels);
  Tensor forward(const Tensor& x) const;
};

// Instance norm with an affine predicted from the timestep embedding
// (time-conditioned encoder flavor). Initialized to the identity affine.
struct AdaptiveNormLayer {
  AdaptiveNormParams p;

  static AdaptiveNormLayer create(ParamStore& params, const std::string& name, int t_dim,
                                  int channels);
  Tensor forward(const Tensor& x, const Tensor& t_embed) const;
};

// Sinusoidal embedding of an integer timestep; dim must be even.
Tensor sinusoidal_time_embedding(int t, int dim);

double global_grad_norm(const ParamStore& params);

}  // namespace sdg
