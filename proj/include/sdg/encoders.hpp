#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdg/corpus.hpp"
#include "sdg/nn.hpp"
#include "sdg/schedule.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

struct EncoderConfig {
  int channels = 3;
  int image_size = 32;
  int base_channels = 32;  // trunk widths {base, 2*base, 2*base}
  int embed_dim = 16;
  int token_dim = 32;
  int t_embed_dim = 64;
  std::uint64_t init_seed = 2;
};

// Attribute and template words of the synthetic corpus plus an <unk> token.
const std::vector<std::string>& text_vocabulary();
std::vector<int> tokenize(const std::string& text);
int unk_token_id();

// Text encoder E_L: embedding table, mean pooling, small projection MLP,
// unit-norm output.
class TextEncoder {
 public:
  explicit TextEncoder(const EncoderConfig& cfg);

  Tensor encode(const std::string& text) const;          // [D], unit norm
  Tensor encode_tokens(const std::vector<int>& ids) const;

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  EncoderConfig cfg_;
  ParamStore params_;
  Tensor table_;  // [V, token_dim]
  LinearLayer proj1_, proj2_;
};

struct EncoderFeatures {
  Tensor embedding;            // [D], unit norm
  std::vector<Tensor> layers;  // post-activation feature maps, [C_j,H_j,W_j]
};

// Clean image encoder E_I: conv trunk with static norm affines.
class CleanEncoder {
 public:
  explicit CleanEncoder(const EncoderConfig& cfg);

  EncoderFeatures encode(const Tensor& image) const;  // [3,S,S]
  Tensor embed(const Tensor& image) const;            // [D]
  Tensor embed_batch(const std::vector<Tensor>& images) const;  // [N,D]

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int exposed_layer_count() const { return 3; }

 private:
  friend class TimeConditionedEncoder;
  EncoderConfig cfg_;
  ParamStore params_;
  Conv2dLayer conv0_, conv1_, conv2_;
  StaticNormLayer norm0_, norm1_, norm2_;
  LinearLayer proj_;
};

// Time-conditioned encoder E'_I: same trunk with every normalization
// replaced by an adaptive norm conditioned on the sinusoidal t-embedding.
// t = 0 denotes clean input.
class TimeConditionedEncoder {
 public:
  explicit TimeConditionedEncoder(const EncoderConfig& cfg);

  // Initialized from the clean encoder's parameters; the adaptive-norm
  // affines are the only parameters not copied.
  static TimeConditionedEncoder from_clean(const CleanEncoder& clean);

  EncoderFeatures encode(const Tensor& x_t, int t) const;  // [3,S,S]
  Tensor embed(const Tensor& x_t, int t) const;

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int exposed_layer_count() const { return 3; }

 private:
  EncoderConfig cfg_;
  ParamStore params_;
  Conv2dLayer conv0_, conv1_, conv2_;
  AdaptiveNormLayer norm0_, norm1_, norm2_;
  LinearLayer proj_;
};

struct ContrastiveConfig {
  int steps = 400;
  int batch = 32;
  double lr = 1e-3;
  double tau = 0.07;
  std::uint64_t seed = 2;
};

// Symmetric InfoNCE over in-batch (image, caption) pairs.
std::pair<CleanEncoder, TextEncoder> pretrain_dual_encoder(const CaptionedCorpus& corpus,
                                                           const ContrastiveConfig& cfg,
                                                           const EncoderConfig& enc_cfg,
                                                           std::vector<double>* losses = nullptr);

// Self-supervised finetuning on clean/noised pairs: per-example timesteps
// drawn uniformly from [1,T], noise via q_sample, clean encoder frozen, no
// text anywhere.
TimeConditionedEncoder finetune_noised_encoder(const CleanEncoder& clean,
                                               const std::vector<Tensor>& images,
                                               const NoiseSchedule& sched,
                                               const ContrastiveConfig& cfg,
                                               std::vector<double>* losses = nullptr);

// One-step contrastive loss value for given logits scale; exposed for tests.
double contrastive_loss_value(const Tensor& image_emb, const Tensor& text_emb, double tau);

// Caption -> image retrieval within batches drawn from `items`; a hit is a
// retrieved image whose attributes match the query caption. Returns mean
// top-1 over `batches` batches of `batch` items.
double caption_retrieval_top1(const CleanEncoder& clean, const TextEncoder& text,
                              const std::vector<CorpusItem>& items, int batch, int batches,
                              std::uint64_t seed);

// Instance-level clean <-> noised in-batch top-1 retrieval at a fixed
// timestep (the noised query must rank its own clean image first).
double clean_noised_retrieval_top1(const CleanEncoder& clean,
                                   const TimeConditionedEncoder& noised,
                                   const std::vector<Tensor>& images,
                                   const NoiseSchedule& sched, int t, int batch,
                                   int batches, std::uint64_t seed);

// Checkpoint bundles ("SDGENC1" container).
void save_dual_encoder(const std::string& path, const CleanEncoder& clean,
                       const TextEncoder& text);
std::pair<CleanEncoder, TextEncoder> load_dual_encoder(const std::string& path);
void save_noised_encoder(const std::string& path, const TimeConditionedEncoder& enc);
TimeConditionedEncoder load_noised_encoder(const std::string& path);

}  // namespace sdg
