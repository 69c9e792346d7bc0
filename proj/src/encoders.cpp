#include "sdg/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "sdg/checkpoint.hpp"

namespace sdg {

namespace {

constexpr std::uint64_t kPretrainStream = 0x9e11a;
constexpr std::uint64_t kFinetuneStream = 0x7f23b;
constexpr std::uint64_t kRetrievalStream = 0x3c41c;

}  // namespace

const std::vector<std::string>& text_vocabulary() {
  static const std::vector<std::string> vocab = {
      "a",      "on",     "background", "small", "large", "red",     "green",
      "blue",   "yellow", "square",     "circle", "triangle", "dark", "light",
      "<unk>",
  };
  return vocab;
}

int unk_token_id() { return static_cast<int>(text_vocabulary().size()) - 1; }

std::vector<int> tokenize(const std::string& text) {
  const auto& vocab = text_vocabulary();
  std::istringstream is(text);
  std::vector<int> ids;
  for (std::string word; is >> word;) {
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    int id = unk_token_id();
    for (std::size_t v = 0; v < vocab.size(); ++v) {
      if (vocab[v] == word) {
        id = static_cast<int>(v);
        break;
      }
    }
    ids.push_back(id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// TextEncoder
// ---------------------------------------------------------------------------

TextEncoder::TextEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  Rng rng(mix_seed(cfg.init_seed, 0x7e47));
  const int V = static_cast<int>(text_vocabulary().size());
  std::vector<double> table(static_cast<std::size_t>(V) * cfg.token_dim);
  for (double& v : table) v = 0.1 * rng.normal();
  table_ = params_.add("table", Tensor::from_data({V, cfg.token_dim}, std::move(table), true));
  proj1_ = LinearLayer::create(params_, "proj1", cfg.token_dim, cfg.token_dim, rng);
  proj2_ = LinearLayer::create(params_, "proj2", cfg.token_dim, cfg.embed_dim, rng);
}

Tensor TextEncoder::encode_tokens(const std::vector<int>& ids) const {
  if (ids.empty()) {
    fail(ErrorCode::invalid_argument, "encode_text: empty token sequence");
  }
  Tensor pooled = reshape(mean_rows(embedding_rows(table_, ids)), {1, cfg_.token_dim});
  Tensor h = silu(proj1_.forward(pooled));
  return reshape(l2_normalize(proj2_.forward(h)), {cfg_.embed_dim});
}

Tensor TextEncoder::encode(const std::string& text) const {
  return encode_tokens(tokenize(text));
}

// ---------------------------------------------------------------------------
// Image encoder trunks
// ---------------------------------------------------------------------------

CleanEncoder::CleanEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  Rng rng(mix_seed(cfg.init_seed, 0xc1ea));
  const int c0 = cfg.base_channels, c1 = 2 * cfg.base_channels;
  conv0_ = Conv2dLayer::create(params_, "conv0", cfg.channels, c0, 3, 1, 1, rng);
  conv1_ = Conv2dLayer::create(params_, "conv1", c0, c1, 3, 1, 1, rng);
  conv2_ = Conv2dLayer::create(params_, "conv2", c1, c1, 3, 1, 1, rng);
  norm0_ = StaticNormLayer::create(params_, "norm0", c0);
  norm1_ = StaticNormLayer::create(params_, "norm1", c1);
  norm2_ = StaticNormLayer::create(params_, "norm2", c1);
  proj_ = LinearLayer::create(params_, "proj", c1, cfg.embed_dim, rng);
}

namespace {

void check_image_shape(const char* op, const Tensor& image, const EncoderConfig& cfg) {
  if (image.shape() != Shape{cfg.channels, cfg.image_size, cfg.image_size}) {
    fail(ErrorCode::invalid_argument,
         std::string(op) + ": image shape " + shape_str(image.shape()) +
             " does not match encoder shape [" + std::to_string(cfg.channels) + "," +
             std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) + "]");
  }
}

Tensor stack_images(const std::vector<Tensor>& images, const EncoderConfig& cfg) {
  if (images.empty()) {
    fail(ErrorCode::invalid_argument, "encoder: empty image batch");
  }
  std::vector<double> data;
  data.reserve(images.size() * images[0].data().size());
  for (const Tensor& img : images) {
    check_image_shape("encoder", img, cfg);
    data.insert(data.end(), img.data().begin(), img.data().end());
  }
  return Tensor::from_data(
      {static_cast<int>(images.size()), cfg.channels, cfg.image_size, cfg.image_size},
      std::move(data));
}

}  // namespace

EncoderFeatures CleanEncoder::encode(const Tensor& image) const {
  check_image_shape("encode", image, cfg_);
  Tensor x = reshape(image, {1, cfg_.channels, cfg_.image_size, cfg_.image_size});
  Tensor f0 = silu(norm0_.forward(conv0_.forward(x)));
  Tensor f1 = silu(norm1_.forward(conv1_.forward(avg_pool2(f0))));
  Tensor f2 = silu(norm2_.forward(conv2_.forward(avg_pool2(f1))));
  Tensor emb = reshape(l2_normalize(proj_.forward(spatial_mean(f2))), {cfg_.embed_dim});
  EncoderFeatures out;
  out.embedding = emb;
  auto squeeze = [](const Tensor& f) {
    return reshape(f, {f.shape()[1], f.shape()[2], f.shape()[3]});
  };
  out.layers = {squeeze(f0), squeeze(f1), squeeze(f2)};
  return out;
}

Tensor CleanEncoder::embed(const Tensor& image) const { return encode(image).embedding; }

Tensor CleanEncoder::embed_batch(const std::vector<Tensor>& images) const {
  Tensor x = stack_images(images, cfg_);
  Tensor f0 = silu(norm0_.forward(conv0_.forward(x)));
  Tensor f1 = silu(norm1_.forward(conv1_.forward(avg_pool2(f0))));
  Tensor f2 = silu(norm2_.forward(conv2_.forward(avg_pool2(f1))));
  return l2_normalize(proj_.forward(spatial_mean(f2)));
}

TimeConditionedEncoder::TimeConditionedEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  Rng rng(mix_seed(cfg.init_seed, 0x401e));
  const int c0 = cfg.base_channels, c1 = 2 * cfg.base_channels;
  conv0_ = Conv2dLayer::create(params_, "conv0", cfg.channels, c0, 3, 1, 1, rng);
  conv1_ = Conv2dLayer::create(params_, "conv1", c0, c1, 3, 1, 1, rng);
  conv2_ = Conv2dLayer::create(params_, "conv2", c1, c1, 3, 1, 1, rng);
  norm0_ = AdaptiveNormLayer::create(params_, "anorm0", cfg.t_embed_dim, c0);
  norm1_ = AdaptiveNormLayer::create(params_, "anorm1", cfg.t_embed_dim, c1);
  norm2_ = AdaptiveNormLayer::create(params_, "anorm2", cfg.t_embed_dim, c1);
  proj_ = LinearLayer::create(params_, "proj", c1, cfg.embed_dim, rng);
}

TimeConditionedEncoder TimeConditionedEncoder::from_clean(const CleanEncoder& clean) {
  TimeConditionedEncoder enc(clean.config());
  enc.params_.copy_matching_from(clean.params());
  return enc;
}

EncoderFeatures TimeConditionedEncoder::encode(const Tensor& x_t, int t) const {
  check_image_shape("encode", x_t, cfg_);
  if (t < 0) {
    fail(ErrorCode::invalid_argument,
         "encode: timestep must be >= 0, got " + std::to_string(t));
  }
  Tensor t_embed = sinusoidal_time_embedding(t, cfg_.t_embed_dim);
  Tensor x = reshape(x_t, {1, cfg_.channels, cfg_.image_size, cfg_.image_size});
  Tensor f0 = silu(norm0_.forward(conv0_.forward(x), t_embed));
  Tensor f1 = silu(norm1_.forward(conv1_.forward(avg_pool2(f0)), t_embed));
  Tensor f2 = silu(norm2_.forward(conv2_.forward(avg_pool2(f1)), t_embed));
  Tensor emb = reshape(l2_normalize(proj_.forward(spatial_mean(f2))), {cfg_.embed_dim});
  EncoderFeatures out;
  out.embedding = emb;
  auto squeeze = [](const Tensor& f) {
    return reshape(f, {f.shape()[1], f.shape()[2], f.shape()[3]});
  };
  out.layers = {squeeze(f0), squeeze(f1), squeeze(f2)};
  return out;
}

Tensor TimeConditionedEncoder::embed(const Tensor& x_t, int t) const {
  return encode(x_t, t).embedding;
}

// ---------------------------------------------------------------------------
// Contrastive training
// ---------------------------------------------------------------------------

namespace {

Tensor symmetric_info_nce(const Tensor& logits) {
  return scale(add(info_nce_loss(logits, true), info_nce_loss(logits, false)), 0.5);
}

std::vector<std::size_t> sample_batch_indices(std::size_t n, int batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < batch; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<std::int64_t>(n) - 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(batch));
  return idx;
}

}  // namespace

double contrastive_loss_value(const Tensor& image_emb, const Tensor& text_emb, double tau) {
  NoGradGuard ng;
  Tensor logits = scale(matmul_nt(image_emb, text_emb), 1.0 / tau);
  return symmetric_info_nce(logits).item();
}

std::pair<CleanEncoder, TextEncoder> pretrain_dual_encoder(const CaptionedCorpus& corpus,
                                                           const ContrastiveConfig& cfg,
                                                           const EncoderConfig& enc_cfg,
                                                           std::vector<double>* losses) {
  if (cfg.batch < 2) {
    fail(ErrorCode::invalid_argument,
         "pretrain_dual_encoder: contrastive loss undefined for batch size < 2");
  }
  if (corpus.items.size() < static_cast<std::size_t>(cfg.batch)) {
    fail(ErrorCode::invalid_argument, "pretrain_dual_encoder: corpus smaller than batch");
  }
  EncoderConfig ec = enc_cfg;
  ec.init_seed = cfg.seed;
  CleanEncoder clean(ec);
  TextEncoder text(ec);
  Adam opt_img(cfg.lr);
  Adam opt_txt(cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, kPretrainStream + static_cast<std::uint64_t>(step)));
    const auto idx = sample_batch_indices(corpus.items.size(), cfg.batch, rng);
    std::vector<Tensor> images;
    std::vector<Tensor> text_rows;
    images.reserve(idx.size());
    text_rows.reserve(idx.size());
    for (std::size_t i : idx) {
      images.push_back(corpus.items[i].image);
      text_rows.push_back(text.encode(corpus.items[i].caption));
    }
    clean.params().zero_grad();
    text.params().zero_grad();
    Tensor img_emb = clean.embed_batch(images);
    Tensor txt_emb = stack_rows(text_rows);
    Tensor logits = scale(matmul_nt(img_emb, txt_emb), 1.0 / cfg.tau);
    Tensor loss = symmetric_info_nce(logits);
    if (losses) losses->push_back(loss.item());
    backward(loss);
    opt_img.step(clean.params());
    opt_txt.step(text.params());
  }
  return {std::move(clean), std::move(text)};
}

TimeConditionedEncoder finetune_noised_encoder(const CleanEncoder& clean,
                                               const std::vector<Tensor>& images,
                                               const NoiseSchedule& sched,
                                               const ContrastiveConfig& cfg,
                                               std::vector<double>* losses) {
  if (cfg.batch < 2) {
    fail(ErrorCode::invalid_argument,
         "finetune_noised_encoder: contrastive loss undefined for batch size < 2");
  }
  if (images.size() < static_cast<std::size_t>(cfg.batch)) {
    fail(ErrorCode::invalid_argument, "finetune_noised_encoder: corpus smaller than batch");
  }
  TimeConditionedEncoder noised = TimeConditionedEncoder::from_clean(clean);
  Adam opt(cfg.lr);
  const auto& ec = clean.config();
  const std::size_t dim = static_cast<std::size_t>(ec.channels) * ec.image_size * ec.image_size;
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, kFinetuneStream + static_cast<std::uint64_t>(step)));
    const auto idx = sample_batch_indices(images.size(), cfg.batch, rng);
    std::vector<Tensor> clean_images;
    clean_images.reserve(idx.size());
    for (std::size_t i : idx) clean_images.push_back(images[i]);

    Tensor clean_emb;
    {
      NoGradGuard ng;  // the clean encoder stays frozen
      clean_emb = clean.embed_batch(clean_images);
    }
    noised.params().zero_grad();
    std::vector<Tensor> noised_rows;
    noised_rows.reserve(idx.size());
    for (std::size_t i : idx) {
      const int t = static_cast<int>(rng.uniform_int(1, sched.timesteps()));
      Tensor eps = Tensor::from_data(images[i].shape(), rng.normal_vector(dim));
      Tensor x_t = q_sample(images[i], t, eps, sched);
      noised_rows.push_back(noised.embed(x_t, t));
    }
    Tensor noised_emb = stack_rows(noised_rows);
    Tensor logits = scale(matmul_nt(noised_emb, clean_emb), 1.0 / cfg.tau);
    Tensor loss = symmetric_info_nce(logits);
    if (losses) losses->push_back(loss.item());
    backward(loss);
    opt.step(noised.params());
  }
  return noised;
}

// ---------------------------------------------------------------------------
// Retrieval diagnostics
// ---------------------------------------------------------------------------

double caption_retrieval_top1(const CleanEncoder& clean, const TextEncoder& text,
                              const std::vector<CorpusItem>& items, int batch, int batches,
                              std::uint64_t seed) {
  if (items.size() < static_cast<std::size_t>(batch)) {
    fail(ErrorCode::invalid_argument, "caption_retrieval_top1: not enough items");
  }
  NoGradGuard ng;
  int hits = 0, total = 0;
  for (int b = 0; b < batches; ++b) {
    Rng rng(mix_seed(seed, kRetrievalStream + static_cast<std::uint64_t>(b)));
    const auto idx = sample_batch_indices(items.size(), batch, rng);
    std::vector<Tensor> images;
    images.reserve(idx.size());
    for (std::size_t i : idx) images.push_back(items[i].image);
    Tensor img_emb = clean.embed_batch(images);
    const int D = clean.config().embed_dim;
    for (std::size_t qi = 0; qi < idx.size(); ++qi) {
      Tensor q = text.encode(items[idx[qi]].caption);
      int best = -1;
      double best_sim = -2.0;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        double sim = 0.0;
        for (int d = 0; d < D; ++d)
          sim += q.data()[static_cast<std::size_t>(d)] *
                 img_emb.data()[j * static_cast<std::size_t>(D) + static_cast<std::size_t>(d)];
        if (sim > best_sim) {
          best_sim = sim;
          best = static_cast<int>(j);
        }
      }
      hits += items[idx[static_cast<std::size_t>(best)]].attrs == items[idx[qi]].attrs ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / total;
}

double clean_noised_retrieval_top1(const CleanEncoder& clean,
                                   const TimeConditionedEncoder& noised,
                                   const std::vector<Tensor>& images,
                                   const NoiseSchedule& sched, int t, int batch,
                                   int batches, std::uint64_t seed) {
  if (images.size() < static_cast<std::size_t>(batch)) {
    fail(ErrorCode::invalid_argument, "clean_noised_retrieval_top1: not enough images");
  }
  NoGradGuard ng;
  const int D = clean.config().embed_dim;
  int hits = 0, total = 0;
  for (int b = 0; b < batches; ++b) {
    Rng rng(mix_seed(seed, kRetrievalStream + 0x1000 + static_cast<std::uint64_t>(b)));
    const auto idx = sample_batch_indices(images.size(), batch, rng);
    std::vector<Tensor> clean_images;
    clean_images.reserve(idx.size());
    for (std::size_t i : idx) clean_images.push_back(images[i]);
    Tensor clean_emb = clean.embed_batch(clean_images);
    for (std::size_t qi = 0; qi < idx.size(); ++qi) {
      Tensor eps = Tensor::from_data(images[idx[qi]].shape(),
                                     rng.normal_vector(images[idx[qi]].data().size()));
      Tensor x_t = q_sample(images[idx[qi]], t, eps, sched);
      Tensor q = noised.embed(x_t, t);
      int best = -1;
      double best_sim = -2.0;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        double sim = 0.0;
        for (int d = 0; d < D; ++d)
          sim += q.data()[static_cast<std::size_t>(d)] *
                 clean_emb.data()[j * static_cast<std::size_t>(D) + static_cast<std::size_t>(d)];
        if (sim > best_sim) {
          best_sim = sim;
          best = static_cast<int>(j);
        }
      }
      hits += best == static_cast<int>(qi) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / total;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, Tensor>> encoder_meta(const EncoderConfig& cfg) {
  return {
      {"meta.shape", Tensor::from_data({3}, {static_cast<double>(cfg.channels),
                                             static_cast<double>(cfg.image_size),
                                             static_cast<double>(cfg.image_size)})},
      {"meta.base_channels", Tensor::scalar(static_cast<double>(cfg.base_channels))},
      {"meta.embed_dim", Tensor::scalar(static_cast<double>(cfg.embed_dim))},
      {"meta.token_dim", Tensor::scalar(static_cast<double>(cfg.token_dim))},
      {"meta.t_embed_dim", Tensor::scalar(static_cast<double>(cfg.t_embed_dim))},
  };
}

EncoderConfig encoder_config_from_meta(
    const std::vector<std::pair<std::string, Tensor>>& entries, const std::string& path) {
  EncoderConfig cfg;
  bool have_shape = false;
  for (const auto& [name, t] : entries) {
    if (name == "meta.shape") {
      cfg.channels = static_cast<int>(t.data()[0]);
      cfg.image_size = static_cast<int>(t.data()[1]);
      have_shape = true;
    } else if (name == "meta.base_channels") {
      cfg.base_channels = static_cast<int>(t.item());
    } else if (name == "meta.embed_dim") {
      cfg.embed_dim = static_cast<int>(t.item());
    } else if (name == "meta.token_dim") {
      cfg.token_dim = static_cast<int>(t.item());
    } else if (name == "meta.t_embed_dim") {
      cfg.t_embed_dim = static_cast<int>(t.item());
    }
  }
  if (!have_shape) {
    fail(ErrorCode::bad_checkpoint, "checkpoint: '" + path + "' lacks encoder metadata");
  }
  return cfg;
}

ParamStore prefixed_store(const std::vector<std::pair<std::string, Tensor>>& entries,
                          const std::string& prefix) {
  ParamStore out;
  for (const auto& [name, t] : entries) {
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t);
  }
  return out;
}

void apply_all(ParamStore& dst, const ParamStore& src, const std::string& what,
               const std::string& path) {
  const auto copied = dst.copy_matching_from(src);
  if (copied.size() != dst.entries().size()) {
    fail(ErrorCode::bad_checkpoint,
         "checkpoint: '" + path + "' is missing " + what + " parameters");
  }
}

}  // namespace

void save_dual_encoder(const std::string& path, const CleanEncoder& clean,
                       const TextEncoder& text) {
  std::vector<std::pair<std::string, Tensor>> entries = encoder_meta(clean.config());
  for (const auto& [name, t] : clean.params().entries()) entries.emplace_back("clean." + name, t);
  for (const auto& [name, t] : text.params().entries()) entries.emplace_back("text." + name, t);
  save_checkpoint(path, kEncoderMagic, entries);
}

std::pair<CleanEncoder, TextEncoder> load_dual_encoder(const std::string& path) {
  const auto entries = load_checkpoint(path, kEncoderMagic);
  const EncoderConfig cfg = encoder_config_from_meta(entries, path);
  CleanEncoder clean(cfg);
  TextEncoder text(cfg);
  apply_all(clean.params(), prefixed_store(entries, "clean."), "clean encoder", path);
  apply_all(text.params(), prefixed_store(entries, "text."), "text encoder", path);
  return {std::move(clean), std::move(text)};
}

void save_noised_encoder(const std::string& path, const TimeConditionedEncoder& enc) {
  std::vector<std::pair<std::string, Tensor>> entries = encoder_meta(enc.config());
  for (const auto& [name, t] : enc.params().entries()) entries.emplace_back("noised." + name, t);
  save_checkpoint(path, kEncoderMagic, entries);
}

TimeConditionedEncoder load_noised_encoder(const std::string& path) {
  const auto entries = load_checkpoint(path, kEncoderMagic);
  const EncoderConfig cfg = encoder_config_from_meta(entries, path);
  TimeConditionedEncoder enc(cfg);
  apply_all(enc.params(), prefixed_store(entries, "noised."), "time-conditioned encoder",
            path);
  return enc;
}

}  // namespace sdg
