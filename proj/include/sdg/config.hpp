#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdg/corpus.hpp"
#include "sdg/denoiser.hpp"
#include "sdg/encoders.hpp"
#include "sdg/eval.hpp"
#include "sdg/guidance.hpp"
#include "sdg/sampler.hpp"

namespace sdg {

// Flat `section.key = value` run configuration. Every key has an explicit
// default; loading resolves the full schema, so persisting a config records
// every value (no hidden defaults). Unknown or missing keys are rejected by
// name.
class RunConfig {
 public:
  static RunConfig defaults();
  static RunConfig load(const std::string& path);
  // Parses override lines in the same format on top of current values.
  void apply_line(const std::string& line);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  void save(const std::string& path) const;
  std::string to_string() const;

  // Typed views over the schema.
  CorpusSpec corpus_spec() const;
  NoiseSchedule schedule() const;
  DenoiserConfig denoiser_config() const;
  TrainConfig train_config() const;
  EncoderConfig encoder_config() const;
  ContrastiveConfig pretrain_config() const;
  ContrastiveConfig finetune_config() const;
  SamplerConfig sampler_config() const;
  GramNorm gram_norm() const;
  std::vector<int> guidance_layers() const;
  bool fresh_ref_noise() const;
  AblationConfig ablation_config() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;  // schema order
  std::size_t find(const std::string& key) const;             // npos if absent
};

}  // namespace sdg
