#include "sdg/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace sdg {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  auto def = [&c](const char* k, const char* v) { c.entries_.emplace_back(k, v); };
  def("corpus.image_size", "32");
  def("corpus.count", "4000");
  def("corpus.seed", "17");
  def("corpus.position_jitter", "4.0");
  def("corpus.rotation_jitter", "0.3");
  def("schedule.kind", "linear");
  def("schedule.timesteps", "200");
  def("schedule.beta_start", "0.0001");
  def("schedule.beta_end", "0.02");
  def("denoiser.base_channels", "32");
  def("denoiser.t_embed_dim", "64");
  def("denoiser.steps", "1500");
  def("denoiser.batch", "4");
  def("denoiser.lr", "0.0002");
  def("denoiser.clip_norm", "1.0");
  def("denoiser.seed", "1");
  def("denoiser.checkpoint_every", "0");
  def("encoders.embed_dim", "16");
  def("encoders.token_dim", "32");
  def("encoders.base_channels", "32");
  def("encoders.t_embed_dim", "64");
  def("encoders.tau", "0.07");
  def("encoders.pretrain_steps", "400");
  def("encoders.pretrain_batch", "32");
  def("encoders.pretrain_lr", "0.001");
  def("encoders.finetune_steps", "300");
  def("encoders.finetune_batch", "32");
  def("encoders.finetune_lr", "0.001");
  def("encoders.holdout_fraction", "0.1");
  def("encoders.seed", "2");
  def("guidance.scale_image", "100.0");
  def("guidance.scale_text", "120.0");
  def("guidance.gram_norm", "chw");
  def("guidance.layers", "0,1,2");
  def("guidance.fresh_ref_noise", "true");
  def("sampler.seed", "7");
  def("sampler.trace_stride", "10");
  def("sampler.clamp_final", "true");
  def("sampler.record_trace", "false");
  def("eval.negatives", "99");
  def("eval.seed", "3");
  def("eval.ks", "1,5,10,20");
  def("ablate.scales", "0,30,100");
  def("ablate.refs", "16");
  def("ablate.seeds_per_ref", "3");
  def("ablate.base_seed", "500");
  def("ablate.kind", "content");
  return c;
}

std::size_t RunConfig::find(const std::string& key) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == key) return i;
  }
  return static_cast<std::size_t>(-1);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::size_t i = find(key);
  if (i == static_cast<std::size_t>(-1)) {
    fail(ErrorCode::bad_config, "config: unknown key '" + key + "'");
  }
  entries_[i].second = value;
}

void RunConfig::apply_line(const std::string& raw) {
  const std::string line = trim(raw);
  if (line.empty() || line[0] == '#') return;
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    fail(ErrorCode::bad_config, "config: malformed line '" + line + "' (expected key = value)");
  }
  set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    fail(ErrorCode::io, "config: cannot open '" + path + "'");
  }
  RunConfig c = defaults();
  std::string line;
  while (std::getline(is, line)) c.apply_line(line);
  return c;
}

const std::string& RunConfig::get(const std::string& key) const {
  const std::size_t i = find(key);
  if (i == static_cast<std::size_t>(-1)) {
    fail(ErrorCode::bad_config, "config: missing key '" + key + "'");
  }
  return entries_[i].second;
}

bool RunConfig::has(const std::string& key) const {
  return find(key) != static_cast<std::size_t>(-1);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(ErrorCode::bad_config, "config: key '" + key + "' is not an integer: '" + v + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(ErrorCode::bad_config, "config: key '" + key + "' is not an integer: '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(ErrorCode::bad_config, "config: key '" + key + "' is not a number: '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCode::bad_config, "config: key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      fail(ErrorCode::bad_config, "config: key '" + key + "' has a non-integer item: '" + item + "'");
    }
  }
  if (out.empty()) {
    fail(ErrorCode::bad_config, "config: key '" + key + "' is an empty list");
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorCode::bad_config, "config: key '" + key + "' has a non-number item: '" + item + "'");
    }
  }
  if (out.empty()) {
    fail(ErrorCode::bad_config, "config: key '" + key + "' is an empty list");
  }
  return out;
}

std::string RunConfig::to_string() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
  return os.str();
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    fail(ErrorCode::io, "config: cannot open '" + path + "' for writing");
  }
  os << to_string();
}

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec s;
  s.image_size = static_cast<int>(get_int("corpus.image_size"));
  s.count = static_cast<int>(get_int("corpus.count"));
  s.seed = get_u64("corpus.seed");
  s.position_jitter = get_double("corpus.position_jitter");
  s.rotation_jitter = get_double("corpus.rotation_jitter");
  return s;
}

NoiseSchedule RunConfig::schedule() const {
  return build_schedule(get("schedule.kind"), static_cast<int>(get_int("schedule.timesteps")),
                        get_double("schedule.beta_start"), get_double("schedule.beta_end"));
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.channels = 3;
  c.height = static_cast<int>(get_int("corpus.image_size"));
  c.width = c.height;
  c.base_channels = static_cast<int>(get_int("denoiser.base_channels"));
  c.t_embed_dim = static_cast<int>(get_int("denoiser.t_embed_dim"));
  c.init_seed = get_u64("denoiser.seed");
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.steps = static_cast<int>(get_int("denoiser.steps"));
  c.batch = static_cast<int>(get_int("denoiser.batch"));
  c.lr = get_double("denoiser.lr");
  c.clip_norm = get_double("denoiser.clip_norm");
  c.seed = get_u64("denoiser.seed");
  c.checkpoint_every = static_cast<int>(get_int("denoiser.checkpoint_every"));
  return c;
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig c;
  c.channels = 3;
  c.image_size = static_cast<int>(get_int("corpus.image_size"));
  c.base_channels = static_cast<int>(get_int("encoders.base_channels"));
  c.embed_dim = static_cast<int>(get_int("encoders.embed_dim"));
  c.token_dim = static_cast<int>(get_int("encoders.token_dim"));
  c.t_embed_dim = static_cast<int>(get_int("encoders.t_embed_dim"));
  c.init_seed = get_u64("encoders.seed");
  return c;
}

ContrastiveConfig RunConfig::pretrain_config() const {
  ContrastiveConfig c;
  c.steps = static_cast<int>(get_int("encoders.pretrain_steps"));
  c.batch = static_cast<int>(get_int("encoders.pretrain_batch"));
  c.lr = get_double("encoders.pretrain_lr");
  c.tau = get_double("encoders.tau");
  c.seed = get_u64("encoders.seed");
  return c;
}

ContrastiveConfig RunConfig::finetune_config() const {
  ContrastiveConfig c;
  c.steps = static_cast<int>(get_int("encoders.finetune_steps"));
  c.batch = static_cast<int>(get_int("encoders.finetune_batch"));
  c.lr = get_double("encoders.finetune_lr");
  c.tau = get_double("encoders.tau");
  c.seed = get_u64("encoders.seed") + 1;
  return c;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig c;
  c.seed = get_u64("sampler.seed");
  c.trace_stride = static_cast<int>(get_int("sampler.trace_stride"));
  c.clamp_final = get_bool("sampler.clamp_final");
  c.record_trace = get_bool("sampler.record_trace");
  return c;
}

GramNorm RunConfig::gram_norm() const {
  const std::string& v = get("guidance.gram_norm");
  if (v == "chw") return GramNorm::chw;
  if (v == "none") return GramNorm::none;
  fail(ErrorCode::bad_config, "config: guidance.gram_norm must be 'chw' or 'none'");
}

std::vector<int> RunConfig::guidance_layers() const { return get_int_list("guidance.layers"); }

bool RunConfig::fresh_ref_noise() const { return get_bool("guidance.fresh_ref_noise"); }

AblationConfig RunConfig::ablation_config() const {
  AblationConfig c;
  c.scales = get_double_list("ablate.scales");
  c.refs = static_cast<int>(get_int("ablate.refs"));
  c.seeds_per_ref = static_cast<int>(get_int("ablate.seeds_per_ref"));
  c.base_seed = get_u64("ablate.base_seed");
  const std::string& kind = get("ablate.kind");
  if (kind == "content") {
    c.kind = GuidanceKind::content;
  } else if (kind == "structure") {
    c.kind = GuidanceKind::structure;
  } else if (kind == "style") {
    c.kind = GuidanceKind::style;
  } else {
    fail(ErrorCode::bad_config, "config: ablate.kind must be content, structure, or style");
  }
  c.layers = guidance_layers();
  return c;
}

}  // namespace sdg
