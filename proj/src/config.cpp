#include "scd/config.hpp"

#include <cstdio>
#include <fstream>

namespace scd {

using nlohmann::json;

namespace {

template <typename T>
json encode(const T& v) {
  return v;
}
json encode(const HeadMerge& v) { return v == HeadMerge::Sum ? "sum" : "concat"; }
json encode(const std::vector<Scenario>& v) {
  json a = json::array();
  for (Scenario s : v) a.push_back(std::string(1, scenario_code(s)));
  return a;
}

template <typename T>
void decode(const json& j, T& out) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
      throw ConfigError("expected a non-negative integer");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError("expected true or false");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError("expected a number");
  }
  out = j.get<T>();
}
void decode(const json& j, HeadMerge& out) {
  const auto s = j.get<std::string>();
  if (s == "sum") out = HeadMerge::Sum;
  else if (s == "concat") out = HeadMerge::Concat;
  else throw ConfigError("expected \"sum\" or \"concat\"");
}
void decode(const json& j, std::vector<Scenario>& out) {
  out.clear();
  for (const auto& e : j) {
    try {
      out.push_back(parse_scenario(e.get<std::string>()));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }
}

template <typename F>
void walk(Config& c, F&& f) {
  f("/seed", c.seed);
  auto& d = c.model.decoder;
  f("/model/layers", d.layers);
  f("/model/d_llm", d.d_model);
  f("/model/heads", d.heads);
  f("/model/d_ff", d.d_ff);
  f("/model/max_len", d.max_len);
  f("/model/ln_eps", d.ln_eps);
  f("/model/lora/rank", d.lora.rank);
  f("/model/lora/alpha", d.lora.alpha);
  f("/model/lora/dropout", d.lora.dropout);
  f("/model/templates_dir", c.model.templates_dir);

  f("/fusion/n_tokens", c.fusion.n_tokens);
  f("/fusion/d_tokens", c.fusion.d_tokens);
  f("/fusion/heads", c.fusion.heads);
  f("/fusion/head_merge", c.fusion.head_merge);
  f("/fusion/merge_width", c.fusion.merge_width);
  f("/fusion/ln_eps", c.fusion.ln_eps);

  f("/encoders/audio/n_mels", c.encoders.mel.n_mels);
  f("/encoders/audio/win_ms", c.encoders.mel.win_ms);
  f("/encoders/audio/hop_ms", c.encoders.mel.hop_ms);
  f("/encoders/audio/clusters", c.encoders.clusters);
  f("/encoders/video/cue_dims", c.encoders.video.cue_dims);
  f("/encoders/video/d_cue", c.encoders.video.d_cue);
  f("/encoders/video/kernel_width", c.encoders.video.kernel_width);
  f("/encoders/video/share_cross_projections", c.encoders.video.share_cross_projections);
  f("/encoders/video/ln_eps", c.encoders.video.ln_eps);

  auto& g = c.data.gen;
  f("/data/gen/train_participants", g.train_participants);
  f("/data/gen/test_participants", g.test_participants);
  f("/data/gen/scenarios", g.scenarios);
  f("/data/gen/depressed_prior", g.depressed_prior);
  f("/data/gen/marker", g.marker);
  f("/data/gen/text_marker_prob", g.text_marker_prob);
  f("/data/gen/text_leak_prob", g.text_leak_prob);
  f("/data/gen/audio_shift", g.audio_shift);
  f("/data/gen/au_variance_scale", g.au_variance_scale);
  f("/data/gen/missing_audio", g.missing_audio);
  f("/data/gen/missing_video", g.missing_video);
  f("/data/gen/item_seconds_min", g.item_seconds_min);
  f("/data/gen/item_seconds_max", g.item_seconds_max);
  auto& p = c.data.prep;
  f("/data/sample_rate_hz", p.unify.sample_rate_hz);
  f("/data/fps", p.unify.fps);
  f("/data/decimation", p.unify.decimation);
  f("/data/win_s", p.win_s);
  f("/data/min_remainder_s", p.min_remainder_s);
  f("/data/qa_augment", p.qa_augment);
  f("/data/qa_recombine", p.qa_recombine);

  auto& t = c.train;
  f("/train/pretrain_epochs", t.pretrain_epochs);
  f("/train/pretrain_batch", t.pretrain_batch);
  f("/train/pretrain_lr", t.pretrain_lr);
  f("/train/pretrain_target_accuracy", t.pretrain_target_accuracy);
  f("/train/steps", t.steps);
  f("/train/batch", t.batch);
  f("/train/lr", t.lr);
  f("/train/warmup_fraction", t.warmup_fraction);
  f("/train/eval_every", t.eval_every);
  f("/train/target_accuracy", t.target_accuracy);
  f("/train/freeze_encoders", t.freeze_encoders);
  f("/train/train_adapters", t.train_adapters);
  f("/train/train_shared", t.train_shared);
  f("/train/beta1", t.beta1);
  f("/train/beta2", t.beta2);
  f("/train/adam_eps", t.adam_eps);

  f("/eval/top_p", c.eval.decode.top_p);
  f("/eval/temperature", c.eval.decode.temperature);
  f("/eval/greedy", c.eval.decode.greedy);
  f("/eval/max_new_tokens", c.eval.decode.max_new_tokens);
  f("/eval/negation_window", c.eval.negation_window);
}

void reject_unknown(const json& given, const json& known, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path + "/" + it.key();
    if (path.empty() && it.key() == "preset") continue;
    if (!known.contains(it.key())) throw ConfigError("unknown config key " + key);
    if (it->is_object()) {
      if (!known[it.key()].is_object()) throw ConfigError("config key " + key + " is not a section");
      reject_unknown(*it, known[it.key()], key);
    }
  }
}

}  // namespace

void Config::validate() const {
  const auto& d = model.decoder;
  if (d.layers == 0 || d.d_model == 0 || d.d_ff == 0) throw ConfigError("model: layers, d_llm and d_ff must be > 0");
  if (d.heads == 0 || d.d_model % d.heads != 0) throw ConfigError("model.d_llm must be divisible by model.heads");
  if (d.max_len < 3) throw ConfigError("model.max_len must be >= 3");
  if (d.lora.rank == 0) throw ConfigError("model.lora.rank must be >= 1");
  if (!(d.lora.dropout >= 0.0 && d.lora.dropout < 1.0)) throw ConfigError("model.lora.dropout must be in [0, 1)");
  if (fusion.heads == 0 || fusion.d_tokens % fusion.heads != 0) {
    throw ConfigError("fusion.d_tokens must be divisible by fusion.heads");
  }
  if (fusion.n_tokens == 0 || fusion.merge_width == 0) throw ConfigError("fusion: n_tokens and merge_width must be > 0");
  if (fusion.n_tokens + 3 > d.max_len) throw ConfigError("model.max_len too small for the fused tokens");
  if (encoders.clusters == 0 || encoders.mel.n_mels == 0) throw ConfigError("encoders.audio: clusters and n_mels must be > 0");
  if (!(encoders.mel.win_ms > 0.0 && encoders.mel.hop_ms > 0.0)) throw ConfigError("encoders.audio: win_ms and hop_ms must be > 0");
  if (encoders.video.d_cue == 0 || encoders.video.kernel_width == 0) {
    throw ConfigError("encoders.video: d_cue and kernel_width must be > 0");
  }
  data.gen.validate();
  if (data.prep.unify.sample_rate_hz == 0 || !(data.prep.unify.fps > 0.0) || data.prep.unify.decimation == 0) {
    throw ConfigError("data: sample_rate_hz, fps and decimation must be > 0");
  }
  if (!(data.prep.win_s > 0.0) || data.prep.min_remainder_s < 0.0) throw ConfigError("data: bad window settings");
  if (train.batch == 0 || train.pretrain_batch == 0 || train.eval_every == 0) {
    throw ConfigError("train: batch sizes and eval_every must be > 0");
  }
  if (!(train.lr > 0.0 && train.pretrain_lr > 0.0)) throw ConfigError("train: learning rates must be > 0");
  if (!(train.warmup_fraction >= 0.0 && train.warmup_fraction <= 1.0)) throw ConfigError("train.warmup_fraction must be in [0, 1]");
  if (!(eval.decode.top_p > 0.0 && eval.decode.top_p <= 1.0)) throw ConfigError("eval.top_p must be in (0, 1]");
  if (eval.decode.temperature < 0.0) throw ConfigError("eval.temperature must be >= 0");
  if (eval.decode.max_new_tokens == 0) throw ConfigError("eval.max_new_tokens must be >= 1");
}

Config default_config() { return Config{}; }

Config full_preset() {
  Config c;
  c.model.decoder.lora = {64, 16.0, 0.05};
  c.train.lr = 1e-5;
  c.train.pretrain_lr = 1e-4;
  c.train.pretrain_epochs = 100;
  c.eval.decode.top_p = 0.9;
  c.eval.decode.temperature = 1.0;
  return c;
}

Config preset(const std::string& name) {
  if (name == "desk") return default_config();
  if (name == "full") return full_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

json to_json(const Config& c) {
  json j = json::object();
  Config copy = c;
  walk(copy, [&](const char* path, auto& v) { j[json::json_pointer(path)] = encode(v); });
  return j;
}

Config config_from_json(const json& j, const Config& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  Config c = base;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("preset must be a string");
    c = preset(j["preset"].get<std::string>());
  }
  reject_unknown(j, to_json(c), "");
  walk(c, [&](const char* path, auto& v) {
    const json::json_pointer ptr(path);
    if (!j.contains(ptr)) return;
    try {
      decode(j.at(ptr), v);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config ") + path + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config ") + path + ": " + e.what());
    }
  });
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const Config& c) {
  const json j = to_json(c);
  json shape = {{"model", j["model"]}, {"encoders", j["encoders"]}, {"fusion", j["fusion"]}};
  shape["model"].erase("templates_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(shape.dump())));
  return buf;
}

}  // namespace scd
