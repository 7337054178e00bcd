#include "scd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

namespace scd {

using nlohmann::json;

ParamList Model::params() {
  ParamList p = audio.params();
  for (Param* x : video.params()) p.push_back(x);
  for (Param* x : fusion.params()) p.push_back(x);
  for (Param* x : decoder.base_params()) p.push_back(x);
  for (Param* x : decoder.lora_params()) p.push_back(x);
  p.push_back(&cls_weight);
  p.push_back(&cls_bias);
  return p;
}

ParamList Model::encoder_params() {
  ParamList p = audio.codebook.params();
  const ParamList adapter = video.adapter.params();
  for (Param* x : video.params())
    if (std::find(adapter.begin(), adapter.end(), x) == adapter.end()) p.push_back(x);
  for (Param* x : fusion.fusion_internal()) p.push_back(x);
  return p;
}

Param* Model::find(const std::string& name) {
  for (Param* p : params())
    if (p->name == name) return p;
  return nullptr;
}

Model make_model(const Config& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.prompts = cfg.model.templates_dir.empty() ? PromptSet() : PromptSet::from_directory(cfg.model.templates_dir);
  Rng rng(mix_seed(cfg.seed, fnv1a("model.init")));
  const auto& f = cfg.fusion;
  m.audio = make_audio_encoder(cfg.encoders.clusters, cfg.encoders.mel.n_mels, f.n_tokens, f.d_tokens, rng);
  m.video = make_video_encoder(cfg.encoders.video, f.n_tokens, f.d_tokens, rng);
  m.fusion = make_fusion(f, cfg.model.decoder.d_model, rng);
  m.decoder = make_decoder(cfg.model.decoder, rng);
  m.cls_weight = Param("pretrain.cls.weight", uniform_init(f.d_tokens, 2, f.d_tokens, rng));
  m.cls_bias = Param("pretrain.cls.bias", uniform_init(1, 2, f.d_tokens, rng));
  std::set<std::string> names;
  for (Param* p : m.params())
    if (!names.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
  return m;
}

void set_trainable(Model& m, const ParamList& trainable) {
  for (Param* p : m.params()) p->trainable = false;
  for (Param* p : trainable) p->trainable = true;
}

// --- inputs ---------------------------------------------------------------------

Prepared prepare_input(Model& m, const Sample& s, bool drop_audio, bool drop_video) {
  Prepared p;
  p.id = s.id;
  p.participant_id = s.participant_id;
  p.dataset = s.dataset();
  p.scenario = s.scenario;
  p.label = s.label;
  const std::string text = s.text && s.text->find_first_not_of(" \t\r\n") != std::string::npos ? *s.text : "n/a";
  const std::string prompt = build_prompt(m.prompts, s.scenario, text);
  p.seq = unify(tokenize_embed(prompt, m.decoder.token_embed.value, m.cfg.model.decoder.max_len));
  if (s.audio && !drop_audio) {
    Waveform w = s.audio->channels == 1 ? *s.audio : resample_linear(*s.audio, s.audio->sample_rate_hz);
    try {
      MelFrames mel = log_mel(w, m.cfg.encoders.mel);
      p.mel = std::move(mel.values);
    } catch (const std::invalid_argument& e) {
      throw DataError("sample " + s.id + ": " + e.what());
    }
  }
  if (s.cues && !drop_video) {
    for (std::size_t c = 0; c < kCueCount; ++c) {
      if (s.cues->streams[c].cols() != m.cfg.encoders.video.cue_dims[c]) {
        throw DataError("sample " + s.id + ": cue " + kCueNames[c] + " has " + std::to_string(s.cues->streams[c].cols()) +
                        " columns, config expects " + std::to_string(m.cfg.encoders.video.cue_dims[c]));
      }
    }
    p.cues = *s.cues;
  }
  return p;
}

std::vector<Prepared> prepare_inputs(Model& m, const std::vector<Sample>& samples, bool drop_audio, bool drop_video) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(prepare_input(m, s, drop_audio, drop_video));
  return out;
}

void cache_features(Model& m, std::vector<Prepared>& items) {
  for (Prepared& p : items) {
    if (p.mel) {
      Graph g;
      p.audio_features = g.value(netvlad(g, g.constant(*p.mel), m.audio.codebook));
    }
    if (p.cues) {
      Graph g;
      p.video_features = g.value(video_features(g, *p.cues, m.video));
    }
  }
}

namespace {

bool video_encoder_trainable(const VideoEncoder& v) {
  return std::any_of(v.conv_weight.begin(), v.conv_weight.end(), [](const Param& p) { return p.trainable; });
}

std::optional<Var> audio_tokens(Graph& g, Model& m, const Prepared& p) {
  if (!p.mel) return std::nullopt;
  const bool live = m.audio.codebook.centers.trainable || m.audio.codebook.assign_weight.trainable || !p.audio_features;
  Var feat = live ? netvlad(g, g.constant(*p.mel), m.audio.codebook) : g.constant(*p.audio_features);
  return apply_adapter(g, feat, m.audio.adapter);
}

std::optional<Var> video_tokens(Graph& g, Model& m, const Prepared& p) {
  if (!p.cues) return std::nullopt;
  const bool live = video_encoder_trainable(m.video) || !p.video_features;
  Var feat = live ? video_features(g, *p.cues, m.video) : g.constant(*p.video_features);
  return apply_adapter(g, feat, m.video.adapter);
}

std::optional<Var> fused_tokens(Graph& g, Model& m, const Prepared& p, PathChoice* path) {
  std::optional<Var> a = audio_tokens(g, m, p);
  std::optional<Var> v = video_tokens(g, m, p);
  if (path) *path = select_path(a.has_value(), v.has_value());
  return fuse(g, a, v, m.fusion);
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

Var answer_logits(Graph& g, Model& m, const Prepared& p, const ForwardMode& mode, PathChoice* path) {
  std::optional<Var> fused = fused_tokens(g, m, p, path);
  SplicedInput in = splice(g, p.seq, fused, m.cfg.model.decoder.max_len);
  Var h = decoder_hidden(g, m.decoder, in.embeds, in.mask, mode);
  const std::size_t pos = in.answer_position;
  return decoder_logits(g, m.decoder, h, std::span<const std::size_t>(&pos, 1));
}

Var pretrain_logits(Graph& g, Model& m, const Prepared& p) {
  if (!p.mel || !p.cues) throw DataError("pretrain: sample " + p.id + " lacks audio or video");
  Var a = apply_adapter(g, netvlad(g, g.constant(*p.mel), m.audio.codebook), m.audio.adapter);
  Var v = apply_adapter(g, video_features(g, *p.cues, m.video), m.video.adapter);
  CrossAttended att = vafm_attend(g, a, v, m.fusion);
  Var f = gate_merge(g, att.audio, att.video, a, v, m.fusion);
  return add_row(g, matmul(g, mean_rows(g, f), g.param(m.cls_weight)), g.param(m.cls_bias));
}

int answer_token(int label) { return label == 1 ? vocab::kDep : vocab::kNoDep; }

// --- optimization ---------------------------------------------------------------

void adam_step(const ParamList& params, AdamState& st, double lr, double beta1, double beta2, double eps) {
  ++st.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (Param* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    Matrix& m = st.m.try_emplace(p->name, p->value.rows(), p->value.cols()).first->second;
    Matrix& v = st.v.try_emplace(p->name, p->value.rows(), p->value.cols()).first->second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = p->grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      p->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

double learning_rate(const TrainSection& t, std::size_t step) {
  const auto warmup = static_cast<std::size_t>(std::ceil(t.warmup_fraction * static_cast<double>(t.steps)));
  if (warmup == 0 || step >= warmup) return t.lr;
  return t.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

namespace {

void zero_grads(const ParamList& ps) {
  for (Param* p : ps) p->zero_grad();
}

double pretrain_accuracy(Model& m, const std::vector<Prepared>& items) {
  std::size_t ok = 0;
  for (const Prepared& p : items) {
    Graph g;
    ok += static_cast<int>(argmax(g.value(pretrain_logits(g, m, p)).row(0))) == p.label;
  }
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

}  // namespace

TrainState pretrain_encoders(Model& m, const std::vector<Sample>& train, std::ostream* log) {
  std::vector<Prepared> items;
  for (const Sample& s : train)
    if (s.audio && s.cues) items.push_back(prepare_input(m, s));
  if (items.empty()) throw DataError("pretrain: no samples with both audio and video");

  ParamList trainable = m.audio.params();
  for (Param* p : m.video.params()) trainable.push_back(p);
  for (Param* p : m.fusion.fusion_internal()) trainable.push_back(p);
  trainable.push_back(&m.cls_weight);
  trainable.push_back(&m.cls_bias);
  set_trainable(m, trainable);

  const TrainSection& t = m.cfg.train;
  TrainState st;
  st.stage = "pretrain";
  Rng order_rng(mix_seed(m.cfg.seed, fnv1a("pretrain.order")));
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < t.pretrain_epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += t.pretrain_batch) {
      const std::size_t e = std::min(order.size(), b + t.pretrain_batch);
      zero_grads(trainable);
      Graph g;
      std::vector<Var> losses;
      for (std::size_t i = b; i < e; ++i) {
        const Prepared& p = items[order[i]];
        const int target = p.label;
        losses.push_back(cross_entropy(g, pretrain_logits(g, m, p), std::span<const int>(&target, 1)));
      }
      Var loss = scale(g, sum(g, losses), 1.0 / static_cast<double>(losses.size()));
      g.backward(loss);
      adam_step(trainable, st.adam, t.pretrain_lr, t.beta1, t.beta2, t.adam_eps);
      st.loss_trace.push_back(g.value(loss)[0]);
      ++st.step;
    }
    st.train_accuracy = pretrain_accuracy(m, items);
    st.accuracy_trace.push_back(st.train_accuracy);
    if (log) *log << "pretrain epoch " << epoch + 1 << " loss " << st.loss_trace.back() << " acc " << st.train_accuracy << "\n";
    if (st.train_accuracy >= t.pretrain_target_accuracy) break;
  }
  return st;
}

double answer_accuracy(Model& m, const std::vector<Prepared>& items) {
  if (items.empty()) return 0.0;
  std::size_t ok = 0;
  for (const Prepared& p : items) {
    Graph g;
    const Matrix& logits = g.value(answer_logits(g, m, p, {}));
    ok += static_cast<int>(argmax(logits.row(0))) == answer_token(p.label);
  }
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

TrainState train_prepared(Model& m, std::vector<Prepared>& items, std::ostream* log) {
  if (items.empty()) throw DataError("train: no training samples");
  const TrainSection& t = m.cfg.train;
  ParamList trainable = m.decoder.lora_params();
  if (t.train_adapters) {
    for (Param* p : m.audio.adapter.params()) trainable.push_back(p);
    for (Param* p : m.video.adapter.params()) trainable.push_back(p);
  }
  if (t.train_shared) trainable.push_back(&m.fusion.shared);
  if (!t.freeze_encoders)
    for (Param* p : m.encoder_params()) trainable.push_back(p);
  set_trainable(m, trainable);
  if (t.freeze_encoders) cache_features(m, items);

  TrainState st;
  st.stage = "train";
  Rng order_rng(mix_seed(m.cfg.seed, fnv1a("train.order")));
  Rng dropout_rng(mix_seed(m.cfg.seed, fnv1a("train.dropout")));
  const ForwardMode mode{true, true, &dropout_rng};
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  while (st.step < t.steps) {
    zero_grads(trainable);
    Graph g;
    std::vector<Var> losses;
    for (std::size_t k = 0; k < t.batch; ++k) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const Prepared& p = items[order[cursor++]];
      const int target = answer_token(p.label);
      losses.push_back(cross_entropy(g, answer_logits(g, m, p, mode), std::span<const int>(&target, 1)));
    }
    Var loss = scale(g, sum(g, losses), 1.0 / static_cast<double>(losses.size()));
    g.backward(loss);
    adam_step(trainable, st.adam, learning_rate(t, st.step), t.beta1, t.beta2, t.adam_eps);
    st.loss_trace.push_back(g.value(loss)[0]);
    ++st.step;
    if (st.step % t.eval_every == 0 || st.step == t.steps) {
      st.train_accuracy = answer_accuracy(m, items);
      st.accuracy_trace.push_back(st.train_accuracy);
      if (log) *log << "train step " << st.step << " loss " << st.loss_trace.back() << " acc " << st.train_accuracy << "\n";
      if (st.train_accuracy >= t.target_accuracy) break;
    }
  }
  return st;
}

TrainState train(Model& m, const std::vector<Sample>& train, std::ostream* log) {
  std::vector<Prepared> items = prepare_inputs(m, train);
  return train_prepared(m, items, log);
}

Prediction predict(Model& m, const Prepared& p, std::uint64_t seed) {
  Prediction out;
  out.id = p.id;
  out.participant_id = p.participant_id;
  out.dataset = p.dataset;
  out.label = p.label;
  Graph g;
  std::optional<Var> fused = fused_tokens(g, m, p, &out.path);
  std::optional<Matrix> fused_value;
  if (fused) fused_value = g.value(*fused);
  const TokenSequence seq = splice(p.seq, fused_value, m.cfg.model.decoder.max_len);
  Rng rng(mix_seed(seed, fnv1a(p.id)));
  out.response = decode(m.decoder, seq, m.cfg.eval.decode, rng);
  out.predicted = parse_response(out.response, m.cfg.eval.negation_window);
  return out;
}

// --- checkpoints ----------------------------------------------------------------

namespace {

json tensor_json(const Matrix& v) { return {{"shape", {v.rows(), v.cols()}}, {"data", v.values()}}; }

Matrix tensor_from_json(const json& j, const std::string& name) {
  try {
    const auto rows = j.at("shape").at(0).get<std::size_t>();
    const auto cols = j.at("shape").at(1).get<std::size_t>();
    return Matrix(rows, cols, j.at("data").get<std::vector<double>>());
  } catch (const std::exception& e) {
    throw CheckpointError("tensor " + name + ": " + e.what());
  }
}

json tensor_map(const std::map<std::string, Matrix>& ms) {
  json o = json::object();
  for (const auto& [k, v] : ms) o[k] = tensor_json(v);
  return o;
}

}  // namespace

json checkpoint_json(Model& m, const TrainState& st) {
  json tensors = json::object();
  for (Param* p : m.params()) tensors[p->name] = tensor_json(p->value);
  return {{"format", "scd-checkpoint"},
          {"version", 1},
          {"config_hash", config_hash(m.cfg)},
          {"seed", m.cfg.seed},
          {"config", to_json(m.cfg)},
          {"state",
           {{"stage", st.stage},
            {"step", st.step},
            {"train_accuracy", st.train_accuracy},
            {"loss_trace", st.loss_trace},
            {"accuracy_trace", st.accuracy_trace},
            {"adam", {{"t", st.adam.t}, {"m", tensor_map(st.adam.m)}, {"v", tensor_map(st.adam.v)}}}}},
          {"tensors", std::move(tensors)}};
}

void save_checkpoint(const std::filesystem::path& path, Model& m, const TrainState& st) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << checkpoint_json(m, st).dump() << '\n';
  if (!out) throw CheckpointError("write failed for " + path.string());
}

TrainState restore_checkpoint(const json& j, Model& m) {
  if (!j.is_object() || j.value("format", "") != "scd-checkpoint") throw CheckpointError("not a checkpoint");
  if (j.value("version", 0) != 1) throw CheckpointError("unsupported checkpoint version");
  const std::string hash = j.value("config_hash", "");
  if (hash != config_hash(m.cfg)) {
    throw CheckpointError("checkpoint config hash " + hash + " does not match the current config (" +
                          config_hash(m.cfg) + ")");
  }
  const json& tensors = j.at("tensors");
  std::set<std::string> seen;
  for (Param* p : m.params()) {
    if (!tensors.contains(p->name)) throw CheckpointError("checkpoint lacks tensor " + p->name);
    Matrix v = tensor_from_json(tensors[p->name], p->name);
    if (!v.same_shape(p->value)) {
      throw CheckpointError("tensor " + p->name + " is " + v.shape_str() + ", model expects " + p->value.shape_str());
    }
    p->value = std::move(v);
    p->grad = Matrix();
    seen.insert(p->name);
  }
  for (auto it = tensors.begin(); it != tensors.end(); ++it)
    if (!seen.count(it.key())) throw CheckpointError("checkpoint has unknown tensor " + it.key());

  TrainState st;
  try {
    const json& s = j.at("state");
    st.stage = s.at("stage").get<std::string>();
    st.step = s.at("step").get<std::size_t>();
    st.train_accuracy = s.at("train_accuracy").get<double>();
    st.loss_trace = s.at("loss_trace").get<std::vector<double>>();
    st.accuracy_trace = s.at("accuracy_trace").get<std::vector<double>>();
    const json& adam = s.at("adam");
    st.adam.t = adam.at("t").get<std::size_t>();
    for (auto it = adam.at("m").begin(); it != adam.at("m").end(); ++it)
      st.adam.m[it.key()] = tensor_from_json(it.value(), it.key());
    for (auto it = adam.at("v").begin(); it != adam.at("v").end(); ++it)
      st.adam.v[it.key()] = tensor_from_json(it.value(), it.key());
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint state: ") + e.what());
  }
  return st;
}

TrainState load_checkpoint(const std::filesystem::path& path, Model& m) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
  return restore_checkpoint(j, m);
}

}  // namespace scd
