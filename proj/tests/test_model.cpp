#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "scd/model.hpp"
#include "support.hpp"

using namespace scd;
using scd::test::random_matrix;
using scd::test::tiny_config;

namespace {

Sample tiny_sample(const std::string& id, int label, bool audio, bool video, Rng& rng) {
  Sample s;
  s.id = id;
  s.participant_id = "p-" + id;
  s.label = label;
  s.text = label ? "Q: how? A: bad" : "Q: how? A: fine";
  if (audio) {
    Waveform w;
    for (int i = 0; i < 4800; ++i) w.samples.push_back(0.4 * std::sin(0.05 * i * (label ? 1.0 : 2.0)) + 0.01 * rng.normal());
    s.audio = w;
  }
  if (video) {
    CueSet cs;
    cs.fps = 5.0;
    const auto dims = tiny_config().encoders.video.cue_dims;
    for (std::size_t m = 0; m < kCueCount; ++m) cs.streams[m] = random_matrix(6, dims[m], rng);
    s.cues = cs;
  }
  return s;
}

void randomize_lora(Model& m, Rng& rng) {
  for (Param* p : m.decoder.lora_params()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, -0.3, 0.3);
}

double batch_loss(Graph& g, Model& m, const std::vector<Prepared>& items, Var* out = nullptr) {
  std::vector<Var> losses;
  for (const Prepared& p : items) {
    const int target = answer_token(p.label);
    losses.push_back(cross_entropy(g, answer_logits(g, m, p, {}), std::span<const int>(&target, 1)));
  }
  Var loss = scale(g, sum(g, losses), 1.0 / static_cast<double>(losses.size()));
  if (out) *out = loss;
  return g.value(loss)[0];
}

Config pretrain_config() {
  Config c = default_config();
  c.model.decoder.layers = 1;
  c.model.decoder.d_model = 16;
  c.model.decoder.d_ff = 16;
  c.train.pretrain_target_accuracy = 0.95;
  return c;
}

GenSpec pretrain_corpus() {
  GenSpec g;
  g.train_participants = 24;
  g.test_participants = 0;
  g.missing_audio = 0.0;
  g.missing_video = 0.0;
  return g;
}

}  // namespace

TEST_CASE("gradient of the answer loss through every trainable tensor") {
  Config cfg = tiny_config();
  cfg.train.freeze_encoders = false;
  Model m = make_model(cfg);
  Rng rng(1);
  randomize_lora(m, rng);
  std::vector<Prepared> batch = {prepare_input(m, tiny_sample("a", 1, true, true, rng)),
                                 prepare_input(m, tiny_sample("b", 0, true, false, rng))};
  ParamList trainable = m.decoder.lora_params();
  for (Param* p : m.audio.adapter.params()) trainable.push_back(p);
  for (Param* p : m.video.adapter.params()) trainable.push_back(p);
  trainable.push_back(&m.fusion.shared);
  for (Param* p : m.encoder_params()) trainable.push_back(p);
  set_trainable(m, trainable);
  const double err = check_gradients(
      [&](Graph& g) {
        Var loss;
        batch_loss(g, m, batch, &loss);
        return loss;
      },
      trainable, 1e-4);
  CHECK(err < 1e-3);
}

TEST_CASE("a frozen model keeps a constant loss") {
  Model m = make_model(tiny_config());
  Rng rng(2);
  std::vector<Prepared> batch = {prepare_input(m, tiny_sample("a", 1, true, true, rng)),
                                 prepare_input(m, tiny_sample("b", 0, false, true, rng))};
  set_trainable(m, {});
  AdamState adam;
  double first = 0.0;
  for (int step = 0; step < 5; ++step) {
    for (Param* p : m.params()) p->zero_grad();
    Graph g;
    Var loss;
    const double value = batch_loss(g, m, batch, &loss);
    g.backward(loss);
    adam_step(m.params(), adam, 0.1, 0.9, 0.999, 1e-8);
    if (step == 0) first = value;
    CHECK(value == first);
  }
}

TEST_CASE("fresh model answers with the uniform-ish baseline") {
  Model m = make_model(tiny_config());
  Rng rng(3);
  const Prepared p = prepare_input(m, tiny_sample("a", 1, true, true, rng));
  Graph g;
  PathChoice path = PathChoice::TextOnly;
  const Matrix logits = g.value(answer_logits(g, m, p, {}, &path));
  CHECK(path == PathChoice::Fuse);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == vocab::kSize);
  for (double v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("adam and learning-rate schedule oracles") {
  Param p("p", Matrix(1, 3, std::vector<double>{1.0, 2.0, 3.0}));
  p.trainable = true;
  p.grad = Matrix(1, 3, std::vector<double>{0.5, -2.0, 0.0});
  AdamState st;
  adam_step({&p}, st, 0.1, 0.9, 0.999, 1e-8);
  // First bias-corrected step is lr * g / (|g| + eps).
  CHECK(std::abs(p.value[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))) < 1e-15);
  CHECK(std::abs(p.value[1] - (2.0 + 0.1 * 2.0 / (2.0 + 1e-8))) < 1e-15);
  CHECK(p.value[2] == 3.0);
  CHECK(st.t == 1);

  Param frozen("f", Matrix(1, 1, 4.0));
  frozen.trainable = false;
  frozen.grad = Matrix(1, 1, 1.0);
  adam_step({&frozen}, st, 0.1, 0.9, 0.999, 1e-8);
  CHECK(frozen.value[0] == 4.0);

  TrainSection t;
  t.steps = 2000;
  t.lr = 1e-3;
  t.warmup_fraction = 0.05;
  CHECK(learning_rate(t, 0) == doctest::Approx(1e-5));
  CHECK(learning_rate(t, 49) == doctest::Approx(5e-4));
  CHECK(learning_rate(t, 99) == doctest::Approx(1e-3));
  CHECK(learning_rate(t, 1500) == 1e-3);
  t.warmup_fraction = 0.0;
  CHECK(learning_rate(t, 0) == 1e-3);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject mismatches") {
  const Config cfg = tiny_config();
  Model m = make_model(cfg);
  Rng rng(4);
  randomize_lora(m, rng);
  for (double& v : m.fusion.shared.value.values()) v += rng.uniform(-1, 1) * 1e-3;
  TrainState st;
  st.stage = "train";
  st.step = 7;
  st.loss_trace = {1.0 / 3.0, 0.1};
  st.adam.t = 7;
  st.adam.m["x"] = random_matrix(2, 2, rng);

  const auto dir = std::filesystem::temp_directory_path() / "scd_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "m.json", m, st);

  Model back = make_model(cfg);
  const TrainState st2 = load_checkpoint(dir / "m.json", back);
  CHECK(st2.step == 7);
  CHECK(st2.loss_trace == st.loss_trace);
  CHECK(bit_equal(st2.adam.m.at("x"), st.adam.m.at("x")));
  const Prepared p = prepare_input(m, tiny_sample("a", 1, true, true, rng));
  Graph g1, g2;
  CHECK(bit_equal(g1.value(answer_logits(g1, m, p, {})), g2.value(answer_logits(g2, back, p, {}))));
  for (Param* q : m.params()) CHECK(bit_equal(q->value, back.find(q->name)->value));

  const nlohmann::json j = checkpoint_json(m, st);
  Config other = cfg;
  other.model.decoder.d_model = 12;
  Model wrong = make_model(other);
  CHECK_THROWS_AS(restore_checkpoint(j, wrong), CheckpointError);

  nlohmann::json missing = j;
  missing["tensors"].erase("fusion.shared_projection");
  CHECK_THROWS_AS(restore_checkpoint(missing, back), CheckpointError);
  nlohmann::json extra = j;
  extra["tensors"]["stray"] = extra["tensors"]["fusion.shared_projection"];
  CHECK_THROWS_AS(restore_checkpoint(extra, back), CheckpointError);
  nlohmann::json bad_shape = j;
  bad_shape["tensors"]["fusion.shared_projection"]["shape"] = {1, 1};
  CHECK_THROWS_AS(restore_checkpoint(bad_shape, back), CheckpointError);
  std::ofstream(dir / "junk.json") << "{";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.json", back), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.json", back), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prediction is seeded per sample") {
  Model m = make_model(tiny_config());
  Rng rng(5);
  const Prepared p = prepare_input(m, tiny_sample("a", 1, true, false, rng));
  const Prediction a = predict(m, p, 3), b = predict(m, p, 3);
  CHECK(a.response == b.response);
  CHECK(a.path == PathChoice::BypassAudio);
  CHECK(a.participant_id == "p-a");
}

TEST_CASE("prepare_input validation") {
  Model m = make_model(tiny_config());
  Rng rng(6);
  Sample s = tiny_sample("a", 1, true, true, rng);
  const Prepared dropped = prepare_input(m, s, true, true);
  CHECK(!dropped.mel);
  CHECK(!dropped.cues);
  s.cues->streams[0] = random_matrix(6, 5, rng);
  CHECK_THROWS_AS(prepare_input(m, s), DataError);
  s = tiny_sample("b", 0, true, false, rng);
  s.audio->samples.resize(100);
  CHECK_THROWS_AS(prepare_input(m, s), DataError);
}

TEST_CASE("pretraining separates the synthetic classes") {
  const Config cfg = pretrain_config();
  const auto corpus = prepare(synth(pretrain_corpus(), 0), cfg.data.prep, 0).train;
  Model m = make_model(cfg);
  const TrainState st = pretrain_encoders(m, corpus);
  CHECK(st.accuracy_trace.size() <= 100);
  CHECK(st.train_accuracy >= 0.95);
  for (double l : st.loss_trace) CHECK(std::isfinite(l));
  // Windowed averages decrease from the start to the end of training.
  const std::size_t w = std::min<std::size_t>(10, st.loss_trace.size());
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    head += st.loss_trace[i];
    tail += st.loss_trace[st.loss_trace.size() - 1 - i];
  }
  CHECK(tail <= head);

  Model again = make_model(cfg);
  CHECK(pretrain_encoders(again, corpus).loss_trace == st.loss_trace);

  std::vector<Sample> text_only = corpus;
  for (Sample& s : text_only) s.cues.reset();
  Model none = make_model(cfg);
  CHECK_THROWS_AS(pretrain_encoders(none, text_only), DataError);
}
