#include "scd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

namespace scd {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 8> kKnownFields = {"id",    "participant_id", "scenario", "label",
                                                     "split", "text",           "audio",    "cues"};

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array of frames");
  if (j.empty()) return Matrix();
  const std::size_t cols = j[0].size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw DataError(what + ": frame " + std::to_string(r) + " has " + std::to_string(j[r].size()) +
                      " values, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

template <typename T>
T field(const json& j, const char* key, const std::string& id) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError("sample " + id + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw DataError("sample " + id + ": bad field '" + key + "': " + e.what());
  }
}

// Nearest double to v printed with `digits` decimals, so it serializes short.
double round_to(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return std::strtod(buf, nullptr);
}

}  // namespace

std::string Sample::dataset() const {
  auto it = extra.find("dataset");
  return it != extra.end() && it->is_string() ? it->get<std::string>() : "default";
}

double Sample::duration_s() const {
  if (audio) return audio->duration_s();
  if (cues) return cues->duration_s();
  return 0.0;
}

json to_json(const Sample& s) {
  json j = s.extra.is_object() ? s.extra : json::object();
  j["id"] = s.id;
  j["participant_id"] = s.participant_id;
  j["scenario"] = std::string(1, scenario_code(s.scenario));
  j["label"] = s.label;
  j["split"] = s.split;
  if (s.text) j["text"] = *s.text;
  if (s.audio) {
    j["audio"] = {{"sample_rate_hz", s.audio->sample_rate_hz},
                  {"channels", s.audio->channels},
                  {"samples", s.audio->samples}};
  }
  if (s.cues) {
    json c = {{"fps", s.cues->fps}};
    for (std::size_t m = 0; m < kCueCount; ++m) c[kCueNames[m]] = matrix_to_json(s.cues->streams[m]);
    j["cues"] = std::move(c);
  }
  return j;
}

Sample sample_from_json(const json& j) {
  if (!j.is_object()) throw DataError("sample is not a JSON object");
  Sample s;
  s.id = field<std::string>(j, "id", "?");
  s.participant_id = field<std::string>(j, "participant_id", s.id);
  try {
    s.scenario = parse_scenario(field<std::string>(j, "scenario", s.id));
  } catch (const std::invalid_argument& e) {
    throw DataError("sample " + s.id + ": " + e.what());
  }
  s.label = field<int>(j, "label", s.id);
  if (s.label != 0 && s.label != 1) throw DataError("sample " + s.id + ": label must be 0 or 1");
  s.split = field<std::string>(j, "split", s.id);
  if (s.split != "train" && s.split != "test") throw DataError("sample " + s.id + ": split must be train or test");
  if (j.contains("text") && !j["text"].is_null()) s.text = field<std::string>(j, "text", s.id);
  if (j.contains("audio") && !j["audio"].is_null()) {
    const json& a = j["audio"];
    Waveform w;
    w.sample_rate_hz = field<std::size_t>(a, "sample_rate_hz", s.id);
    w.channels = a.contains("channels") ? field<std::size_t>(a, "channels", s.id) : 1;
    w.samples = field<std::vector<double>>(a, "samples", s.id);
    if (w.sample_rate_hz == 0 || w.channels == 0) throw DataError("sample " + s.id + ": audio rate and channels must be > 0");
    if (w.samples.empty() || w.samples.size() % w.channels != 0) {
      throw DataError("sample " + s.id + ": audio sample count must be a nonzero multiple of the channel count");
    }
    s.audio = std::move(w);
  }
  if (j.contains("cues") && !j["cues"].is_null()) {
    const json& c = j["cues"];
    CueSet cs;
    cs.fps = field<double>(c, "fps", s.id);
    if (!(cs.fps > 0.0)) throw DataError("sample " + s.id + ": cue fps must be > 0");
    for (std::size_t m = 0; m < kCueCount; ++m) {
      if (!c.contains(kCueNames[m])) throw DataError("sample " + s.id + ": cues missing '" + kCueNames[m] + "'");
      cs.streams[m] = matrix_from_json(c[kCueNames[m]], "sample " + s.id + " cue " + kCueNames[m]);
    }
    try {
      cs.validate();
    } catch (const DimensionError& e) {
      throw DataError("sample " + s.id + ": " + e.what());
    }
    s.cues = std::move(cs);
  }
  if (!s.text && !s.audio && !s.cues) throw DataError("sample " + s.id + ": no modality present");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKnownFields.begin(), kKnownFields.end(), it.key()) == kKnownFields.end()) s.extra[it.key()] = it.value();
  }
  return s;
}

std::vector<Sample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(sample_from_json(j));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const Sample& s : samples) out << to_json(s).dump() << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

// --- generator ------------------------------------------------------------------

void GenSpec::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("data.gen.") + name + " must be in [0, 1]");
  };
  prob(depressed_prior, "depressed_prior");
  prob(text_marker_prob, "text_marker_prob");
  prob(text_leak_prob, "text_leak_prob");
  prob(missing_audio, "missing_audio");
  prob(missing_video, "missing_video");
  if (!(audio_shift >= 0.0 && audio_shift < 1.0)) throw ConfigError("data.gen.audio_shift must be in [0, 1)");
  if (!(au_variance_scale > 0.0)) throw ConfigError("data.gen.au_variance_scale must be > 0");
  if (scenarios.empty()) throw ConfigError("data.gen.scenarios is empty");
  if (train_participants + test_participants == 0) throw ConfigError("data.gen: no participants");
  if (!(item_seconds_min >= 0.1 && item_seconds_max >= item_seconds_min)) {
    throw ConfigError("data.gen: item duration range must satisfy 0.1 <= min <= max");
  }
  if (marker.empty() && (text_marker_prob > 0.0 || text_leak_prob > 0.0)) throw ConfigError("data.gen.marker is empty");
}

namespace {

constexpr std::array<const char*, 8> kInterviewQuestions = {
    "how do you sleep?", "what do you do for fun?", "how is work?",    "how is your family?",
    "how was your week?", "any plans this weekend?", "how do you eat?", "who do you talk to?"};
constexpr std::array<const char*, 8> kQuestionnaireItems = {
    "little interest in things?", "feeling tired?", "poor appetite?",     "trouble sleeping?",
    "trouble focusing?",          "moving slowly?", "feeling restless?", "low energy?"};
constexpr std::array<const char*, 8> kInterviewAnswers = {
    "i walk the dog", "it is fine", "i read at night", "work is busy",
    "i cook pasta",   "we watch tv", "not much new",   "i call my sister"};
constexpr std::array<const char*, 4> kQuestionnaireAnswers = {"not at all", "several days", "half the days",
                                                              "nearly every day"};
constexpr std::array<const char*, 8> kNarrationSentences = {
    "i went to the market.", "the bus was late.",     "i met a friend.",    "it rained all day.",
    "i fixed the sink.",     "we had soup for lunch.", "i cleaned my room.", "the park was quiet."};

template <std::size_t N>
const char* pick(const std::array<const char*, N>& pool, Rng& rng) {
  return pool[rng.index(N)];
}

struct Layout {
  std::size_t rate = 16000;
  std::size_t channels = 1;
  double fps = 30.0;
  bool video = true;
  std::size_t items = 3;
};

Layout layout_for(Scenario s, Rng& rng) {
  switch (s) {
    case Scenario::Interview: return {16000, 1, 30.0, true, 3};
    case Scenario::Questionnaire: return {8000, 1, 30.0, false, 4};
    case Scenario::SelfNarration: return {32000, 2, 25.0, true, 2 + rng.index(2)};
  }
  return {};
}

std::string make_text(Scenario s, std::size_t items, bool depressed, const GenSpec& spec, Rng& rng) {
  const double p = depressed ? spec.text_marker_prob : spec.text_leak_prob;
  std::string out;
  if (s == Scenario::SelfNarration) {
    std::vector<std::string> sentences;
    for (std::size_t i = 0; i < items; ++i) sentences.emplace_back(pick(kNarrationSentences, rng));
    if (rng.bernoulli(p)) sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(rng.index(items + 1)),
                                           "i feel " + spec.marker + ".");
    for (const auto& x : sentences) out += (out.empty() ? "" : " ") + x;
    return out;
  }
  for (std::size_t i = 0; i < items; ++i) {
    QaPair qa;
    if (s == Scenario::Interview) {
      qa.question = kInterviewQuestions[(i * 3 + rng.index(3)) % kInterviewQuestions.size()];
      qa.answer = pick(kInterviewAnswers, rng);
    } else {
      qa.question = kQuestionnaireItems[(i * 2 + rng.index(2)) % kQuestionnaireItems.size()];
      qa.answer = pick(kQuestionnaireAnswers, rng);
    }
    if (rng.bernoulli(p)) qa.answer += ", " + spec.marker;
    qa.answer += ".";
    out += (out.empty() ? "" : " ") + format_qa(qa);
  }
  return out;
}

Waveform make_audio(const Layout& lay, double seconds, bool depressed, const GenSpec& spec, Rng& rng) {
  Waveform w;
  w.sample_rate_hz = lay.rate;
  w.channels = lay.channels;
  const std::size_t n = static_cast<std::size_t>(std::llround(seconds * static_cast<double>(lay.rate)));
  const double f = rng.uniform(200.0, 240.0) * (depressed ? 1.0 - spec.audio_shift : 1.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  w.samples.resize(n * lay.channels);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(lay.rate);
    const double x = 2.0 * std::numbers::pi * f * t + phase;
    const double v = 0.3 * std::sin(x) + 0.15 * std::sin(2.0 * x) + 0.075 * std::sin(3.0 * x) + 0.02 * rng.normal();
    for (std::size_t c = 0; c < lay.channels; ++c) {
      const double vc = c == 0 ? v : v + 0.01 * rng.normal();
      w.samples[i * lay.channels + c] = round_to(std::clamp(vc, -1.0, 1.0), 4);
    }
  }
  return w;
}

// Cue streams share a neutral face; participants deviate from it slightly.
struct FaceTemplate {
  std::array<std::vector<double>, kCueCount> mean;
};

FaceTemplate make_face_template(std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a("synth.face")));
  FaceTemplate f;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    f.mean[m].resize(kDefaultCueDims[m]);
    for (double& v : f.mean[m]) v = m == 0 ? rng.uniform() : (m == 3 ? 1.0 : 0.0);
  }
  return f;
}

CueSet make_cues(const Layout& lay, double seconds, bool depressed, const GenSpec& spec, const FaceTemplate& face,
                 Rng& rng) {
  CueSet cs;
  cs.fps = lay.fps;
  const std::size_t t = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * lay.fps)));
  const std::array<double, kCueCount> offset = {0.02, 0.05, 0.05, 0.05};
  const std::array<double, kCueCount> jitter = {0.01, 0.1, 0.05, 0.0};
  for (std::size_t m = 0; m < kCueCount; ++m) {
    const std::size_t dim = kDefaultCueDims[m];
    std::vector<double> base = face.mean[m];
    for (double& b : base) b += offset[m] * rng.normal();
    const double sd = m == 3 ? 0.5 * std::sqrt(depressed ? spec.au_variance_scale : 1.0) : jitter[m];
    Matrix s(t, dim);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < dim; ++c) s(r, c) = round_to(base[c] + sd * rng.normal(), 4);
    cs.streams[m] = std::move(s);
  }
  return cs;
}

std::string zero_pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

std::vector<Sample> synth(const GenSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<Sample> out;
  Rng labels_rng(mix_seed(seed, fnv1a("synth.labels")));
  const FaceTemplate face = make_face_template(seed);
  for (const std::string split : {"train", "test"}) {
    const std::size_t n = split == "train" ? spec.train_participants : spec.test_participants;
    std::vector<std::vector<std::size_t>> by_scenario(spec.scenarios.size());
    for (std::size_t k = 0; k < n; ++k) by_scenario[k % spec.scenarios.size()].push_back(k);
    for (std::size_t si = 0; si < spec.scenarios.size(); ++si) {
      const Scenario sc = spec.scenarios[si];
      const auto& members = by_scenario[si];
      const auto n_dep = static_cast<std::size_t>(std::floor(spec.depressed_prior * static_cast<double>(members.size()) + 1e-9));
      std::vector<int> labels(members.size(), 0);
      std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_dep), 1);
      labels_rng.shuffle(labels);
      for (std::size_t i = 0; i < members.size(); ++i) {
        const std::string code(1, scenario_code(sc));
        Sample s;
        s.id = code + "-" + split + "-p" + zero_pad(members[i], 3);
        s.participant_id = "synth-" + s.id;
        s.scenario = sc;
        s.label = labels[i];
        s.split = split;
        s.extra["dataset"] = "synth-" + code;
        Rng rng(mix_seed(seed, fnv1a(s.id)));
        const Layout lay = layout_for(sc, rng);
        double seconds = 0.0;
        for (std::size_t k = 0; k < lay.items; ++k) seconds += rng.uniform(spec.item_seconds_min, spec.item_seconds_max);
        seconds = std::round(seconds * 100.0) / 100.0;
        const bool dep = s.label == 1;
        s.text = make_text(sc, lay.items, dep, spec, rng);
        const bool drop_audio = rng.bernoulli(spec.missing_audio);
        const bool drop_video = rng.bernoulli(spec.missing_video);
        Waveform w = make_audio(lay, seconds, dep, spec, rng);
        if (!drop_audio) s.audio = std::move(w);
        if (lay.video) {
          CueSet c = make_cues(lay, seconds, dep, spec, face, rng);
          if (!drop_video) s.cues = std::move(c);
        }
        out.push_back(std::move(s));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return out;
}

// --- unification ----------------------------------------------------------------

Waveform resample_linear(const Waveform& w, std::size_t rate_hz) {
  if (w.frames() == 0) throw DataError("resample: empty waveform");
  if (rate_hz == 0) throw DataError("resample: target rate must be > 0");
  const std::size_t n_in = w.frames();
  std::vector<double> mono(n_in);
  for (std::size_t i = 0; i < n_in; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.channels; ++c) acc += w.samples[i * w.channels + c];
    mono[i] = acc / static_cast<double>(w.channels);
  }
  Waveform out;
  out.sample_rate_hz = rate_hz;
  out.channels = 1;
  if (rate_hz == w.sample_rate_hz) {
    out.samples = std::move(mono);
    return out;
  }
  const std::size_t n_out = std::max<std::size_t>(1, (n_in * rate_hz + w.sample_rate_hz / 2) / w.sample_rate_hz);
  out.samples.resize(n_out);
  const double step = static_cast<double>(w.sample_rate_hz) / static_cast<double>(rate_hz);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double x = static_cast<double>(i) * step;
    const auto i0 = std::min(static_cast<std::size_t>(x), n_in - 1);
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    const double frac = x - static_cast<double>(i0);
    out.samples[i] = mono[i0] + (mono[i1] - mono[i0]) * frac;
  }
  return out;
}

Matrix resample_frames(const Matrix& m, double from_fps, double to_fps) {
  if (m.rows() == 0) throw DataError("resample_frames: no frames");
  if (from_fps == to_fps) return m;
  const std::size_t n_out = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(m.rows()) * to_fps / from_fps)));
  Matrix out(n_out, m.cols());
  const double step = from_fps / to_fps;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double x = static_cast<double>(i) * step;
    const auto i0 = std::min(static_cast<std::size_t>(x), m.rows() - 1);
    const std::size_t i1 = std::min(i0 + 1, m.rows() - 1);
    const double frac = x - static_cast<double>(i0);
    for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(i0, c) + (m(i1, c) - m(i0, c)) * frac;
  }
  return out;
}

Sample unify_params(const Sample& s, const UnifyConfig& cfg) {
  if (cfg.decimation == 0) throw ConfigError("data.decimation must be >= 1");
  Sample out = s;
  if (s.audio) {
    if (s.audio->frames() == 0) throw DataError("sample " + s.id + ": empty audio");
    if (s.audio->sample_rate_hz != cfg.sample_rate_hz || s.audio->channels != 1) {
      out.audio = resample_linear(*s.audio, cfg.sample_rate_hz);
    }
  }
  if (s.cues) {
    if (s.cues->frames() == 0) throw DataError("sample " + s.id + ": empty cue streams");
    const double final_fps = cfg.fps / static_cast<double>(cfg.decimation);
    if (s.cues->fps != final_fps) {
      CueSet cs;
      cs.fps = final_fps;
      for (std::size_t m = 0; m < kCueCount; ++m) {
        const Matrix full = resample_frames(s.cues->streams[m], s.cues->fps, cfg.fps);
        const std::size_t keep = (full.rows() + cfg.decimation - 1) / cfg.decimation;
        Matrix d(keep, full.cols());
        for (std::size_t r = 0; r < keep; ++r) {
          const auto src = full.row(r * cfg.decimation);
          std::copy(src.begin(), src.end(), d.row(r).begin());
        }
        cs.streams[m] = std::move(d);
      }
      out.cues = std::move(cs);
    }
  }
  return out;
}

// --- windowing ------------------------------------------------------------------

std::vector<double> window_lengths(double duration_s, double win_s, double min_remainder_s) {
  if (!(win_s > 0.0)) throw ConfigError("data.win_s must be > 0");
  if (duration_s <= win_s) return {duration_s};
  const double eps = 1e-9;
  const auto full = static_cast<std::size_t>(std::floor(duration_s / win_s + eps));
  std::vector<double> out(full, win_s);
  const double rem = duration_s - static_cast<double>(full) * win_s;
  if (rem >= min_remainder_s - eps && rem > eps) out.push_back(rem);
  return out;
}

namespace {

std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur.push_back(text[i]);
    const bool end = (text[i] == '.' || text[i] == '!' || text[i] == '?') && (i + 1 == text.size() || text[i + 1] == ' ');
    if (end) {
      const auto b = cur.find_first_not_of(' ');
      if (b != std::string::npos) out.push_back(cur.substr(b));
      cur.clear();
    }
  }
  const auto b = cur.find_first_not_of(' ');
  if (b != std::string::npos) out.push_back(cur.substr(b));
  return out;
}

std::vector<std::string> text_units(const Sample& s) {
  if (s.scenario != Scenario::SelfNarration) {
    if (auto qa = parse_qa(*s.text)) {
      std::vector<std::string> out;
      for (const auto& p : *qa) out.push_back(format_qa(p));
      return out;
    }
  }
  return sentences(*s.text);
}

Matrix frame_slice(const Matrix& m, std::size_t begin, std::size_t end) {
  begin = std::min(begin, m.rows() - 1);
  end = std::clamp(end, begin + 1, m.rows());
  Matrix out(end - begin, m.cols());
  std::copy_n(m.values().data() + begin * m.cols(), out.size(), out.values().data());
  return out;
}

Sample slice_sample(const Sample& s, double t0, double t1) {
  Sample seg = s;
  if (s.audio) {
    const double sr = static_cast<double>(s.audio->sample_rate_hz);
    const auto n = s.audio->frames();
    const auto b = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(t0 * sr)));
    const auto e = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(t1 * sr)), b, n);
    const std::size_t ch = s.audio->channels;
    seg.audio->samples.assign(s.audio->samples.begin() + static_cast<std::ptrdiff_t>(b * ch),
                              s.audio->samples.begin() + static_cast<std::ptrdiff_t>(e * ch));
  }
  if (s.cues) {
    const double fps = s.cues->fps;
    const auto b = static_cast<std::size_t>(std::llround(t0 * fps));
    const auto e = static_cast<std::size_t>(std::llround(t1 * fps));
    for (std::size_t m = 0; m < kCueCount; ++m) seg.cues->streams[m] = frame_slice(s.cues->streams[m], b, e);
  }
  return seg;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
  return out;
}

}  // namespace

std::vector<Sample> window(const Sample& s, double win_s, double min_remainder_s) {
  if (s.audio && s.cues) {
    const double gap = std::abs(s.audio->duration_s() - s.cues->duration_s());
    if (gap > 1.0 / s.cues->fps + 1e-9) {
      throw DataError("sample " + s.id + ": audio and cue durations differ by " + std::to_string(gap) + " s");
    }
  }
  const double duration = s.duration_s();
  const auto lengths = window_lengths(duration, win_s, min_remainder_s);
  if (lengths.size() == 1 && lengths[0] == duration) return {s};

  std::vector<std::string> units;
  if (s.text) units = text_units(s);
  std::vector<std::vector<std::string>> seg_units(lengths.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    const double center = (static_cast<double>(i) + 0.5) / static_cast<double>(units.size()) * duration;
    const auto k = static_cast<std::size_t>(std::floor(center / win_s));
    if (k < lengths.size()) seg_units[k].push_back(units[i]);
  }
  std::vector<Sample> out;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    const double t0 = static_cast<double>(k) * win_s;
    Sample seg = slice_sample(s, t0, t0 + lengths[k]);
    seg.id = s.id + "-w" + zero_pad(k, 2);
    if (s.text) seg.text = seg_units[k].empty() ? std::nullopt : std::optional<std::string>(join(seg_units[k]));
    out.push_back(std::move(seg));
  }
  return out;
}

// --- QA splitting / recombination -------------------------------------------------

std::optional<std::vector<QaPair>> parse_qa(std::string_view text) {
  std::vector<std::size_t> starts;
  for (std::size_t pos = text.find("Q:"); pos != std::string_view::npos; pos = text.find("Q:", pos + 2)) {
    if (pos == 0 || text[pos - 1] == ' ') starts.push_back(pos);
  }
  if (starts.empty()) return std::nullopt;
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(' ');
    if (b == std::string_view::npos) return std::string();
    return std::string(s.substr(b, s.find_last_not_of(' ') - b + 1));
  };
  std::vector<QaPair> out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : text.size();
    const std::string_view chunk = text.substr(starts[i] + 2, end - starts[i] - 2);
    const auto a = chunk.find(" A:");
    if (a == std::string_view::npos) return std::nullopt;
    QaPair p{trim(chunk.substr(0, a)), trim(chunk.substr(a + 3))};
    if (p.question.empty() || p.answer.empty()) return std::nullopt;
    out.push_back(std::move(p));
  }
  return out;
}

std::string format_qa(const QaPair& p) { return "Q: " + p.question + " A: " + p.answer; }

std::vector<Sample> qa_augment(const std::vector<Sample>& samples, std::vector<std::string>* warnings) {
  std::vector<Sample> out;
  for (const Sample& s : samples) {
    if (s.scenario == Scenario::SelfNarration || !s.text) {
      out.push_back(s);
      continue;
    }
    const auto qa = parse_qa(*s.text);
    if (!qa) {
      if (warnings) warnings->push_back("sample " + s.id + ": no parseable QA pairs, kept unsplit");
      out.push_back(s);
      continue;
    }
    const std::size_t n = qa->size();
    if (n == 1) {
      out.push_back(s);
      continue;
    }
    for (std::size_t k = 0; k < n; ++k) {
      Sample inst = s;
      inst.id = s.id + "-qa" + zero_pad(k, 2);
      inst.text = format_qa((*qa)[k]);
      if (s.audio) {
        const std::size_t frames = s.audio->frames(), ch = s.audio->channels;
        const std::size_t b = k * frames / n, e = (k + 1) * frames / n;
        inst.audio->samples.assign(s.audio->samples.begin() + static_cast<std::ptrdiff_t>(b * ch),
                                   s.audio->samples.begin() + static_cast<std::ptrdiff_t>(e * ch));
      }
      if (s.cues) {
        const std::size_t t = s.cues->frames();
        for (std::size_t m = 0; m < kCueCount; ++m)
          inst.cues->streams[m] = frame_slice(s.cues->streams[m], k * t / n, (k + 1) * t / n);
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<Sample> qa_recombine(const std::vector<Sample>& train, std::uint64_t seed) {
  std::size_t counts[2] = {0, 0};
  for (const Sample& s : train) {
    if (s.split != "train") throw DataError("qa_recombine: sample " + s.id + " is in the " + s.split + " split");
    ++counts[s.label];
  }
  std::vector<Sample> out = train;
  if (counts[0] <= counts[1] + 1 && counts[1] <= counts[0] + 1) return out;
  const int minority = counts[1] < counts[0] ? 1 : 0;
  const std::size_t need = counts[1 - minority] - counts[minority];

  std::vector<std::size_t> pool;
  std::vector<QaPair> pairs(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Sample& s = train[i];
    if (s.label != minority || s.scenario == Scenario::SelfNarration || !s.text) continue;
    const auto qa = parse_qa(*s.text);
    if (!qa || qa->size() != 1) continue;
    pairs[i] = (*qa)[0];
    pool.push_back(i);
  }
  if (pool.size() < 2) {
    throw DataError("qa_recombine: " + std::to_string(pool.size()) + " single-pair QA instances of class " +
                    std::to_string(minority) + ", need at least 2");
  }
  Rng rng(mix_seed(seed, fnv1a("qa_recombine")));
  std::size_t made = 0;
  while (made < need) {
    std::vector<std::size_t> perm = pool;
    rng.shuffle(perm);
    for (std::size_t i = 0; i < perm.size() && made < need; ++i) {
      const std::size_t q = perm[i], a = perm[(i + 1) % perm.size()];
      Sample s = train[a];
      s.id = train[a].id + "-rc" + zero_pad(made, 4);
      s.text = format_qa({pairs[q].question, pairs[a].answer});
      out.push_back(std::move(s));
      ++made;
    }
  }
  return out;
}

PrepResult prepare(const std::vector<Sample>& samples, const PrepConfig& cfg, std::uint64_t seed) {
  PrepResult r;
  std::vector<Sample> train, test;
  for (const Sample& s : samples) {
    for (Sample& seg : window(unify_params(s, cfg.unify), cfg.win_s, cfg.min_remainder_s)) {
      (seg.split == "train" ? train : test).push_back(std::move(seg));
    }
  }
  if (cfg.qa_augment) {
    train = qa_augment(train, &r.warnings);
    test = qa_augment(test, &r.warnings);
  }
  if (cfg.qa_recombine && !train.empty()) train = qa_recombine(train, seed);
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(train.begin(), train.end(), by_id);
  std::sort(test.begin(), test.end(), by_id);
  r.train = std::move(train);
  r.test = std::move(test);
  return r;
}

}  // namespace scd
