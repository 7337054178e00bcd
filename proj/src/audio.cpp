#include "scd/audio.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace scd {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

FrameGeometry frame_geometry(std::size_t sample_rate_hz, const MelConfig& cfg) {
  if (sample_rate_hz == 0) throw std::invalid_argument("log_mel: sample rate must be positive");
  FrameGeometry geo;
  geo.win = static_cast<std::size_t>(std::llround(cfg.win_ms * 1e-3 * static_cast<double>(sample_rate_hz)));
  geo.hop = static_cast<std::size_t>(std::llround(cfg.hop_ms * 1e-3 * static_cast<double>(sample_rate_hz)));
  if (geo.win == 0 || geo.hop == 0) throw std::invalid_argument("log_mel: window and hop must span >= 1 sample");
  geo.n_fft = 1;
  while (geo.n_fft < geo.win) geo.n_fft <<= 1;
  return geo;
}

Matrix mel_filterbank(std::size_t sample_rate_hz, std::size_t n_fft, std::size_t n_mels) {
  const std::size_t bins = n_fft / 2 + 1;
  const double mel_max = hz_to_mel(static_cast<double>(sample_rate_hz) / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  Matrix fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * static_cast<double>(sample_rate_hz) / static_cast<double>(n_fft);
      if (f > lo && f < hi) fb(m, b) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

namespace {

struct FftwPlan {
  fftw_plan plan;
  ~FftwPlan() { fftw_destroy_plan(plan); }
};

}  // namespace

MelFrames log_mel(const Waveform& w, const MelConfig& cfg) {
  if (w.channels != 1) throw std::invalid_argument("log_mel: expected mono audio, got " +
                                                   std::to_string(w.channels) + " channels");
  const FrameGeometry geo = frame_geometry(w.sample_rate_hz, cfg);
  const std::size_t len = w.samples.size();
  if (len < geo.win) {
    throw std::invalid_argument("log_mel: waveform has " + std::to_string(len) + " samples; at least " +
                                std::to_string(geo.win) + " are required for one window");
  }
  const std::size_t t = 1 + (len - geo.win) / geo.hop;
  const std::size_t bins = geo.n_fft / 2 + 1;
  const Matrix fb = mel_filterbank(w.sample_rate_hz, geo.n_fft, cfg.n_mels);

  std::vector<double> hann(geo.win);
  for (std::size_t i = 0; i < geo.win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                                   static_cast<double>(geo.win));

  std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(geo.n_fft), &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(bins), &fftw_free);
  FftwPlan plan{fftw_plan_dft_r2c_1d(static_cast<int>(geo.n_fft), in.get(), out.get(), FFTW_ESTIMATE)};

  MelFrames mel{Matrix(t, cfg.n_mels)};
  std::vector<double> power(bins);
  for (std::size_t f = 0; f < t; ++f) {
    const std::size_t start = f * geo.hop;
    for (std::size_t i = 0; i < geo.n_fft; ++i) in.get()[i] = i < geo.win ? w.samples[start + i] * hann[i] : 0.0;
    fftw_execute(plan.plan);
    for (std::size_t b = 0; b < bins; ++b) power[b] = out.get()[b][0] * out.get()[b][0] + out.get()[b][1] * out.get()[b][1];
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += fb(m, b) * power[b];
      mel.values(f, m) = std::log(e + kLogMelFloor);
    }
  }
  return mel;
}

VladCodebook make_codebook(std::size_t clusters, std::size_t n_mels, Rng& rng) {
  if (clusters == 0) throw std::invalid_argument("codebook: need at least one cluster");
  VladCodebook cb;
  cb.centers = Param("audio.vlad.centers", uniform_init(clusters, n_mels, 1, rng));
  cb.assign_weight = Param("audio.vlad.assign_weight", uniform_init(n_mels, clusters, n_mels, rng));
  cb.assign_bias = Param("audio.vlad.assign_bias", uniform_init(1, clusters, n_mels, rng));
  return cb;
}

TokenAdapter make_adapter(const std::string& prefix, std::size_t in_dim, std::size_t n_tokens,
                          std::size_t d_tokens, Rng& rng) {
  TokenAdapter a;
  a.n_tokens = n_tokens;
  a.d_tokens = d_tokens;
  a.weight = Param(prefix + ".weight", uniform_init(in_dim, n_tokens * d_tokens, in_dim, rng));
  a.bias = Param(prefix + ".bias", uniform_init(1, n_tokens * d_tokens, in_dim, rng));
  return a;
}

Var apply_adapter(Graph& g, Var features, TokenAdapter& adapter) {
  const Matrix& f = g.value(features);
  Var flat = reshape(g, features, 1, f.size());
  Var y = add_row(g, matmul(g, flat, g.param(adapter.weight)), g.param(adapter.bias));
  return reshape(g, y, adapter.n_tokens, adapter.d_tokens);
}

Var soft_assign(Graph& g, Var frames, VladCodebook& cb) {
  if (g.value(frames).cols() != cb.dim()) {
    throw DimensionError("soft_assign: frames have " + std::to_string(g.value(frames).cols()) +
                         " features, codebook expects " + std::to_string(cb.dim()));
  }
  Var logits = add_row(g, matmul(g, frames, g.param(cb.assign_weight)), g.param(cb.assign_bias));
  return softmax_rows(g, logits);
}

Var netvlad(Graph& g, Var frames, VladCodebook& cb) {
  Var alpha = soft_assign(g, frames, cb);
  Var residuals = vlad_aggregate(g, alpha, frames, g.param(cb.centers));
  return l2_normalize_all(g, l2_normalize_rows(g, residuals));
}

Matrix soft_assign(const MelFrames& frames, VladCodebook& cb) {
  Graph g;
  return g.value(soft_assign(g, g.constant(frames.values), cb));
}

Matrix netvlad(const MelFrames& frames, VladCodebook& cb) {
  if (frames.values.rows() == 0) throw DimensionError("netvlad: no frames");
  Graph g;
  return g.value(netvlad(g, g.constant(frames.values), cb));
}

AudioEncoder make_audio_encoder(std::size_t clusters, std::size_t n_mels, std::size_t n_tokens,
                                std::size_t d_tokens, Rng& rng) {
  AudioEncoder enc;
  enc.codebook = make_codebook(clusters, n_mels, rng);
  enc.adapter = make_adapter("audio.adapter", clusters * n_mels, n_tokens, d_tokens, rng);
  return enc;
}

Matrix encode_audio(const Waveform& w, const MelConfig& mel, AudioEncoder& enc) {
  const MelFrames frames = log_mel(w, mel);
  Graph g;
  Var emb = netvlad(g, g.constant(frames.values), enc.codebook);
  return g.value(apply_adapter(g, emb, enc.adapter));
}

}  // namespace scd
