#pragma once

// Shared fixtures for the unit tests: seeded random matrices, reference
// kernels written independently of the library, and small model configs.

#include <cmath>
#include <vector>

#include "scd/config.hpp"
#include "scd/tensor.hpp"

namespace scd::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i]));
  for (double& v : e) v /= s;
  return e;
}

inline Matrix naive_softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::vector<double> row(x.row(r).begin(), x.row(r).end());
    const auto s = naive_softmax(row);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = s[c];
  }
  return out;
}

/// softmax(q k^T / sqrt(dk)) v with explicit loops.
inline Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix scores(q.rows(), k.rows());
  const double inv = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      scores(i, j) = s * inv;
    }
  return naive_matmul(naive_softmax_rows(scores), v);
}

inline Matrix naive_layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= n;
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps) * gain[c] + bias[c];
  }
  return out;
}

/// Same-padded temporal convolution with edge replication; weight row = tap * ch_in + c.
inline Matrix naive_conv_same(const Matrix& x, const Matrix& w, std::size_t width, const Matrix& bias) {
  const std::size_t t = x.rows(), cin = x.cols(), cout = w.cols();
  const std::ptrdiff_t left = static_cast<std::ptrdiff_t>((width - 1) / 2);
  Matrix out(t, cout);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t o = 0; o < cout; ++o) {
      double s = bias.empty() ? 0.0 : bias[o];
      for (std::size_t tap = 0; tap < width; ++tap) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(tap) - left;
        src = std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(t) - 1);
        for (std::size_t c = 0; c < cin; ++c) s += x(static_cast<std::size_t>(src), c) * w(tap * cin + c, o);
      }
      out(i, o) = s;
    }
  return out;
}

inline double naive_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// A config small enough for finite-difference checks over every tensor.
inline Config tiny_config() {
  Config c = default_config();
  c.model.decoder.layers = 1;
  c.model.decoder.d_model = 8;
  c.model.decoder.heads = 2;
  c.model.decoder.d_ff = 8;
  c.model.decoder.max_len = 160;
  c.model.decoder.lora.rank = 2;
  c.fusion.n_tokens = 2;
  c.fusion.d_tokens = 4;
  c.fusion.heads = 2;
  c.encoders.mel.n_mels = 6;
  c.encoders.clusters = 2;
  c.encoders.video.d_cue = 4;
  c.encoders.video.cue_dims = {3, 2, 2, 3};
  return c;
}

}  // namespace scd::test
