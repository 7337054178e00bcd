#include "scd/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace scd {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::row_vector(std::span<const double> v) {
  return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 ||
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace {
void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw DimensionError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

// Zero entries of the left operand are skipped, so masked attention weights never
// touch the rows they exclude.
Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* out = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

void add_into(Matrix& dst, const Matrix& src) {
  require(dst.same_shape(src), "add", dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<double> softmax(std::span<const double> row) {
  if (row.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> out(row.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (x.empty() || gain.size() != x.size() || bias.size() != x.size()) {
    throw DimensionError("layer_norm: dimension mismatch");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

Matrix conv1d(const Matrix& seq, const Matrix& weight, std::size_t width, const Matrix& bias,
              std::size_t stride, Padding padding) {
  const std::size_t t = seq.rows();
  const std::size_t cin = seq.cols();
  if (t == 0) throw DimensionError("conv1d: empty sequence");
  if (width == 0 || stride == 0) throw DimensionError("conv1d: width and stride must be >= 1");
  if (weight.rows() != width * cin) {
    throw DimensionError("conv1d: weight rows " + std::to_string(weight.rows()) +
                         " != width*ch_in " + std::to_string(width * cin));
  }
  const std::size_t cout = weight.cols();
  if (!bias.empty() && (bias.rows() != 1 || bias.cols() != cout)) {
    throw DimensionError("conv1d: bias must be 1x" + std::to_string(cout));
  }
  const std::size_t left = padding == Padding::Same ? (width - 1) / 2 : 0;
  const std::size_t padded = padding == Padding::Same ? t + width - 1 : t;
  if (width > padded) {
    throw DimensionError("conv1d: kernel width " + std::to_string(width) +
                         " exceeds padded length " + std::to_string(padded));
  }
  const std::size_t out_t = (padded - width) / stride + 1;
  Matrix out(out_t, cout);
  for (std::size_t o = 0; o < out_t; ++o) {
    double* dst = out.row(o).data();
    if (!bias.empty()) std::copy_n(bias.row(0).data(), cout, dst);
    for (std::size_t tap = 0; tap < width; ++tap) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + tap) -
                                 static_cast<std::ptrdiff_t>(left);
      const std::size_t s =
          static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(t) - 1));
      for (std::size_t c = 0; c < cin; ++c) {
        const double x = seq(s, c);
        if (x == 0.0) continue;
        const double* w = weight.row(tap * cin + c).data();
        for (std::size_t j = 0; j < cout; ++j) dst[j] += x * w[j];
      }
    }
  }
  return out;
}

std::vector<double> l2_normalize(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  std::vector<double> out(x.begin(), x.end());
  if (ss == 0.0) return out;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& v : out) v *= inv;
  return out;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple to reason about.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return static_cast<std::size_t>(v % n);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace scd
