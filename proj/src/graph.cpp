#include "scd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scd {

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Param& p) {
  ++p.reads;
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{it->second};
  nodes_.push_back(Node{p.value, {}, {}, &p, p.trainable});
  bound_.emplace(&p, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::push(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var{nodes_.size() - 1};
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    add_into(n.grad, g);
  }
}

void Graph::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) throw DimensionError("backward: loss must be 1x1");
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      Matrix g = std::move(n.grad);
      n.backward(*this, g);
      n.grad = std::move(g);
    }
    if (n.param != nullptr) {
      Param& p = *n.param;
      if (p.grad.empty()) p.zero_grad();
      add_into(p.grad, n.grad);
    }
  }
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  return g.push(scd::matmul(g.value(a), g.value(b)), {a, b}, [a, b](Graph& gr, const Matrix& d) {
    if (gr.needs_grad(a)) gr.accumulate(a, matmul_nt(d, gr.value(b)));
    if (gr.needs_grad(b)) gr.accumulate(b, matmul_tn(gr.value(a), d));
  });
}

Var matmul_nt(Graph& g, Var a, Var b) {
  return g.push(scd::matmul_nt(g.value(a), g.value(b)), {a, b}, [a, b](Graph& gr, const Matrix& d) {
    if (gr.needs_grad(a)) gr.accumulate(a, scd::matmul(d, gr.value(b)));
    if (gr.needs_grad(b)) gr.accumulate(b, matmul_tn(d, gr.value(a)));
  });
}

Var add(Graph& g, Var a, Var b) {
  Matrix out = g.value(a);
  add_into(out, g.value(b));
  return g.push(std::move(out), {a, b}, [a, b](Graph& gr, const Matrix& d) {
    gr.accumulate(a, d);
    gr.accumulate(b, d);
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Matrix& bv = g.value(b);
  Matrix out = g.value(a);
  require(out.same_shape(bv), "sub: shape mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& gr, const Matrix& d) {
    gr.accumulate(a, d);
    if (gr.needs_grad(b)) {
      Matrix nd = d;
      for (double& v : nd.values()) v = -v;
      gr.accumulate(b, nd);
    }
  });
}

Var add_row(Graph& g, Var a, Var row) {
  const Matrix& r = g.value(row);
  Matrix out = g.value(a);
  require(r.rows() == 1 && r.cols() == out.cols(), "add_row: expected 1x" + std::to_string(out.cols()));
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r(0, j);
  return g.push(std::move(out), {a, row}, [a, row](Graph& gr, const Matrix& d) {
    gr.accumulate(a, d);
    if (gr.needs_grad(row)) {
      Matrix s(1, d.cols());
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j) s(0, j) += d(i, j);
      gr.accumulate(row, s);
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Matrix out = g.value(a);
  for (double& v : out.values()) v *= s;
  return g.push(std::move(out), {a}, [a, s](Graph& gr, const Matrix& d) {
    Matrix da = d;
    for (double& v : da.values()) v *= s;
    gr.accumulate(a, da);
  });
}

Var hadamard(Graph& g, Var a, Var b) {
  const Matrix& bv = g.value(b);
  Matrix out = g.value(a);
  require(out.same_shape(bv), "hadamard: shape mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& gr, const Matrix& d) {
    if (gr.needs_grad(a)) {
      Matrix da = d;
      const Matrix& bv = gr.value(b);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
      gr.accumulate(a, da);
    }
    if (gr.needs_grad(b)) {
      Matrix db = d;
      const Matrix& av = gr.value(a);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
      gr.accumulate(b, db);
    }
  });
}

Var sigmoid(Graph& g, Var a) {
  Matrix out = g.value(a);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t self = g.size();
  return g.push(std::move(out), {a}, [a, self](Graph& gr, const Matrix& d) {
    const Matrix& y = gr.value(Var{self});
    Matrix da = d;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= y[i] * (1.0 - y[i]);
    gr.accumulate(a, da);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var gelu(Graph& g, Var a) {
  Matrix out = g.value(a);
  for (double& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
  return g.push(std::move(out), {a}, [a](Graph& gr, const Matrix& d) {
    const Matrix& x = gr.value(a);
    Matrix da = d;
    for (std::size_t i = 0; i < da.size(); ++i) {
      const double xi = x[i];
      const double th = std::tanh(kGeluC * (xi + kGeluK * xi * xi * xi));
      const double dudx = kGeluC * (1.0 + 3.0 * kGeluK * xi * xi);
      da[i] *= 0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * dudx;
    }
    gr.accumulate(a, da);
  });
}

Var layer_norm_rows(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = g.value(x);
  const Matrix& gv = g.value(gain);
  const Matrix& bv = g.value(bias);
  const std::size_t n = xv.cols();
  require(gv.rows() == 1 && gv.cols() == n && bv.same_shape(gv), "layer_norm_rows: affine shape");
  Matrix xhat(xv.rows(), n);
  Matrix out(xv.rows(), n);
  std::vector<double> inv(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (row[j] - mean) * inv[r];
      out(r, j) = xhat(r, j) * gv(0, j) + bv(0, j);
    }
  }
  return g.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](Graph& gr, const Matrix& d) {
                  const Matrix& gv = gr.value(gain);
                  const std::size_t n = d.cols();
                  if (gr.needs_grad(gain) || gr.needs_grad(bias)) {
                    Matrix dg(1, n), db(1, n);
                    for (std::size_t r = 0; r < d.rows(); ++r)
                      for (std::size_t j = 0; j < n; ++j) {
                        dg(0, j) += d(r, j) * xhat(r, j);
                        db(0, j) += d(r, j);
                      }
                    gr.accumulate(gain, dg);
                    gr.accumulate(bias, db);
                  }
                  if (gr.needs_grad(x)) {
                    Matrix dx(d.rows(), n);
                    for (std::size_t r = 0; r < d.rows(); ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = d(r, j) * gv(0, j);
                        m1 += dxh;
                        m2 += dxh * xhat(r, j);
                      }
                      m1 /= static_cast<double>(n);
                      m2 /= static_cast<double>(n);
                      for (std::size_t j = 0; j < n; ++j)
                        dx(r, j) = inv[r] * (d(r, j) * gv(0, j) - m1 - xhat(r, j) * m2);
                    }
                    gr.accumulate(x, dx);
                  }
                });
}

namespace {

Var softmax_impl(Graph& g, Var x, const Matrix* allow) {
  const Matrix& xv = g.value(x);
  if (allow != nullptr) require(allow->same_shape(xv), "masked_softmax_rows: mask shape");
  require(xv.cols() > 0, "softmax_rows: empty rows");
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < xv.cols(); ++j)
      if (allow == nullptr || (*allow)(r, j) != 0.0) mx = std::max(mx, xv(r, j));
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      if (allow != nullptr && (*allow)(r, j) == 0.0) continue;
      out(r, j) = std::exp(xv(r, j) - mx);
      s += out(r, j);
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) out(r, j) /= s;
  }
  const std::size_t self = g.size();
  return g.push(std::move(out), {x}, [x, self](Graph& gr, const Matrix& d) {
    const Matrix& p = gr.value(Var{self});
    Matrix dx(d.rows(), d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d.cols(); ++j) dot += p(r, j) * d(r, j);
      for (std::size_t j = 0; j < d.cols(); ++j) dx(r, j) = p(r, j) * (d(r, j) - dot);
    }
    gr.accumulate(x, dx);
  });
}

}  // namespace

Var softmax_rows(Graph& g, Var x) { return softmax_impl(g, x, nullptr); }

Var masked_softmax_rows(Graph& g, Var x, const Matrix& allow) { return softmax_impl(g, x, &allow); }

Var conv1d_same(Graph& g, Var x, Var weight, Var bias, std::size_t width) {
  Matrix out = conv1d(g.value(x), g.value(weight), width, g.value(bias), 1, Padding::Same);
  return g.push(std::move(out), {x, weight, bias}, [x, weight, bias, width](Graph& gr, const Matrix& d) {
    const Matrix& xv = gr.value(x);
    const Matrix& w = gr.value(weight);
    const std::size_t t = xv.rows(), cin = xv.cols(), cout = w.cols();
    const std::size_t left = (width - 1) / 2;
    Matrix dx(t, cin), dw(w.rows(), cout);
    Matrix db(1, cout);
    for (std::size_t o = 0; o < t; ++o) {
      for (std::size_t j = 0; j < cout; ++j) db(0, j) += d(o, j);
      for (std::size_t tap = 0; tap < width; ++tap) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o + tap) - static_cast<std::ptrdiff_t>(left);
        const std::size_t s = static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(t) - 1));
        for (std::size_t c = 0; c < cin; ++c) {
          const double* wr = w.row(tap * cin + c).data();
          double* dwr = dw.row(tap * cin + c).data();
          const double xs = xv(s, c);
          double acc = 0.0;
          for (std::size_t j = 0; j < cout; ++j) {
            dwr[j] += xs * d(o, j);
            acc += wr[j] * d(o, j);
          }
          dx(s, c) += acc;
        }
      }
    }
    gr.accumulate(x, dx);
    gr.accumulate(weight, dw);
    if (!gr.value(bias).empty()) gr.accumulate(bias, db);
  });
}

Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = g.value(x);
  require(begin + count <= xv.cols(), "slice_cols: out of range");
  Matrix out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    std::copy_n(xv.row(r).data() + begin, count, out.row(r).data());
  return g.push(std::move(out), {x}, [x, begin, count](Graph& gr, const Matrix& d) {
    const Matrix& xv = gr.value(x);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < d.rows(); ++r) std::copy_n(d.row(r).data(), count, dx.row(r).data() + begin);
    gr.accumulate(x, dx);
  });
}

Var slice_rows(Graph& g, Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = g.value(x);
  require(begin + count <= xv.rows(), "slice_rows: out of range");
  Matrix out(count, xv.cols());
  std::copy_n(xv.values().data() + begin * xv.cols(), count * xv.cols(), out.values().data());
  return g.push(std::move(out), {x}, [x, begin](Graph& gr, const Matrix& d) {
    const Matrix& xv = gr.value(x);
    Matrix dx(xv.rows(), xv.cols());
    std::copy_n(d.values().data(), d.size(), dx.values().data() + begin * xv.cols());
    gr.accumulate(x, dx);
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t rows = g.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, "concat_cols: row mismatch");
    cols += g.value(p).cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& v = g.value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.row(r).data(), v.cols(), out.row(r).data() + off);
    off += v.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [ps](Graph& gr, const Matrix& d) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t c = gr.value(p).cols();
      if (gr.needs_grad(p)) {
        Matrix dp(d.rows(), c);
        for (std::size_t r = 0; r < d.rows(); ++r) std::copy_n(d.row(r).data() + off, c, dp.row(r).data());
        gr.accumulate(p, dp);
      }
      off += c;
    }
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const std::size_t cols = g.value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    require(g.value(p).cols() == cols, "concat_rows: column mismatch");
    rows += g.value(p).rows();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& v = g.value(p);
    std::copy_n(v.values().data(), v.size(), out.values().data() + off);
    off += v.size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [ps](Graph& gr, const Matrix& d) {
    std::size_t off = 0;
    for (Var p : ps) {
      const Matrix& v = gr.value(p);
      if (gr.needs_grad(p)) {
        Matrix dp(v.rows(), v.cols());
        std::copy_n(d.values().data() + off, v.size(), dp.values().data());
        gr.accumulate(p, dp);
      }
      off += v.size();
    }
  });
}

Var mean_rows(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  require(xv.rows() > 0, "mean_rows: no rows");
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(0, j) += xv(r, j);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (double& v : out.values()) v *= inv;
  return g.push(std::move(out), {x}, [x, inv](Graph& gr, const Matrix& d) {
    const Matrix& xv = gr.value(x);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t j = 0; j < xv.cols(); ++j) dx(r, j) = d(0, j) * inv;
    gr.accumulate(x, dx);
  });
}

Var sum(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "sum: no parts");
  Matrix out = g.value(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) add_into(out, g.value(parts[i]));
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [ps](Graph& gr, const Matrix& d) {
    for (Var p : ps) gr.accumulate(p, d);
  });
}

Var reshape(Graph& g, Var x, std::size_t rows, std::size_t cols) {
  const Matrix& xv = g.value(x);
  require(rows * cols == xv.size(), "reshape: " + xv.shape_str() + " -> " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
  Matrix out(rows, cols, std::vector<double>(xv.values().begin(), xv.values().end()));
  return g.push(std::move(out), {x}, [x](Graph& gr, const Matrix& d) {
    const Matrix& xv = gr.value(x);
    gr.accumulate(x, Matrix(xv.rows(), xv.cols(), std::vector<double>(d.values().begin(), d.values().end())));
  });
}

Var gather_rows(Graph& g, Var table, std::span<const std::size_t> ids) {
  const Matrix& tv = g.value(table);
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < tv.rows(), "gather_rows: id out of range");
    std::copy_n(tv.row(ids[i]).data(), tv.cols(), out.row(i).data());
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return g.push(std::move(out), {table}, [table, idv](Graph& gr, const Matrix& d) {
    const Matrix& tv = gr.value(table);
    Matrix dt(tv.rows(), tv.cols());
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < tv.cols(); ++j) dt(idv[i], j) += d(i, j);
    gr.accumulate(table, dt);
  });
}

namespace {

// y = x / |x| over `n` contiguous entries; zero input has zero output and zero gradient.
void l2_forward(const double* x, double* y, std::size_t n, double& norm) {
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
  norm = std::sqrt(ss);
  for (std::size_t i = 0; i < n; ++i) y[i] = norm > 0.0 ? x[i] / norm : x[i];
}

void l2_backward(const double* y, const double* dy, double* dx, std::size_t n, double norm) {
  if (norm == 0.0) return;
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += y[i] * dy[i];
  for (std::size_t i = 0; i < n; ++i) dx[i] = (dy[i] - y[i] * dot) / norm;
}

}  // namespace

Var l2_normalize_rows(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  Matrix out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) l2_forward(xv.row(r).data(), out.row(r).data(), xv.cols(), norms[r]);
  const std::size_t self = g.size();
  return g.push(std::move(out), {x}, [x, self, norms = std::move(norms)](Graph& gr, const Matrix& d) {
    const Matrix& y = gr.value(Var{self});
    Matrix dx(d.rows(), d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r)
      l2_backward(y.row(r).data(), d.row(r).data(), dx.row(r).data(), d.cols(), norms[r]);
    gr.accumulate(x, dx);
  });
}

Var l2_normalize_all(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  Matrix out(xv.rows(), xv.cols());
  double norm = 0.0;
  l2_forward(xv.values().data(), out.values().data(), xv.size(), norm);
  const std::size_t self = g.size();
  return g.push(std::move(out), {x}, [x, self, norm](Graph& gr, const Matrix& d) {
    const Matrix& y = gr.value(Var{self});
    Matrix dx(d.rows(), d.cols());
    l2_backward(y.values().data(), d.values().data(), dx.values().data(), d.size(), norm);
    gr.accumulate(x, dx);
  });
}

Var vlad_aggregate(Graph& g, Var alpha, Var frames, Var centers) {
  const Matrix& al = g.value(alpha);
  const Matrix& fr = g.value(frames);
  const Matrix& ce = g.value(centers);
  require(al.rows() == fr.rows() && al.cols() == ce.rows() && fr.cols() == ce.cols(),
          "vlad_aggregate: alpha " + al.shape_str() + ", frames " + fr.shape_str() + ", centers " +
              ce.shape_str());
  const std::size_t t = fr.rows(), k_count = ce.rows(), dim = ce.cols();
  Matrix out(k_count, dim);
  std::vector<double> terms(t);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t d = 0; d < dim; ++d) {
      for (std::size_t i = 0; i < t; ++i) terms[i] = al(i, k) * (fr(i, d) - ce(k, d));
      std::sort(terms.begin(), terms.end());
      double s = 0.0;
      for (double v : terms) s += v;
      out(k, d) = s;
    }
  }
  return g.push(std::move(out), {alpha, frames, centers}, [alpha, frames, centers](Graph& gr, const Matrix& dout) {
    const Matrix& al = gr.value(alpha);
    const Matrix& fr = gr.value(frames);
    const Matrix& ce = gr.value(centers);
    const std::size_t t = fr.rows(), k_count = ce.rows(), dim = ce.cols();
    if (gr.needs_grad(alpha)) {
      Matrix da(t, k_count);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t k = 0; k < k_count; ++k) {
          double s = 0.0;
          for (std::size_t d = 0; d < dim; ++d) s += dout(k, d) * (fr(i, d) - ce(k, d));
          da(i, k) = s;
        }
      gr.accumulate(alpha, da);
    }
    if (gr.needs_grad(frames)) gr.accumulate(frames, scd::matmul(al, dout));
    if (gr.needs_grad(centers)) {
      Matrix dc(k_count, dim);
      for (std::size_t k = 0; k < k_count; ++k) {
        double mass = 0.0;
        for (std::size_t i = 0; i < t; ++i) mass += al(i, k);
        for (std::size_t d = 0; d < dim; ++d) dc(k, d) = -mass * dout(k, d);
      }
      gr.accumulate(centers, dc);
    }
  });
}

Var cross_entropy(Graph& g, Var logits, std::span<const int> targets) {
  const Matrix& z = g.value(logits);
  require(targets.size() == z.rows(), "cross_entropy: one target per logits row required");
  std::size_t count = 0;
  for (int t : targets) {
    if (t >= 0) {
      require(static_cast<std::size_t>(t) < z.cols(), "cross_entropy: target out of vocabulary");
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: no unmasked target position");
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (targets[r] < 0) continue;
    auto p = softmax(z.row(r));
    std::copy(p.begin(), p.end(), probs.row(r).begin());
    double mx = z(r, 0);
    for (double v : z.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z.row(r)) s += std::exp(v - mx);
    total += (mx + std::log(s)) - z(r, static_cast<std::size_t>(targets[r]));
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tv(targets.begin(), targets.end());
  return g.push(Matrix(1, 1, total * inv), {logits},
                [logits, tv, inv, probs = std::move(probs)](Graph& gr, const Matrix& d) {
                  Matrix dz(probs.rows(), probs.cols());
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    if (tv[r] < 0) continue;
                    for (std::size_t j = 0; j < probs.cols(); ++j) dz(r, j) = probs(r, j) * inv * d(0, 0);
                    dz(r, static_cast<std::size_t>(tv[r])) -= inv * d(0, 0);
                  }
                  gr.accumulate(logits, dz);
                });
}

double check_gradients(const std::function<Var(Graph&)>& loss, std::span<Param* const> params, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw std::invalid_argument("check_gradients: h must lie in [1e-6, 1e-3]");
  std::vector<bool> was_trainable;
  for (Param* p : params) {
    was_trainable.push_back(p->trainable);
    p->trainable = true;
    p->zero_grad();
  }
  auto evaluate = [&]() {
    Graph g;
    const double v = g.value(loss(g))[0];
    if (!std::isfinite(v)) throw std::domain_error("check_gradients: loss is not finite");
    return v;
  };
  {
    Graph g;
    Var l = loss(g);
    if (!std::isfinite(g.value(l)[0])) throw std::domain_error("check_gradients: loss is not finite");
    g.backward(l);
  }
  double worst = 0.0;
  for (Param* p : params) {
    if (p->grad.empty()) p->zero_grad();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = evaluate();
      p->value[i] = orig - h;
      const double down = evaluate();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(p->grad[i] - numeric) / (std::abs(numeric) + 1e-8));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->trainable = was_trainable[i];
  return worst;
}

}  // namespace scd
