#include "prim/ops.hpp"

#include <algorithm>
#include <cmath>

namespace prim {

EdgeGroups EdgeGroups::build(std::vector<std::pair<int32_t, int32_t>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  EdgeGroups eg;
  eg.src.reserve(pairs.size());
  eg.dst.reserve(pairs.size());
  for (size_t e = 0; e < pairs.size(); ++e) {
    eg.dst.push_back(pairs[e].first);
    eg.src.push_back(pairs[e].second);
    if (e == 0 || pairs[e].first != pairs[e - 1].first) {
      eg.offsets.push_back(static_cast<int64_t>(e));
      eg.seg_node.push_back(pairs[e].first);
    }
  }
  eg.offsets.push_back(static_cast<int64_t>(pairs.size()));
  return eg;
}

namespace ops {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// C(m x n) += A(m x k) * B(k x n)
void gemm_nn_acc(const double* A, const double* B, double* C, int64_t m,
                 int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt_acc(const double* A, const double* B, double* C, int64_t m,
                 int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C(k x n) += A(m x k)^T * B(m x n)
void gemm_tn_acc(const double* A, const double* B, double* C, int64_t m,
                 int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* b = B + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor elementwise_unary(Tape& tape, const Tensor& x, double (*f)(double),
                         double (*df)(double)) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      // df is re-derived from the stored input below
      (void)0;
    });
  }
  (void)df;
  return out;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "hadamard: shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& av = a.value();
      const auto& bv = b.value();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double c) { return affine(tape, x, c, 0.0); }

Tensor affine(Tape& tape, const Tensor& x, double mul, double add) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = mul * xv[i] + add;
  if (out.requires_grad()) {
    tape.record([x, out, mul]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += mul * g[i];
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& xv = x.value();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i)
    ov[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  if (out.requires_grad()) {
    tape.record([x, out, slope]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& xv = x.value();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i)
        gx[i] += (xv[i] > 0.0 ? 1.0 : slope) * g[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& ov = out.value();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += ov[i] * (1.0 - ov[i]) * g[i];
    });
  }
  return out;
}

Tensor log_sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    ov[i] = v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  }
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& xv = x.value();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += stable_sigmoid(-xv[i]) * g[i];
    });
  }
  return out;
}

Tensor mul_const(Tape& tape, const Tensor& x, const std::vector<double>& c) {
  require(c.size() == x.value().size(),
          "mul_const: constant length " + std::to_string(c.size()) +
              " vs tensor " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * c[i];
  if (out.requires_grad()) {
    tape.record([x, out, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c[i];
    });
  }
  return out;
}

// ---- matrix / vector --------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expects matrices, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n}, wants_grad(tape, {&a, &b}));
  gemm_nn_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (out.requires_grad()) {
    tape.record([a, b, out, m, k, n]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad())
        gemm_nt_acc(g.data(), b.value().data(), a.grad().data(), m, n, k);
      if (b.requires_grad())
        gemm_tn_acc(a.value().data(), g.data(), b.grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul_nt: expects matrices, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n}, wants_grad(tape, {&a, &b}));
  gemm_nt_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (out.requires_grad()) {
    tape.record([a, b, out, m, k, n]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad())
        gemm_nn_acc(g.data(), b.value().data(), a.grad().data(), m, n, k);
      if (b.requires_grad())
        gemm_tn_acc(g.data(), a.value().data(), b.grad().data(), m, n, k);
    });
  }
  return out;
}

Tensor matvec(Tape& tape, const Tensor& w, const Tensor& x) {
  require(w.rank() == 2 && x.rank() == 1,
          "matvec: expects matrix and vector, got " + shape_str(w.shape()) +
              " and " + shape_str(x.shape()));
  require(w.cols() == x.numel(), "matvec: dimensions disagree, " +
                                     shape_str(w.shape()) + " x " +
                                     shape_str(x.shape()));
  const int64_t m = w.rows(), k = w.cols();
  Tensor out = Tensor::zeros({m}, wants_grad(tape, {&w, &x}));
  const double* wd = w.value().data();
  const double* xd = x.value().data();
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t p = 0; p < k; ++p) acc += wd[i * k + p] * xd[p];
    out.at(i) = acc;
  }
  if (out.requires_grad()) {
    tape.record([w, x, out, m, k]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (w.requires_grad()) {
        auto& gw = w.grad();
        const auto& xv = x.value();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) gw[i * k + p] += g[i] * xv[p];
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        const auto& wv = w.value();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) gx[p] += wv[i * k + p] * g[i];
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int64_t n = parts[0].rows();
  int64_t total = 0;
  bool any_req = false;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.rows() == n,
            "concat_cols: row mismatch, " + shape_str(p.shape()));
    total += p.cols();
    any_req = any_req || p.requires_grad();
  }
  Tensor out = Tensor::zeros({n, total}, tape.grad_enabled() && any_req);
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t c = p.cols();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < c; ++j) out.at(i, off + j) = p.at(i, j);
    off += c;
  }
  if (out.requires_grad()) {
    tape.record([parts, out, n, total]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      int64_t off = 0;
      for (Tensor p : parts) {
        const int64_t c = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j)
              gp[i * c + j] += g[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, int64_t c0, int64_t c1) {
  require(a.rank() == 2, "slice_cols: expects a matrix");
  require(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  const int64_t n = a.rows(), c = c1 - c0, ac = a.cols();
  Tensor out = Tensor::zeros({n, c}, wants_grad(tape, {&a}));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(i, j) = a.at(i, c0 + j);
  if (out.requires_grad()) {
    tape.record([a, out, n, c, c0, ac]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) ga[i * ac + c0 + j] += g[i * c + j];
    });
  }
  return out;
}

Tensor col(Tape& tape, const Tensor& a, int64_t c) {
  require(a.rank() == 2 && c >= 0 && c < a.cols(), "col: bad column");
  const int64_t n = a.rows(), ac = a.cols();
  Tensor out = Tensor::zeros({n}, wants_grad(tape, {&a}));
  for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i, c);
  if (out.requires_grad()) {
    tape.record([a, out, n, c, ac]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i * ac + c] += g[i];
    });
  }
  return out;
}

Tensor row(Tape& tape, const Tensor& a, int64_t r) {
  require(a.rank() == 2 && r >= 0 && r < a.rows(), "row: bad row");
  const int64_t c = a.cols();
  Tensor out = Tensor::zeros({c}, wants_grad(tape, {&a}));
  for (int64_t j = 0; j < c; ++j) out.at(j) = a.at(r, j);
  if (out.requires_grad()) {
    tape.record([a, out, r, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& ga = a.grad();
      for (int64_t j = 0; j < c; ++j) ga[r * c + j] += g[j];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& m, const std::vector<int32_t>& idx) {
  require(m.rank() == 2, "gather_rows: expects a matrix");
  const int64_t c = m.cols(), rows = m.rows();
  const int64_t n = static_cast<int64_t>(idx.size());
  require(n > 0, "gather_rows: empty index list");
  for (int32_t i : idx)
    require(i >= 0 && i < rows, "gather_rows: index " + std::to_string(i) +
                                    " out of range for " + shape_str(m.shape()));
  Tensor out = Tensor::zeros({n, c}, wants_grad(tape, {&m}));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(i, j) = m.at(idx[i], j);
  if (out.requires_grad()) {
    tape.record([m, out, idx, n, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gm = m.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) gm[idx[i] * c + j] += g[i * c + j];
    });
  }
  return out;
}

Tensor rows_mul_vec(Tape& tape, const Tensor& m, const Tensor& v) {
  require(m.rank() == 2 && v.rank() == 1 && m.cols() == v.numel(),
          "rows_mul_vec: shape mismatch " + shape_str(m.shape()) + " vs " +
              shape_str(v.shape()));
  const int64_t n = m.rows(), c = m.cols();
  Tensor out = Tensor::zeros({n, c}, wants_grad(tape, {&m, &v}));
  const auto& mv = m.value();
  const auto& vv = v.value();
  auto& ov = out.value();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) ov[i * c + j] = mv[i * c + j] * vv[j];
  if (out.requires_grad()) {
    tape.record([m, v, out, n, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (m.requires_grad()) {
        auto& gm = m.grad();
        const auto& vv = v.value();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j) gm[i * c + j] += g[i * c + j] * vv[j];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        const auto& mv = m.value();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j) gv[j] += g[i * c + j] * mv[i * c + j];
      }
    });
  }
  return out;
}

Tensor rows_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && a.shape() == b.shape(),
          "rows_dot: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const int64_t n = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({n}, wants_grad(tape, {&a, &b}));
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < c; ++j) acc += a.at(i, j) * b.at(i, j);
    out.at(i) = acc;
  }
  if (out.requires_grad()) {
    tape.record([a, b, out, n, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv = b.value();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * bv[i * c + j];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.value();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * av[i * c + j];
      }
    });
  }
  return out;
}

Tensor rows_trilinear(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c) {
  require(a.rank() == 2 && a.shape() == b.shape() && a.shape() == c.shape(),
          "rows_trilinear: shape mismatch");
  const int64_t n = a.rows(), d = a.cols();
  bool req = wants_grad(tape, {&a, &b, &c});
  Tensor out = Tensor::zeros({n}, req);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += a.at(i, j) * b.at(i, j) * c.at(i, j);
    out.at(i) = acc;
  }
  if (out.requires_grad()) {
    tape.record([a, b, c, out, n, d]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& av = a.value();
      const auto& bv = b.value();
      const auto& cv = c.value();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            ga[i * d + j] += g[i] * bv[i * d + j] * cv[i * d + j];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            gb[i * d + j] += g[i] * av[i * d + j] * cv[i * d + j];
      }
      if (c.requires_grad()) {
        auto& gc = c.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            gc[i * d + j] += g[i] * av[i * d + j] * bv[i * d + j];
      }
    });
  }
  return out;
}

Tensor rows_sub_scaled(Tape& tape, const Tensor& h, const Tensor& w, const Tensor& s) {
  require(h.rank() == 2 && h.shape() == w.shape(), "rows_sub_scaled: shape mismatch");
  require(s.rank() == 1 && s.numel() == h.rows(), "rows_sub_scaled: bad scale vector");
  const int64_t n = h.rows(), d = h.cols();
  Tensor out = Tensor::zeros({n, d}, wants_grad(tape, {&h, &w, &s}));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = h.at(i, j) - s.at(i) * w.at(i, j);
  if (out.requires_grad()) {
    tape.record([h, w, s, out, n, d]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (h.requires_grad()) {
        auto& gh = h.grad();
        for (size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
      }
      if (w.requires_grad()) {
        auto& gw = w.grad();
        const auto& sv = s.value();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) gw[i * d + j] -= sv[i] * g[i * d + j];
      }
      if (s.requires_grad()) {
        auto& gs = s.grad();
        const auto& wv = w.value();
        for (int64_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j) acc += g[i * d + j] * wv[i * d + j];
          gs[i] -= acc;
        }
      }
    });
  }
  return out;
}

Tensor unit_rows(Tape& tape, const Tensor& w) {
  require(w.rank() == 2, "unit_rows: expects a matrix");
  const int64_t n = w.rows(), d = w.cols();
  Tensor out = Tensor::zeros({n, d}, wants_grad(tape, {&w}));
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int64_t j = 0; j < d; ++j) sq += w.at(i, j) * w.at(i, j);
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      throw Error("unit_rows: degenerate normal vector in row " + std::to_string(i) +
                  (w.name().empty() ? "" : " of '" + w.name() + "'") +
                  ", re-initialization required");
    }
    norms[static_cast<size_t>(i)] = norm;
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = w.at(i, j) / norm;
  }
  if (out.requires_grad()) {
    tape.record([w, out, norms, n, d]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gw = w.grad();
      const auto& u = out.value();
      for (int64_t i = 0; i < n; ++i) {
        double ug = 0.0;
        for (int64_t j = 0; j < d; ++j) ug += u[i * d + j] * g[i * d + j];
        const double inv = 1.0 / norms[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j)
          gw[i * d + j] += (g[i * d + j] - ug * u[i * d + j]) * inv;
      }
    });
  }
  return out;
}

Tensor concat(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 1 && b.rank() == 1, "concat: expects vectors, got " +
                                              shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
  const int64_t na = a.numel(), nb = b.numel();
  Tensor out = Tensor::zeros({na + nb}, wants_grad(tape, {&a, &b}));
  for (int64_t i = 0; i < na; ++i) out.at(i) = a.at(i);
  for (int64_t i = 0; i < nb; ++i) out.at(na + i) = b.at(i);
  if (out.requires_grad()) {
    tape.record([a, b, out, na, nb]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return out;
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 1 && b.rank() == 1 && a.numel() == b.numel(),
          "dot: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  Tensor out = Tensor::zeros({}, wants_grad(tape, {&a, &b}));
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.at(i) * b.at(i);
  out.at(0) = acc;
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const double gv = g[0];
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv = b.value();
        for (size_t i = 0; i < bv.size(); ++i) ga[i] += gv * bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.value();
        for (size_t i = 0; i < av.size(); ++i) gb[i] += gv * av[i];
      }
    });
  }
  return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({}, wants_grad(tape, {&x}));
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  out.at(0) = acc;
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gx = x.grad();
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

Tensor dot_const(Tape& tape, const Tensor& x, const std::vector<double>& c) {
  require(c.size() == x.value().size(), "dot_const: length mismatch");
  Tensor out = Tensor::zeros({}, wants_grad(tape, {&x}));
  double acc = 0.0;
  const auto& xv = x.value();
  for (size_t i = 0; i < xv.size(); ++i) acc += xv[i] * c[i];
  out.at(0) = acc;
  if (out.requires_grad()) {
    tape.record([x, out, c]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * c[i];
    });
  }
  return out;
}

// ---- softmax ----------------------------------------------------------------

std::vector<double> softmax_values(const std::vector<double>& x) {
  if (x.empty()) throw Error("softmax of empty vector");
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  require(x.rank() == 1, "softmax: expects a vector, got " + shape_str(x.shape()));
  Tensor out = Tensor::from({x.numel()}, softmax_values(x.value()),
                            wants_grad(tape, {&x}));
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& y = out.value();
      auto& gx = x.grad();
      double s = 0.0;
      for (size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
      for (size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - s);
    });
  }
  return out;
}

Tensor segment_softmax(Tape& tape, const Tensor& scores, const EdgeGroups& eg) {
  require(scores.rank() == 1 || scores.rank() == 2,
          "segment_softmax: expects rank 1 or 2");
  const int64_t e_count = scores.rank() == 1 ? scores.numel() : scores.rows();
  const int64_t k = scores.rank() == 1 ? 1 : scores.cols();
  require(e_count == eg.edge_count(), "segment_softmax: edge count mismatch");
  Tensor out = Tensor::zeros(scores.shape(), wants_grad(tape, {&scores}));
  const auto& sv = scores.value();
  auto& ov = out.value();
  for (int64_t seg = 0; seg < eg.segment_count(); ++seg) {
    const int64_t b = eg.offsets[seg], e = eg.offsets[seg + 1];
    for (int64_t c = 0; c < k; ++c) {
      double mx = sv[b * k + c];
      for (int64_t i = b; i < e; ++i) mx = std::max(mx, sv[i * k + c]);
      double sum = 0.0;
      for (int64_t i = b; i < e; ++i) {
        ov[i * k + c] = std::exp(sv[i * k + c] - mx);
        sum += ov[i * k + c];
      }
      for (int64_t i = b; i < e; ++i) ov[i * k + c] /= sum;
    }
  }
  if (out.requires_grad()) {
    EdgeGroups const* egp = &eg;
    std::vector<int64_t> offsets = eg.offsets;  // own a copy; eg may be transient
    tape.record([scores, out, offsets, k]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const auto& y = out.value();
      auto& gx = scores.grad();
      for (size_t seg = 0; seg + 1 < offsets.size(); ++seg) {
        const int64_t b = offsets[seg], e = offsets[seg + 1];
        for (int64_t c = 0; c < k; ++c) {
          double s = 0.0;
          for (int64_t i = b; i < e; ++i) s += g[i * k + c] * y[i * k + c];
          for (int64_t i = b; i < e; ++i)
            gx[i * k + c] += y[i * k + c] * (g[i * k + c] - s);
        }
      }
    });
    (void)egp;
  }
  return out;
}

// ---- graph gather / scatter ---------------------------------------------------

Tensor edge_score(Tape& tape, const Tensor& self_part, const Tensor& neigh_part,
                  const Tensor& dist_part, const EdgeGroups& eg) {
  require(self_part.rank() == 2 && neigh_part.rank() == 2 && dist_part.rank() == 2,
          "edge_score: expects matrices");
  require(self_part.cols() == neigh_part.cols() &&
              self_part.cols() == dist_part.cols(),
          "edge_score: column mismatch");
  const int64_t e_count = eg.edge_count(), k = self_part.cols();
  require(dist_part.rows() == e_count, "edge_score: edge count mismatch");
  Tensor out = Tensor::zeros({e_count, k},
                             wants_grad(tape, {&self_part, &neigh_part, &dist_part}));
  for (int64_t e = 0; e < e_count; ++e)
    for (int64_t c = 0; c < k; ++c)
      out.at(e, c) = self_part.at(eg.dst[e], c) + neigh_part.at(eg.src[e], c) +
                     dist_part.at(e, c);
  if (out.requires_grad()) {
    std::vector<int32_t> src = eg.src, dst = eg.dst;
    tape.record([self_part, neigh_part, dist_part, out, src, dst, k]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const int64_t e_count = static_cast<int64_t>(src.size());
      if (self_part.requires_grad()) {
        auto& gs = self_part.grad();
        for (int64_t e = 0; e < e_count; ++e)
          for (int64_t c = 0; c < k; ++c) gs[dst[e] * k + c] += g[e * k + c];
      }
      if (neigh_part.requires_grad()) {
        auto& gn = neigh_part.grad();
        for (int64_t e = 0; e < e_count; ++e)
          for (int64_t c = 0; c < k; ++c) gn[src[e] * k + c] += g[e * k + c];
      }
      if (dist_part.requires_grad()) {
        auto& gd = dist_part.grad();
        for (size_t i = 0; i < g.size(); ++i) gd[i] += g[i];
      }
    });
  }
  return out;
}

Tensor edge_dot(Tape& tape, const Tensor& q, const Tensor& k, const EdgeGroups& eg,
                double scale) {
  require(q.rank() == 2 && q.shape() == k.shape(), "edge_dot: shape mismatch");
  const int64_t e_count = eg.edge_count(), d = q.cols();
  Tensor out = Tensor::zeros({e_count}, wants_grad(tape, {&q, &k}));
  for (int64_t e = 0; e < e_count; ++e) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += q.at(eg.dst[e], j) * k.at(eg.src[e], j);
    out.at(e) = scale * acc;
  }
  if (out.requires_grad()) {
    std::vector<int32_t> src = eg.src, dst = eg.dst;
    tape.record([q, k, out, src, dst, d, scale]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const int64_t e_count = static_cast<int64_t>(src.size());
      if (q.requires_grad()) {
        auto& gq = q.grad();
        const auto& kv = k.value();
        for (int64_t e = 0; e < e_count; ++e)
          for (int64_t j = 0; j < d; ++j)
            gq[dst[e] * d + j] += scale * g[e] * kv[src[e] * d + j];
      }
      if (k.requires_grad()) {
        auto& gk = k.grad();
        const auto& qv = q.value();
        for (int64_t e = 0; e < e_count; ++e)
          for (int64_t j = 0; j < d; ++j)
            gk[src[e] * d + j] += scale * g[e] * qv[dst[e] * d + j];
      }
    });
  }
  return out;
}

Tensor edge_weighted_sum(Tape& tape, const Tensor& v, const Tensor& w,
                         const EdgeGroups& eg, int64_t n_out) {
  require(v.rank() == 2, "edge_weighted_sum: values must be a matrix");
  require(w.rank() == 1 && w.numel() == eg.edge_count(),
          "edge_weighted_sum: weight count mismatch");
  const int64_t d = v.cols(), e_count = eg.edge_count();
  Tensor out = Tensor::zeros({n_out, d}, wants_grad(tape, {&v, &w}));
  const auto& vv = v.value();
  const auto& wv = w.value();
  auto& ov = out.value();
  for (int64_t e = 0; e < e_count; ++e) {
    const double we = wv[e];
    const double* vr = vv.data() + static_cast<int64_t>(eg.src[e]) * d;
    double* orow = ov.data() + static_cast<int64_t>(eg.dst[e]) * d;
    for (int64_t j = 0; j < d; ++j) orow[j] += we * vr[j];
  }
  if (out.requires_grad()) {
    std::vector<int32_t> src = eg.src, dst = eg.dst;
    tape.record([v, w, out, src, dst, d]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      const int64_t e_count = static_cast<int64_t>(src.size());
      const auto& wv = w.value();
      const auto& vv = v.value();
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (int64_t e = 0; e < e_count; ++e) {
          const double we = wv[e];
          const double* grow = g.data() + static_cast<int64_t>(dst[e]) * d;
          double* gvr = gv.data() + static_cast<int64_t>(src[e]) * d;
          for (int64_t j = 0; j < d; ++j) gvr[j] += we * grow[j];
        }
      }
      if (w.requires_grad()) {
        auto& gw = w.grad();
        for (int64_t e = 0; e < e_count; ++e) {
          const double* grow = g.data() + static_cast<int64_t>(dst[e]) * d;
          const double* vr = vv.data() + static_cast<int64_t>(src[e]) * d;
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j) acc += grow[j] * vr[j];
          gw[e] += acc;
        }
      }
    });
  }
  return out;
}

Tensor path_sum(Tape& tape, const Tensor& table,
                const std::vector<std::vector<int32_t>>& paths) {
  require(table.rank() == 2, "path_sum: table must be a matrix");
  const int64_t n = static_cast<int64_t>(paths.size()), d = table.cols();
  require(n > 0, "path_sum: no paths");
  Tensor out = Tensor::zeros({n, d}, wants_grad(tape, {&table}));
  for (int64_t i = 0; i < n; ++i) {
    for (int32_t t : paths[static_cast<size_t>(i)]) {
      require(t >= 0 && t < table.rows(), "path_sum: node index out of range");
      for (int64_t j = 0; j < d; ++j) out.at(i, j) += table.at(t, j);
    }
  }
  if (out.requires_grad()) {
    tape.record([table, out, paths, n, d]() mutable {
      const auto& g = out.grad_or_empty();
      if (g.empty()) return;
      auto& gt = table.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int32_t t : paths[static_cast<size_t>(i)])
          for (int64_t j = 0; j < d; ++j) gt[t * d + j] += g[i * d + j];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace prim
