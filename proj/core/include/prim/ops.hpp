#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "prim/tensor.hpp"

namespace prim {

// Directed edges grouped by destination node. Edges are canonically sorted
// by (dst, src) regardless of input order, so every reduction over a
// neighborhood runs in one fixed order and results are bit-reproducible.
struct EdgeGroups {
  std::vector<int32_t> src;
  std::vector<int32_t> dst;
  std::vector<int64_t> offsets;   // segment boundaries into src/dst, size segments+1
  std::vector<int32_t> seg_node;  // destination node of each segment

  int64_t edge_count() const { return static_cast<int64_t>(src.size()); }
  int64_t segment_count() const { return static_cast<int64_t>(seg_node.size()); }

  // pairs are (dst, src)
  static EdgeGroups build(std::vector<std::pair<int32_t, int32_t>> pairs);
};

namespace ops {

// ---- elementwise -----------------------------------------------------------
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double c);
Tensor affine(Tape& tape, const Tensor& x, double mul, double add);
Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor log_sigmoid(Tape& tape, const Tensor& x);
Tensor mul_const(Tape& tape, const Tensor& x, const std::vector<double>& c);

// ---- matrix / vector -------------------------------------------------------
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a * transpose(b), with b stored row-major [n x k]; the workhorse for
// applying weight matrices to row-stacked feature matrices.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
Tensor matvec(Tape& tape, const Tensor& w, const Tensor& x);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_cols(Tape& tape, const Tensor& a, int64_t c0, int64_t c1);
Tensor col(Tape& tape, const Tensor& a, int64_t c);  // single column as rank-1
Tensor row(Tape& tape, const Tensor& a, int64_t r);  // single row as rank-1
Tensor gather_rows(Tape& tape, const Tensor& m, const std::vector<int32_t>& idx);
Tensor rows_mul_vec(Tape& tape, const Tensor& m, const Tensor& v);
Tensor rows_dot(Tape& tape, const Tensor& a, const Tensor& b);
Tensor rows_trilinear(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c);
// out[i] = h[i] - s[i] * w[i]
Tensor rows_sub_scaled(Tape& tape, const Tensor& h, const Tensor& w, const Tensor& s);
// Row-wise L2 normalization; throws on a near-zero row.
Tensor unit_rows(Tape& tape, const Tensor& w);
Tensor concat(Tape& tape, const Tensor& a, const Tensor& b);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor dot_const(Tape& tape, const Tensor& x, const std::vector<double>& c);

// ---- softmax ---------------------------------------------------------------
// Max-subtracted stable softmax of a rank-1 tensor.
Tensor softmax(Tape& tape, const Tensor& x);
// Non-autodiff utility used for plain numeric work; throws on empty input.
std::vector<double> softmax_values(const std::vector<double>& x);
// Softmax within every edge segment, independently per column. Accepts
// rank-1 [E] or rank-2 [E x K].
Tensor segment_softmax(Tape& tape, const Tensor& scores, const EdgeGroups& eg);

// ---- graph gather / scatter -------------------------------------------------
// out[e,k] = self_part[dst(e),k] + neigh_part[src(e),k] + dist_part[e,k]
Tensor edge_score(Tape& tape, const Tensor& self_part, const Tensor& neigh_part,
                  const Tensor& dist_part, const EdgeGroups& eg);
// out[e] = scale * <q[dst(e)], k[src(e)]>
Tensor edge_dot(Tape& tape, const Tensor& q, const Tensor& k, const EdgeGroups& eg,
                double scale);
// out[dst(e)] += w[e] * v[src(e)], output has n_out rows (untouched rows stay 0)
Tensor edge_weighted_sum(Tape& tape, const Tensor& v, const Tensor& w,
                         const EdgeGroups& eg, int64_t n_out);
// out[i] = sum of table rows listed in paths[i]
Tensor path_sum(Tape& tape, const Tensor& table,
                const std::vector<std::vector<int32_t>>& paths);

}  // namespace ops
}  // namespace prim
