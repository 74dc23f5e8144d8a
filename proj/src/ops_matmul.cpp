#include <Eigen/Dense>

#include "ops_common.hpp"

namespace mstwins {

using opdet::finish;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

struct BatchPlan {
  int64_t batches = 1;
  std::vector<int64_t> off_a, off_b;  // element offsets of each 2-D slice
  bool a_shared = false;              // slices of a repeat (broadcast batch)
  bool b_shared = false;
  Shape out_shape;
};

BatchPlan plan_batches(const Shape& sa, const Shape& sb, int64_t m, int64_t k, int64_t n) {
  BatchPlan p;
  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  Shape bo = opdet::broadcast_shape("matmul", ba, bb);
  p.out_shape = bo;
  p.out_shape.push_back(m);
  p.out_shape.push_back(n);
  p.batches = numel_of(bo);
  p.off_a.resize(static_cast<size_t>(p.batches));
  p.off_b.resize(static_cast<size_t>(p.batches));
  auto stra = opdet::broadcast_strides(ba, bo);
  auto strb = opdet::broadcast_strides(bb, bo);
  const size_t r = bo.size();
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < p.batches; ++i) {
    p.off_a[static_cast<size_t>(i)] = ia * m * k;
    p.off_b[static_cast<size_t>(i)] = ib * k * n;
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += stra[d];
      ib += strb[d];
      if (idx[d] < bo[d]) break;
      idx[d] = 0;
      ia -= stra[d] * bo[d];
      ib -= strb[d] * bo[d];
    }
  }
  p.a_shared = numel_of(ba) != p.batches;
  p.b_shared = numel_of(bb) != p.batches;
  return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MST_CHECK(a.defined() && b.defined(), "matmul: undefined operand");
  MST_CHECK(a.dim() >= 2 && b.dim() >= 2, "matmul: operands must have rank >= 2, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t m = a.shape()[a.dim() - 2];
  const int64_t k = a.shape()[a.dim() - 1];
  const int64_t kb = b.shape()[b.dim() - 2];
  const int64_t n = b.shape()[b.dim() - 1];
  MST_CHECK(k == kb, "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

  BatchPlan plan = plan_batches(a.shape(), b.shape(), m, k, n);
  Tensor out = make_tensor(plan.out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();

  if (plan.batches == 1 && m >= 256) {
    // split output rows into fixed-size blocks so threads share one gemm;
    // the block layout depends only on m, keeping results thread-count
    // independent
    const int64_t block = 128;
    const int64_t nblocks = (m + block - 1) / block;
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < nblocks; ++t) {
      const int64_t r0 = t * block;
      const int64_t rows = std::min(block, m - r0);
      CMap A(pa + r0 * k, rows, k);
      CMap B(pb, k, n);
      MMap C(po + r0 * n, rows, n);
      C.noalias() = A * B;
    }
  } else {
#pragma omp parallel for schedule(static) if (plan.batches > 1)
    for (int64_t i = 0; i < plan.batches; ++i) {
      CMap A(pa + plan.off_a[static_cast<size_t>(i)], m, k);
      CMap B(pb + plan.off_b[static_cast<size_t>(i)], k, n);
      MMap C(po + i * m * n, m, n);
      C.noalias() = A * B;
    }
  }

  return finish("matmul", out, {&a, &b}, [a, b, out, plan, m, k, n]() {
    const double* g = out.storage()->grad.data();
    const double* pa2 = a.data();
    const double* pb2 = b.data();
    const int64_t block = 128;
    if (a.requires_grad()) {
      double* da = a.storage()->grad_buffer().data();
      if (plan.batches == 1 && m >= 256) {
        // disjoint dA row blocks, layout fixed by m alone
        const int64_t nblocks = (m + block - 1) / block;
#pragma omp parallel for schedule(static)
        for (int64_t t = 0; t < nblocks; ++t) {
          const int64_t r0 = t * block;
          const int64_t rows = std::min(block, m - r0);
          CMap G(g + r0 * n, rows, n);
          CMap B(pb2, k, n);
          MMap dA(da + r0 * k, rows, k);
          dA.noalias() += G * B.transpose();
        }
      } else {
#pragma omp parallel for schedule(static) if (plan.batches > 1 && !plan.a_shared)
        for (int64_t i = 0; i < plan.batches; ++i) {
          CMap G(g + i * m * n, m, n);
          CMap B(pb2 + plan.off_b[static_cast<size_t>(i)], k, n);
          MMap dA(da + plan.off_a[static_cast<size_t>(i)], m, k);
          dA.noalias() += G * B.transpose();
        }
      }
    }
    if (b.requires_grad()) {
      double* db = b.storage()->grad_buffer().data();
      if (plan.batches == 1 && n >= 256) {
        // disjoint dB column blocks, layout fixed by n alone
        const int64_t nblocks = (n + block - 1) / block;
#pragma omp parallel for schedule(static)
        for (int64_t t = 0; t < nblocks; ++t) {
          const int64_t c0 = t * block;
          const int64_t cols = std::min(block, n - c0);
          Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> G(g + c0, m, cols,
                                                              Eigen::OuterStride<>(n));
          CMap A(pa2, m, k);
          Eigen::Map<RowMat, 0, Eigen::OuterStride<>> dB(db + c0, k, cols,
                                                         Eigen::OuterStride<>(n));
          dB.noalias() += A.transpose() * G;
        }
      } else {
#pragma omp parallel for schedule(static) if (plan.batches > 1 && !plan.b_shared)
        for (int64_t i = 0; i < plan.batches; ++i) {
          CMap G(g + i * m * n, m, n);
          CMap A(pa2 + plan.off_a[static_cast<size_t>(i)], m, k);
          MMap dB(db + plan.off_b[static_cast<size_t>(i)], k, n);
          dB.noalias() += A.transpose() * G;
        }
      }
    }
  });
}

}  // namespace mstwins
