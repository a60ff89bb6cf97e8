#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace xlt {

// Dense row-major matrix of doubles. Everything numeric in this project runs
// in double so analytic gradients can be checked against central finite
// differences at 1e-4 relative error.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
  double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  bool empty() const { return rows == 0 || cols == 0; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// C += alpha * A * B      A: m×k, B: k×n, C: m×n
inline void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n,
                    double alpha = 1.0) {
  for (int i = 0; i < m; ++i) {
    const double* ai = A + static_cast<size_t>(i) * k;
    double* ci = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = alpha * ai[p];
      const double* bp = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += alpha * A * B^T    A: m×k, B: n×k, C: m×n
inline void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n,
                    double alpha = 1.0) {
  for (int i = 0; i < m; ++i) {
    const double* ai = A + static_cast<size_t>(i) * k;
    double* ci = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = B + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += alpha * acc;
    }
  }
}

// C += alpha * A^T * B    A: k×m, B: k×n, C: m×n
inline void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n,
                    double alpha = 1.0) {
  for (int p = 0; p < k; ++p) {
    const double* ap = A + static_cast<size_t>(p) * m;
    const double* bp = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double api = alpha * ap[i];
      double* ci = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

inline void gemm_nn(const Matrix& A, const Matrix& B, Matrix& C, double alpha = 1.0) {
  assert(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols);
  gemm_nn(A.a.data(), B.a.data(), C.a.data(), A.rows, A.cols, B.cols, alpha);
}
inline void gemm_nt(const Matrix& A, const Matrix& B, Matrix& C, double alpha = 1.0) {
  assert(A.cols == B.cols && A.rows == C.rows && B.rows == C.cols);
  gemm_nt(A.a.data(), B.a.data(), C.a.data(), A.rows, A.cols, B.rows, alpha);
}
inline void gemm_tn(const Matrix& A, const Matrix& B, Matrix& C, double alpha = 1.0) {
  assert(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols);
  gemm_tn(A.a.data(), B.a.data(), C.a.data(), A.cols, A.rows, B.cols, alpha);
}

inline double dot(const double* x, const double* y, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Column-wise mean over rows: out[j] = mean_i M[i][j].
inline std::vector<double> column_mean(const Matrix& m) {
  std::vector<double> out(static_cast<size_t>(m.cols), 0.0);
  for (int i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    for (int j = 0; j < m.cols; ++j) out[static_cast<size_t>(j)] += r[j];
  }
  const double inv = m.rows > 0 ? 1.0 / m.rows : 0.0;
  for (auto& v : out) v *= inv;
  return out;
}

inline double cosine(const std::vector<double>& x, const std::vector<double>& y) {
  assert(x.size() == y.size());
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  const double denom = std::sqrt(xx) * std::sqrt(yy);
  return denom > 0.0 ? xy / denom : 0.0;
}

}  // namespace xlt
