#pragma once

#include <optional>
#include <vector>

#include "martrep/rational.hpp"

namespace martrep {

/// Dense exact-rational matrix, row major.
struct RatMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<Rat> a;

  RatMatrix() = default;
  RatMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, Rat(0)) {}
  Rat& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  const Rat& at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

/// In-place reduced row echelon form, leftmost-pivot order (first nonzero in
/// column scan). Returns the pivot columns. Deterministic.
inline std::vector<int> rref(RatMatrix& m) {
  std::vector<int> pivots;
  int row = 0;
  for (int col = 0; col < m.cols && row < m.rows; ++col) {
    int pr = -1;
    for (int r = row; r < m.rows; ++r) {
      if (m.at(r, col) != 0) {
        pr = r;
        break;
      }
    }
    if (pr < 0) continue;
    if (pr != row)
      for (int c = 0; c < m.cols; ++c) std::swap(m.at(pr, c), m.at(row, c));
    const Rat inv = Rat(1) / m.at(row, col);
    for (int c = col; c < m.cols; ++c) m.at(row, c) *= inv;
    for (int r = 0; r < m.rows; ++r) {
      if (r == row || m.at(r, col) == 0) continue;
      const Rat factor = m.at(r, col);
      for (int c = col; c < m.cols; ++c) m.at(r, c) -= factor * m.at(row, c);
    }
    pivots.push_back(col);
    ++row;
  }
  return pivots;
}

/// Particular solution of A x = b with free variables set to zero, or nullopt
/// if inconsistent.
inline std::optional<std::vector<Rat>> solve_linear(const RatMatrix& A,
                                                    const std::vector<Rat>& b) {
  RatMatrix m(A.rows, A.cols + 1);
  for (int r = 0; r < A.rows; ++r) {
    for (int c = 0; c < A.cols; ++c) m.at(r, c) = A.at(r, c);
    m.at(r, A.cols) = b[r];
  }
  std::vector<int> pivots = rref(m);
  if (!pivots.empty() && pivots.back() == A.cols) return std::nullopt;  // 0 = 1 row
  std::vector<Rat> x(A.cols, Rat(0));
  for (std::size_t i = 0; i < pivots.size(); ++i) {
    // each pivot row reads x_pivot + (free terms) = rhs; free vars are 0
    x[pivots[i]] = m.at(static_cast<int>(i), A.cols);
  }
  return x;
}

/// Basis of the null space of A. Deterministic (free variables in column
/// order, each basis vector has a 1 in its free column).
inline std::vector<std::vector<Rat>> kernel_basis(const RatMatrix& A) {
  RatMatrix m = A;
  std::vector<int> pivots = rref(m);
  std::vector<bool> is_pivot(A.cols, false);
  for (int p : pivots) is_pivot[p] = true;
  std::vector<std::vector<Rat>> basis;
  for (int free = 0; free < A.cols; ++free) {
    if (is_pivot[free]) continue;
    std::vector<Rat> v(A.cols, Rat(0));
    v[free] = 1;
    for (std::size_t i = 0; i < pivots.size(); ++i)
      v[pivots[i]] = -m.at(static_cast<int>(i), free);
    basis.push_back(std::move(v));
  }
  return basis;
}

/// Rank by fraction-free Bareiss elimination with rightmost-column pivot
/// scanning. Kept deliberately independent of rref() so rank-based checks can
/// cross-validate echelon-based ones.
inline int rank_bareiss(const RatMatrix& A) {
  // Clear denominators per row first so the elimination stays integral.
  const int n = A.rows, m = A.cols;
  std::vector<std::vector<BigInt>> w(n, std::vector<BigInt>(m));
  for (int r = 0; r < n; ++r) {
    BigInt lcm_den = 1;
    for (int c = 0; c < m; ++c) {
      const BigInt d = denominator(A.at(r, c));
      lcm_den = lcm_den / gcd(lcm_den, d) * d;
    }
    for (int c = 0; c < m; ++c) {
      const Rat scaled = A.at(r, c) * Rat(lcm_den);
      w[r][c] = numerator(scaled);
    }
  }
  BigInt prev(1);
  int rank = 0;
  for (int col = m - 1; col >= 0 && rank < n; --col) {
    int pr = -1;
    for (int r = rank; r < n; ++r) {
      if (w[r][col] != 0) {
        pr = r;
        break;
      }
    }
    if (pr < 0) continue;
    std::swap(w[pr], w[rank]);
    for (int r = rank + 1; r < n; ++r) {
      for (int c = 0; c < m; ++c) {
        if (c == col) continue;
        w[r][c] = (w[rank][col] * w[r][c] - w[r][col] * w[rank][c]) / prev;
      }
      w[r][col] = 0;
    }
    prev = w[rank][col];
    ++rank;
  }
  return rank;
}

/// Minimum-Euclidean-norm solution of A x = b, or nullopt if inconsistent.
/// Solves (A A^T) w = b (same range as A over the rationals) and returns
/// A^T w; deterministic via the fixed rref pivoting.
inline std::optional<std::vector<Rat>> min_norm_solve(const RatMatrix& A,
                                                      const std::vector<Rat>& b) {
  RatMatrix gram(A.rows, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.rows; ++j) {
      Rat s(0);
      for (int c = 0; c < A.cols; ++c) s += A.at(i, c) * A.at(j, c);
      gram.at(i, j) = s;
    }
  auto w = solve_linear(gram, b);
  if (!w) return std::nullopt;
  std::vector<Rat> x(A.cols, Rat(0));
  for (int c = 0; c < A.cols; ++c) {
    Rat s(0);
    for (int r = 0; r < A.rows; ++r) s += A.at(r, c) * (*w)[r];
    x[c] = s;
  }
  // Consistency of the Gram system guarantees A x = b; assert it anyway.
  for (int r = 0; r < A.rows; ++r) {
    Rat s(0);
    for (int c = 0; c < A.cols; ++c) s += A.at(r, c) * x[c];
    if (s != b[r]) return std::nullopt;
  }
  return x;
}

/// Exact least-squares residual b - A x* with x* solving the normal
/// equations (free variables zero). Zero iff A x = b is consistent.
inline std::vector<Rat> least_squares_residual(const RatMatrix& A,
                                               const std::vector<Rat>& b) {
  RatMatrix normal(A.cols, A.cols);
  std::vector<Rat> rhs(A.cols, Rat(0));
  for (int i = 0; i < A.cols; ++i) {
    for (int j = 0; j < A.cols; ++j) {
      Rat s(0);
      for (int r = 0; r < A.rows; ++r) s += A.at(r, i) * A.at(r, j);
      normal.at(i, j) = s;
    }
    for (int r = 0; r < A.rows; ++r) rhs[i] += A.at(r, i) * b[r];
  }
  auto x = solve_linear(normal, rhs);
  std::vector<Rat> res(b);
  if (!x) return res;  // unreachable: normal equations are always consistent
  for (int r = 0; r < A.rows; ++r) {
    Rat s(0);
    for (int c = 0; c < A.cols; ++c) s += A.at(r, c) * (*x)[c];
    res[r] -= s;
  }
  return res;
}

}  // namespace martrep
