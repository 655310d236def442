/*
 * Copyright 2026 The tracegp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TRACEGP_COMMON_HPP
#define TRACEGP_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tracegp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Invalid, malformed or inconsistent input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: singular system, kernel outside PSD tolerance, ...
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// All randomness in the library flows through explicitly seeded engines.
using Rng = std::mt19937_64;

struct JitterReport {
  bool jittered = false;
  double jitter = 0.0;  // absolute value added to the diagonal
};

// Cholesky factorization with diagonal jitter escalation. On failure adds
// initial_rel * trace(a), escalating x10 until max_rel * trace(a).
inline Eigen::LLT<Matrix> llt_with_jitter(const Matrix& a,
                                          JitterReport* report = nullptr,
                                          double initial_rel = 1e-12,
                                          double max_rel = 1e-6) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double tr = a.trace();
  const double scale = tr > 0.0 ? tr : 1.0;
  for (double rel = initial_rel; rel <= max_rel * (1.0 + 1e-12); rel *= 10.0) {
    Matrix jittered = a;
    jittered.diagonal().array() += rel * scale;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) {
      if (report != nullptr) {
        report->jittered = true;
        report->jitter = rel * scale;
      }
      return llt;
    }
  }
  throw NumericalError("Cholesky factorization failed after jitter escalation");
}

inline double operator_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
}

inline Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
  return Eigen::JacobiSVD<Matrix>(a).singularValues();
}

struct ThinSvd {
  Matrix u;
  Vector values;  // descending
  Matrix v;
};

// Thin SVD through the eigendecomposition of the smaller Gram matrix.
// Components below rank_floor_rel * sigma_max are dropped: their values are
// at the noise floor of the squared formulation anyway.
inline ThinSvd thin_svd(const Matrix& a, double rank_floor_rel = 1e-13) {
  ThinSvd out;
  if (a.size() == 0) return out;
  if (!a.allFinite()) throw NumericalError("thin_svd: non-finite entries");
  const bool tall = a.rows() >= a.cols();
  const Matrix gram = tall ? Matrix(a.transpose() * a) : Matrix(a * a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  if (es.info() != Eigen::Success) {
    throw NumericalError("thin_svd: eigendecomposition failed");
  }
  const Index k = gram.rows();
  const double top = std::sqrt(std::max(es.eigenvalues()(k - 1), 0.0));
  Index rank = 0;
  for (Index i = k - 1; i >= 0; --i) {
    const double sv = std::sqrt(std::max(es.eigenvalues()(i), 0.0));
    if (sv > 0.0 && sv > rank_floor_rel * top) {
      ++rank;
    } else {
      break;
    }
  }
  out.values.resize(rank);
  Matrix small_side(k, rank);
  for (Index i = 0; i < rank; ++i) {
    out.values(i) = std::sqrt(std::max(es.eigenvalues()(k - 1 - i), 0.0));
    small_side.col(i) = es.eigenvectors().col(k - 1 - i);
  }
  const Matrix scaled = tall ? Matrix(a * small_side) : Matrix(a.transpose() * small_side);
  Matrix big_side(scaled.rows(), rank);
  for (Index i = 0; i < rank; ++i) big_side.col(i) = scaled.col(i) / out.values(i);
  if (tall) {
    out.u = std::move(big_side);
    out.v = std::move(small_side);
  } else {
    out.u = std::move(small_side);
    out.v = std::move(big_side);
  }
  return out;
}

}  // namespace tracegp

#endif  // TRACEGP_COMMON_HPP
