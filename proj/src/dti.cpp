#include "nuq/dti.hpp"

#include "nuq/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nuq {

namespace {

constexpr double kMaxCondition = 1e12;

// Sum over pairs (a-b)^2 plus 6x off-diagonal energy, and the squared
// Frobenius norm. Both are rotation invariants; FA^2 = spread / (2 norm2).
struct FaInvariants {
  double spread;
  double norm2;
};

FaResult finish_fa(const FaInvariants &inv, bool negative) {
  FaResult r;
  r.negative_eigenvalue = negative;
  if (!(inv.norm2 > 0.0)) {
    r.degenerate = true;
    r.value = 0.0;
    return r;
  }
  double fa = std::sqrt(inv.spread / (2.0 * inv.norm2));
  if (!std::isfinite(fa)) {
    r.degenerate = true;
    fa = 0.0;
  }
  if (fa > 1.0) {
    fa = 1.0;
    r.clamped = true;
  }
  r.value = fa;
  return r;
}

// Sylvester's criterion for positive semi-definiteness: all principal
// minors nonnegative.
bool has_negative_eigenvalue(const Eigen::Matrix3d &D) {
  if (D(0, 0) < 0 || D(1, 1) < 0 || D(2, 2) < 0) return true;
  const double m01 = D(0, 0) * D(1, 1) - D(0, 1) * D(0, 1);
  const double m02 = D(0, 0) * D(2, 2) - D(0, 2) * D(0, 2);
  const double m12 = D(1, 1) * D(2, 2) - D(1, 2) * D(1, 2);
  if (m01 < 0 || m02 < 0 || m12 < 0) return true;
  return D.determinant() < 0;
}

} // namespace

DesignMatrix build_design_matrix(const GradientTable &g) {
  DesignMatrix A;
  A.column_labels = {"ln_s0", "Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz"};
  const auto n = static_cast<Eigen::Index>(g.size());
  A.entries.resize(n, kDtiParams);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double b = g.bvals[i];
    const auto &v = g.bvecs[i];
    A.entries.row(i) << 1.0, -b * v[0] * v[0], -b * v[1] * v[1], -b * v[2] * v[2],
        -2.0 * b * v[0] * v[1], -2.0 * b * v[0] * v[2], -2.0 * b * v[1] * v[2];
  }
  return A;
}

LogSignal log_transform_signal(std::span<const double> s, double floor) {
  if (!(floor > 0.0)) throw ContractError("log floor must be positive");
  const bool any_positive = std::any_of(s.begin(), s.end(), [](double v) { return v > 0.0; });
  if (!any_positive) throw DegenerateVoxelError("signal has no positive entry");
  LogSignal out;
  out.values.resize(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    double v = s[i];
    if (!(v >= floor)) {
      v = floor;
      ++out.floored;
    }
    out.values[static_cast<Eigen::Index>(i)] = std::log(v);
  }
  return out;
}

Eigen::VectorXd wls_weights(const DesignMatrix &A, const Eigen::VectorXd &y_log,
                            Weighting mode) {
  if (A.rows() != y_log.size()) throw ContractError("design/signal length mismatch");
  if (A.rows() < A.cols()) throw ContractError("fewer measurements than coefficients");
  if (mode == Weighting::identity) return Eigen::VectorXd::Ones(A.rows());

  const Eigen::MatrixXd gram = A.entries.transpose() * A.entries;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() * kMaxCondition > 1.0))
    throw RankDeficiencyError("design matrix is rank deficient");
  const Eigen::VectorXd c0 = llt.solve(A.entries.transpose() * y_log);
  const Eigen::VectorXd predicted = A.entries * c0;
  Eigen::VectorXd w(A.rows());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w[i] = std::exp(std::clamp(2.0 * predicted[i], -700.0, 700.0));
  return w;
}

Eigen::Matrix3d tensor_from_coefficients(const DtiCoefficients &c) {
  Eigen::Matrix3d D;
  D << c[1], c[4], c[5],
       c[4], c[2], c[6],
       c[5], c[6], c[3];
  return D;
}

DtiCoefficients coefficients_from_tensor(const Eigen::Matrix3d &D, double ln_s0) {
  DtiCoefficients c;
  c << ln_s0, D(0, 0), D(1, 1), D(2, 2), D(0, 1), D(0, 2), D(1, 2);
  return c;
}

TensorEigen eigendecompose_symmetric(const Eigen::Matrix3d &D_in) {
  if (!D_in.allFinite()) throw NumericError("non-finite tensor");
  Eigen::Matrix3d a = 0.5 * (D_in + D_in.transpose());
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();

  const double scale = a.norm();
  if (scale > 0.0) {
    for (int sweep = 0; sweep < 64; ++sweep) {
      const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
      if (off <= std::numeric_limits<double>::min() ||
          std::sqrt(off) <= 1e-18 * scale)
        break;
      for (int p = 0; p < 2; ++p) {
        for (int q = p + 1; q < 3; ++q) {
          const double apq = a(p, q);
          if (apq == 0.0) continue;
          // Rotation angle zeroing a(p, q), numerically stable form.
          const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
          const double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;
          for (int k = 0; k < 3; ++k) {
            const double akp = a(k, p), akq = a(k, q);
            a(k, p) = c * akp - s * akq;
            a(k, q) = s * akp + c * akq;
          }
          for (int k = 0; k < 3; ++k) {
            const double apk = a(p, k), aqk = a(q, k);
            a(p, k) = c * apk - s * aqk;
            a(q, k) = s * apk + c * aqk;
          }
          for (int k = 0; k < 3; ++k) {
            const double vkp = v(k, p), vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });
  TensorEigen out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

TensorEigen eigendecompose_tensor(const DtiCoefficients &c) {
  return eigendecompose_symmetric(tensor_from_coefficients(c));
}

FaResult fa_from_eigenvalues(const Eigen::Vector3d &l) {
  const double d01 = l[0] - l[1], d12 = l[1] - l[2], d20 = l[2] - l[0];
  const FaInvariants inv{d01 * d01 + d12 * d12 + d20 * d20, l.squaredNorm()};
  return finish_fa(inv, (l.array() < 0.0).any());
}

FaResult eval_fa(const DtiCoefficients &c) {
  if (!c.allFinite()) {
    FaResult r;
    r.degenerate = true;
    return r;
  }
  const double dxy = c[1] - c[2], dyz = c[2] - c[3], dzx = c[3] - c[1];
  const double off = c[4] * c[4] + c[5] * c[5] + c[6] * c[6];
  const FaInvariants inv{dxy * dxy + dyz * dyz + dzx * dzx + 6.0 * off,
                         c[1] * c[1] + c[2] * c[2] + c[3] * c[3] + 2.0 * off};
  return finish_fa(inv, has_negative_eigenvalue(tensor_from_coefficients(c)));
}

double eval_md(const DtiCoefficients &c) { return (c[1] + c[2] + c[3]) / 3.0; }

Property parse_property(const std::string &name) {
  if (name == "fa" || name == "FA") return Property::fa;
  if (name == "md" || name == "MD") return Property::md;
  throw ContractError("unknown property '" + name + "' (expected fa or md)");
}

std::string to_string(Property p) { return p == Property::fa ? "fa" : "md"; }

double evaluate_property(Property p, const Eigen::Ref<const Eigen::VectorXd> &c) {
  if (c.size() < kDtiParams) throw ContractError("coefficient vector shorter than 7");
  const DtiCoefficients dti = c.head<7>();
  switch (p) {
  case Property::fa: return eval_fa(dti).value;
  case Property::md: return eval_md(dti);
  }
  throw ContractError("unknown property");
}

} // namespace nuq
