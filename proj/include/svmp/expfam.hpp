#pragma once

// Natural-parameter algebra for univariate Gaussian factors.
//
// A factor q(x) = N(x; mu, sigma^2) is parameterized by
//   lambda = (precision, mean * precision),
// paired with sufficient statistics phi(x) = (-x^2 / 2, x), so that
// lambda^T phi(x) reproduces the Gaussian exponent.

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace svmp {

struct Moments {
  double mean = 0.0;
  double variance = 1.0;
};

/// Natural parameters of one Gaussian factor. Construction rejects
/// non-positive or non-finite precision and a non-finite mean*precision,
/// so every live value is a valid distribution.
class GaussianNatural {
 public:
  GaussianNatural() = default;

  GaussianNatural(double precision, double mean_times_precision)
      : precision_(precision), mtp_(mean_times_precision) {
    if (!is_valid(precision, mean_times_precision)) {
      throw std::invalid_argument("GaussianNatural: invalid parameters (precision=" +
                                  std::to_string(precision) +
                                  ", mean_times_precision=" +
                                  std::to_string(mean_times_precision) + ")");
    }
  }

  static bool is_valid(double precision, double mean_times_precision) noexcept {
    return std::isfinite(precision) && precision > 0.0 &&
           std::isfinite(mean_times_precision);
  }

  double precision() const noexcept { return precision_; }
  double mean_times_precision() const noexcept { return mtp_; }

  double mean() const noexcept { return mtp_ / precision_; }
  double variance() const noexcept { return 1.0 / precision_; }

  friend bool operator==(const GaussianNatural&, const GaussianNatural&) = default;

 private:
  double precision_ = 1.0;
  double mtp_ = 0.0;
};

/// Symmetric 2x2 matrix, indexed in the (precision, mtp) coordinate order.
struct FisherMatrix {
  double a11 = 0.0;
  double a12 = 0.0;
  double a22 = 0.0;

  double determinant() const noexcept { return a11 * a22 - a12 * a12; }
  double trace() const noexcept { return a11 + a22; }

  std::array<double, 2> eigenvalues() const noexcept {
    const double half_trace = 0.5 * trace();
    const double disc = std::sqrt(0.25 * (a11 - a22) * (a11 - a22) + a12 * a12);
    return {half_trace - disc, half_trace + disc};
  }

  bool positive_definite() const noexcept { return eigenvalues()[0] > 0.0; }

  double condition_number() const noexcept {
    const auto ev = eigenvalues();
    return ev[1] / ev[0];
  }

  std::array<double, 2> operator*(const std::array<double, 2>& v) const noexcept {
    return {a11 * v[0] + a12 * v[1], a12 * v[0] + a22 * v[1]};
  }

  // Closed-form inverse. Throws when the matrix is singular.
  FisherMatrix inverse() const {
    const double det = determinant();
    if (!(det > 0.0) || !std::isfinite(det)) {
      throw std::domain_error("FisherMatrix::inverse: matrix is not invertible");
    }
    return {a22 / det, -a12 / det, a11 / det};
  }
};

inline Moments moments(const GaussianNatural& lambda) noexcept {
  return {lambda.mean(), lambda.variance()};
}

inline GaussianNatural from_moments(const Moments& m) {
  if (!(m.variance > 0.0) || !std::isfinite(m.variance) || !std::isfinite(m.mean)) {
    throw std::invalid_argument("from_moments: variance must be positive and finite");
  }
  const double precision = 1.0 / m.variance;
  return {precision, m.mean * precision};
}

/// (1 - rho) * old + rho * temp, component-wise. rho must lie in (0, 1].
inline GaussianNatural blend(const GaussianNatural& old, const GaussianNatural& temp,
                             double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("blend: step size must lie in (0, 1]");
  }
  const double keep = 1.0 - rho;
  return {keep * old.precision() + rho * temp.precision(),
          keep * old.mean_times_precision() + rho * temp.mean_times_precision()};
}

/// KL(q || N(0, 1)) in nats.
inline double kl_to_standard_normal(const GaussianNatural& lambda) noexcept {
  const double mu = lambda.mean();
  const double var = lambda.variance();
  // -ln(var) == ln(precision); avoids a second division.
  return 0.5 * (var + mu * mu - 1.0 + std::log(lambda.precision()));
}

/// Log partition function A(lambda) = -g~(lambda) for phi(x) = (-x^2/2, x).
inline double log_partition(const GaussianNatural& lambda) noexcept {
  const double p = lambda.precision();
  const double h = lambda.mean_times_precision();
  return 0.5 * h * h / p - 0.5 * std::log(p) +
         0.5 * std::log(2.0 * std::numbers::pi);
}

/// Expected sufficient statistics E[phi(x)] = grad A(lambda).
inline std::array<double, 2> expected_sufficient_statistics(
    const GaussianNatural& lambda) noexcept {
  const double mu = lambda.mean();
  const double var = lambda.variance();
  return {-0.5 * (var + mu * mu), mu};
}

/// cov[phi(x)], which is also the Hessian of the log partition function.
inline FisherMatrix fisher(const GaussianNatural& lambda) noexcept {
  const double mu = lambda.mean();
  const double var = lambda.variance();
  return {0.5 * var * var + mu * mu * var, -mu * var, var};
}

}  // namespace svmp
