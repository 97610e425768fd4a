#pragma once

#include <string>
#include <vector>

namespace lnpde::model {

/// Explicit Runge-Kutta coefficients: a strictly lower triangular, weights h,
/// nodes c. The model is autonomous so c is kept for completeness only.
struct ButcherTableau {
  int q = 4;
  std::vector<std::vector<double>> a;
  std::vector<double> h;
  std::vector<double> c;

  /// q=1 Euler, q=2 midpoint, q=3 Kutta's third-order rule, q=4 classic RK4.
  static ButcherTableau of_stage(int q);
  /// Throws if the tableau is not explicit or its weights do not sum to 1.
  void validate() const;
  std::string name() const;
};

}  // namespace lnpde::model
