#include "lnpde/model/butcher.hpp"

#include <cmath>
#include <stdexcept>

namespace lnpde::model {

ButcherTableau ButcherTableau::of_stage(int q) {
  ButcherTableau t;
  t.q = q;
  switch (q) {
    case 1:
      t.a = {{}};
      t.h = {1.0};
      t.c = {0.0};
      break;
    case 2:
      t.a = {{}, {0.5}};
      t.h = {0.0, 1.0};
      t.c = {0.0, 0.5};
      break;
    case 3:
      t.a = {{}, {0.5}, {-1.0, 2.0}};
      t.h = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
      t.c = {0.0, 0.5, 1.0};
      break;
    case 4:
      t.a = {{}, {0.5}, {0.0, 0.5}, {0.0, 0.0, 1.0}};
      t.h = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
      t.c = {0.0, 0.5, 0.5, 1.0};
      break;
    default:
      throw std::invalid_argument("RK stage must be in 1..4, got " + std::to_string(q));
  }
  t.validate();
  return t;
}

void ButcherTableau::validate() const {
  if (q < 1 || a.size() != static_cast<std::size_t>(q) || h.size() != a.size() ||
      c.size() != a.size()) {
    throw std::invalid_argument("tableau dimensions do not match its stage");
  }
  double sum = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() > k) throw std::invalid_argument("tableau is not explicit");
    sum += h[k];
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("tableau weights do not sum to 1");
}

std::string ButcherTableau::name() const {
  switch (q) {
    case 1: return "euler";
    case 2: return "midpoint";
    case 3: return "kutta3";
    case 4: return "rk4";
    default: return "custom";
  }
}

}  // namespace lnpde::model
