#include "lnpde/data/generators.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace lnpde::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// The FFTW planner is not re-entrant; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> forward_real(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(x.size() / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

// Unnormalised inverse of forward_real onto n points.
std::vector<double> inverse_real(std::vector<std::complex<double>> spectrum, std::size_t n) {
  std::vector<double> out(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n),
                                reinterpret_cast<fftw_complex*>(spectrum.data()), out.data(),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

void require_periodic_line(const GridSpec& grid, const char* what) {
  grid.validate();
  if (grid.dims() != 1 || !grid.periodic) {
    throw std::invalid_argument(std::string(what) + " needs a periodic 1D grid");
  }
}

double minmod(double a, double b) {
  if (a * b <= 0) return 0.0;
  return std::abs(a) < std::abs(b) ? a : b;
}

}  // namespace

std::vector<SineTerm> sample_sine_terms(const SineSampling& sampling, std::uint64_t seed) {
  if (sampling.max_mode < 1) throw std::invalid_argument("max_mode must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> mode(1, sampling.max_mode);
  std::uniform_real_distribution<double> amplitude(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::vector<SineTerm> terms(sampling.n_waves);
  for (auto& t : terms) {
    t.amplitude = amplitude(rng);
    t.mode = mode(rng);
    double p = phase(rng);
    while (p == 0.0) p = phase(rng);
    t.phase = p;
  }
  return terms;
}

std::vector<double> sinusoidal_field(const GridSpec& grid, std::span<const SineTerm> terms) {
  require_periodic_line(grid, "sinusoidal initial condition");
  const auto x = grid.coords(0);
  const double L = grid.length(0);
  std::vector<double> s(x.size(), 0.0);
  for (const auto& term : terms) {
    const double k = kTwoPi * term.mode / L;
    for (std::size_t i = 0; i < x.size(); ++i) s[i] += term.amplitude * std::sin(k * x[i] + term.phase);
  }
  return s;
}

std::vector<double> sample_sinusoidal_ic(const GridSpec& grid, std::size_t n_waves,
                                         std::uint64_t seed, int max_mode) {
  const auto terms = sample_sine_terms({n_waves, max_mode}, seed);
  return sinusoidal_field(grid, terms);
}

std::vector<double> gen_advection(const GridSpec& grid, std::span<const double> times,
                                  double zeta, std::span<const double> ic) {
  require_periodic_line(grid, "advection");
  const std::size_t n = grid.points[0];
  if (ic.size() != n) throw std::invalid_argument("initial condition does not match the grid");
  const double L = grid.length(0);
  const auto spectrum = forward_real(ic);
  std::vector<double> out;
  out.reserve(times.size() * n);
  for (double t : times) {
    const double shift = zeta * t;
    std::vector<std::complex<double>> shifted(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
      const double theta = kTwoPi * static_cast<double>(k) * shift / L;
      if (n % 2 == 0 && k == n / 2) {
        // A real Nyquist mode can only be represented by its cosine part.
        shifted[k] = spectrum[k] * std::cos(theta);
      } else {
        shifted[k] = spectrum[k] * std::polar(1.0, -theta);
      }
    }
    auto frame = inverse_real(std::move(shifted), n);
    for (double v : frame) out.push_back(v / static_cast<double>(n));
  }
  return out;
}

std::vector<double> spectral_refine(std::span<const double> field, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("refinement factor must be positive");
  const std::size_t n = field.size();
  const std::size_t m = n * factor;
  if (factor == 1) return {field.begin(), field.end()};
  const auto coarse = forward_real(field);
  std::vector<std::complex<double>> fine(m / 2 + 1, 0.0);
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    const bool nyquist = n % 2 == 0 && k == n / 2;
    fine[k] = coarse[k] * (nyquist ? 0.5 : 1.0);
  }
  auto out = inverse_real(std::move(fine), m);
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

std::size_t burgers_required_substeps(double dt, double h, double max_abs, double nu, double cfl) {
  const double diffusion = nu / std::numbers::pi;
  double limit = std::numeric_limits<double>::infinity();
  if (max_abs > 0) limit = std::min(limit, cfl * h / max_abs);
  if (diffusion > 0) limit = std::min(limit, 0.5 * h * h / diffusion);
  if (!std::isfinite(limit)) return 1;
  return static_cast<std::size_t>(std::ceil(dt / limit - 1e-12));
}

std::vector<double> gen_burgers(const GridSpec& grid, std::span<const double> times, double nu,
                                std::span<const double> ic, const BurgersOptions& options) {
  require_periodic_line(grid, "Burgers");
  if (options.oversample < 1) throw std::invalid_argument("oversample must be >= 1");
  if (nu < 0) throw std::invalid_argument("diffusion coefficient must be non-negative");
  const std::size_t n = grid.points[0];
  if (ic.size() != n) throw std::invalid_argument("initial condition does not match the grid");
  if (times.empty()) return {};

  const std::size_t os = options.oversample;
  const std::size_t nf = n * os;
  const double h = grid.length(0) / static_cast<double>(nf);
  const double diffusion = nu / std::numbers::pi;
  std::vector<double> u = spectral_refine(ic, os);
  double max_abs = 0;
  for (double v : u) max_abs = std::max(max_abs, std::abs(v));

  std::vector<double> slope(nf), flux(nf);
  auto rhs = [&](const std::vector<double>& s, std::vector<double>& out) {
    for (std::size_t j = 0; j < nf; ++j) {
      const double left = s[(j + nf - 1) % nf], right = s[(j + 1) % nf];
      slope[j] = minmod(right - s[j], s[j] - left);
    }
    // flux[j] lives on the interface between cells j and j+1
    for (std::size_t j = 0; j < nf; ++j) {
      const std::size_t jp = (j + 1) % nf;
      const double ul = s[j] + 0.5 * slope[j];
      const double ur = s[jp] - 0.5 * slope[jp];
      const double a = std::max(std::abs(ul), std::abs(ur));
      flux[j] = 0.25 * (ul * ul + ur * ur) - 0.5 * a * (ur - ul);
    }
    for (std::size_t j = 0; j < nf; ++j) {
      const double left = s[(j + nf - 1) % nf], right = s[(j + 1) % nf];
      out[j] = -(flux[j] - flux[(j + nf - 1) % nf]) / h +
               diffusion * (right - 2.0 * s[j] + left) / (h * h);
    }
  };

  std::vector<double> out;
  out.reserve(times.size() * n);
  auto emit = [&] {
    for (std::size_t i = 0; i < n; ++i) out.push_back(u[i * os]);
  };
  emit();

  std::vector<double> k1(nf), k2(nf), k3(nf), k4(nf), stage(nf);
  for (std::size_t ti = 1; ti < times.size(); ++ti) {
    const double span = times[ti] - times[ti - 1];
    if (!(span > 0)) throw std::invalid_argument("output times must be strictly increasing");
    const std::size_t required = burgers_required_substeps(span, h, max_abs, nu, options.cfl);
    std::size_t steps = options.substeps;
    if (steps == 0) {
      steps = std::max(os, required);
    } else if (steps < required) {
      throw std::invalid_argument("Burgers substeps " + std::to_string(steps) +
                                  " violate the CFL/diffusion limit; at least " +
                                  std::to_string(required) + " are required per interval");
    }
    const double dt = span / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      rhs(u, k1);
      for (std::size_t j = 0; j < nf; ++j) stage[j] = u[j] + 0.5 * dt * k1[j];
      rhs(stage, k2);
      for (std::size_t j = 0; j < nf; ++j) stage[j] = u[j] + 0.5 * dt * k2[j];
      rhs(stage, k3);
      for (std::size_t j = 0; j < nf; ++j) stage[j] = u[j] + dt * k3[j];
      rhs(stage, k4);
      for (std::size_t j = 0; j < nf; ++j) {
        u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
      }
    }
    for (double v : u) {
      if (!std::isfinite(v)) throw std::runtime_error("Burgers solver produced a non-finite value");
    }
    emit();
  }
  return out;
}

bool molenkamp_params_in_range(const MolenkampParams& l) {
  return l[0] >= 1 && l[0] <= 20 && l[1] >= 2 && l[1] <= 4 && l[2] >= 1 && l[2] <= 5 &&
         std::abs(l[3]) <= 0.1 && std::abs(l[4]) <= 0.1;
}

std::array<double, 2> molenkamp_center(double t, const MolenkampParams& l) {
  const double x0 = l[3] - 0.5, y0 = l[4];
  const double c = std::cos(kTwoPi * t), s = std::sin(kTwoPi * t);
  return {x0 * c - y0 * s, x0 * s + y0 * c};
}

double molenkamp_value(double x, double y, double t, const MolenkampParams& l) {
  const auto [cx, cy] = molenkamp_center(t, l);
  const double h2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
  return l[0] * std::pow(0.01, l[1] * h2) * std::exp(-l[2] * t);
}

std::vector<double> gen_molenkamp(const GridSpec& grid, std::span<const double> times,
                                  const MolenkampParams& lambda) {
  grid.validate();
  if (grid.dims() != 2) throw std::invalid_argument("Molenkamp needs a 2D grid");
  if (!molenkamp_params_in_range(lambda)) {
    std::clog << "warning: Molenkamp parameters outside the documented ranges\n";
  }
  const auto xs = grid.coords(0);
  const auto ys = grid.coords(1);
  std::vector<double> out;
  out.reserve(times.size() * grid.size());
  for (double t : times) {
    for (double x : xs) {
      for (double y : ys) out.push_back(molenkamp_value(x, y, t, lambda));
    }
  }
  return out;
}

}  // namespace lnpde::data
