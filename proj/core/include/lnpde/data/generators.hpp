#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lnpde/data/grid.hpp"

namespace lnpde::data {

// Generated trajectories are C-ordered [times.size(), grid.size()] arrays of
// a single channel.

struct SineTerm {
  double amplitude;
  int mode;  // k = 2 pi mode / L
  double phase;
};

struct SineSampling {
  std::size_t n_waves = 2;
  int max_mode = 8;
};

/// Draws n_waves terms with modes in {1..max_mode}, A in [0,1], phase in (0, 2 pi).
std::vector<SineTerm> sample_sine_terms(const SineSampling& sampling, std::uint64_t seed);
std::vector<double> sinusoidal_field(const GridSpec& grid, std::span<const SineTerm> terms);
std::vector<double> sample_sinusoidal_ic(const GridSpec& grid, std::size_t n_waves,
                                         std::uint64_t seed, int max_mode = 8);

/// Exact transport s(x,t) = s0(x - zeta t) via a Fourier phase shift.
std::vector<double> gen_advection(const GridSpec& grid, std::span<const double> times,
                                  double zeta, std::span<const double> ic);

/// Band-limited (trigonometric) interpolation of a periodic 1D field onto
/// `factor` times as many points.
std::vector<double> spectral_refine(std::span<const double> field, std::size_t factor);

struct BurgersOptions {
  std::size_t oversample = 8;
  /// RK4 steps per output interval; 0 picks the smallest stable count that is
  /// at least `oversample`.
  std::size_t substeps = 0;
  double cfl = 0.4;
};

/// Stable RK4 substeps per interval dt on the fine grid for a field bounded
/// by max_abs.
std::size_t burgers_required_substeps(double dt, double h, double max_abs, double nu,
                                      double cfl = 0.4);

/// s_t + (s^2/2)_x - (nu/pi) s_xx = 0, periodic. Finite volumes with a local
/// Lax-Friedrichs flux on MUSCL/minmod states, central diffusion and RK4,
/// computed on a grid refined by `oversample` and sampled back.
std::vector<double> gen_burgers(const GridSpec& grid, std::span<const double> times, double nu,
                                std::span<const double> ic, const BurgersOptions& options = {});

/// (lambda1..lambda5) of the rotating, decaying Gaussian.
using MolenkampParams = std::array<double, 5>;

bool molenkamp_params_in_range(const MolenkampParams& lambda);
/// Centre of the Gaussian at time t (solid-body rotation of the initial centre).
std::array<double, 2> molenkamp_center(double t, const MolenkampParams& lambda);
double molenkamp_value(double x, double y, double t, const MolenkampParams& lambda);
/// Closed-form solution of q_t - 2 pi y q_x + 2 pi x q_y + lambda3 q = 0 on a 2D grid.
std::vector<double> gen_molenkamp(const GridSpec& grid, std::span<const double> times,
                                  const MolenkampParams& lambda);

}  // namespace lnpde::data
