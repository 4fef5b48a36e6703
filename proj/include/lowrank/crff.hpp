#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "lowrank/rng.hpp"
#include "lowrank/tables.hpp"

namespace lowrank {

/// Volume of the radius-W ball in R^D: pi^{D/2} / Gamma(D/2 + 1) * W^D.
inline double ball_volume(int dim, double radius) {
  require(dim >= 1 && radius > 0.0, "ball_volume: need dim >= 1 and radius > 0");
  return std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim + 1.0) *
         std::pow(radius, dim);
}

/// d frequencies drawn uniformly from the ball of radius W in R^D, stored row-major.
struct FrequencyBank {
  int dim = 1;
  int count = 0;
  double radius = 0.0;
  double volume = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> freqs;

  std::span<const double> freq(int k) const {
    return {freqs.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
  /// w_k . y
  double project(int k, std::span<const double> y) const {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) acc += freqs[static_cast<std::size_t>(k) * dim + i] * y[i];
    return acc;
  }
};

/// Radial method: a Gaussian direction normalized to the sphere, radius W * U^{1/D}.
inline FrequencyBank sample_frequencies(double radius, int count, int dim, std::uint64_t seed) {
  require(radius > 0.0, "sample_frequencies: radius must be positive");
  require(count >= 1, "sample_frequencies: need at least one frequency");
  require(dim >= 1, "sample_frequencies: dimension must be positive");
  FrequencyBank bank{dim, count, radius, ball_volume(dim, radius), seed, {}};
  bank.freqs.resize(static_cast<std::size_t>(count) * dim);
  Rng rng = make_rng(seed, 0x667271);
  std::vector<double> dir(static_cast<std::size_t>(dim));
  for (int k = 0; k < count; ++k) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : dir) {
        x = standard_normal(rng);
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    const double r = radius * std::pow(uniform01(rng), 1.0 / dim);
    for (int i = 0; i < dim; ++i)
      bank.freqs[static_cast<std::size_t>(k) * dim + i] = r * dir[i] / norm;
  }
  return bank;
}

/// Target feature: interleaved (cos 2 pi w_k.y, -sin 2 pi w_k.y) / sqrt(d); unit norm.
inline std::vector<double> mu_features(std::span<const double> y, const FrequencyBank& bank) {
  require(static_cast<int>(y.size()) == bank.dim, "mu_features: point dimension mismatch");
  std::vector<double> out(2 * static_cast<std::size_t>(bank.count));
  const double scale = 1.0 / std::sqrt(static_cast<double>(bank.count));
  for (int k = 0; k < bank.count; ++k) {
    const double angle = 2.0 * std::numbers::pi * bank.project(k, y);
    out[2 * k] = scale * std::cos(angle);
    out[2 * k + 1] = -scale * std::sin(angle);
  }
  return out;
}

/// Empirical characteristic function at every frequency: g_k = mean exp(-2 pi i w_k.y),
/// returned as interleaved (real, imag). samples holds N points of dimension bank.dim.
inline std::vector<double> empirical_char(std::span<const double> samples,
                                          const FrequencyBank& bank) {
  const std::size_t D = static_cast<std::size_t>(bank.dim);
  require(!samples.empty() && samples.size() % D == 0,
          "empirical_char: sample buffer must hold N >= 1 points");
  const std::size_t N = samples.size() / D;
  std::vector<double> out(2 * static_cast<std::size_t>(bank.count));
  for (int k = 0; k < bank.count; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double angle = 2.0 * std::numbers::pi * bank.project(k, samples.subspan(n * D, D));
      re += std::cos(angle);
      im -= std::sin(angle);
    }
    out[2 * k] = re / static_cast<double>(N);
    out[2 * k + 1] = im / static_cast<double>(N);
  }
  return out;
}

/// Context feature: Vol(B_W)/sqrt(d) times the interleaved empirical characteristic
/// function, so that phi_hat . mu(y) = (Vol/d) sum_k Re(g_k exp(2 pi i w_k.y)).
inline std::vector<double> phi_hat(std::span<const double> samples, const FrequencyBank& bank) {
  auto out = empirical_char(samples, bank);
  const double scale = bank.volume / std::sqrt(static_cast<double>(bank.count));
  for (double& x : out) x *= scale;
  return out;
}

/// Raw inner product; truncation ringing can make it slightly negative.
inline double approx_density(std::span<const double> phi, std::span<const double> mu) {
  require(phi.size() == mu.size(), "approx_density: feature dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) acc += phi[i] * mu[i];
  return acc;
}

/// The truncated Fourier estimate summed directly from the characteristic function values.
inline double truncated_fourier_sum(std::span<const double> char_values, const FrequencyBank& bank,
                                    std::span<const double> y) {
  double acc = 0.0;
  for (int k = 0; k < bank.count; ++k) {
    const double angle = 2.0 * std::numbers::pi * bank.project(k, y);
    acc += char_values[2 * k] * std::cos(angle) - char_values[2 * k + 1] * std::sin(angle);
  }
  return bank.volume / bank.count * acc;
}

/// Density on the box [0,1]^dim with a sampler. sup_value bounds the pdf;
/// smoothness is infinite for the bump.
struct DensityOracle {
  int dim = 1;
  std::function<double(std::span<const double>)> pdf;
  std::function<void(Rng&, std::span<double>)> draw;
  double sup_value = 0.0;
  double smoothness = std::numeric_limits<double>::infinity();
  bool vanishes_on_boundary = true;

  /// N points row-major.
  std::vector<double> sample(int n, std::uint64_t seed) const {
    require(n >= 1, "DensityOracle::sample: need at least one point");
    Rng rng = make_rng(seed, 0x736d70);
    std::vector<double> out(static_cast<std::size_t>(n) * dim);
    for (int i = 0; i < n; ++i)
      draw(rng, std::span<double>(out).subspan(static_cast<std::size_t>(i) * dim, dim));
    return out;
  }
};

/// Composite Simpson weights on n (odd) equispaced points of [0, 1].
inline std::vector<double> simpson_weights(int n) {
  require(n >= 3 && n % 2 == 1, "simpson_weights: need an odd point count >= 3");
  std::vector<double> w(static_cast<std::size_t>(n));
  const double step = 1.0 / (n - 1);
  for (int i = 0; i < n; ++i) w[i] = (i == 0 || i == n - 1 ? 1.0 : (i % 2 ? 4.0 : 2.0)) * step / 3.0;
  return w;
}

/// Equispaced points 0, 1/(n-1), ..., 1.
inline std::vector<double> unit_grid(int n) {
  require(n >= 2, "unit_grid: need at least two points");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[i] = static_cast<double>(i) / (n - 1);
  return g;
}

/// Simpson integral of the density over [0,1]^dim (dim 1 or 2) with n points per axis.
inline double quadrature(const DensityOracle& density, int n) {
  require(density.dim == 1 || density.dim == 2, "quadrature: only dimensions 1 and 2");
  const auto w = simpson_weights(n);
  const auto g = unit_grid(n);
  double acc = 0.0;
  if (density.dim == 1) {
    for (int i = 0; i < n; ++i) acc += w[i] * density.pdf(std::span<const double>(&g[i], 1));
    return acc;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double y[2] = {g[i], g[j]};
      acc += w[i] * w[j] * density.pdf(y);
    }
  return acc;
}

namespace detail {

/// exp(-1 / (1 - (2y - 1)^2)) on (0, 1), zero elsewhere; smooth with all derivatives
/// vanishing at the endpoints.
inline double bump_shape(double y) {
  const double x = 2.0 * y - 1.0;
  const double gap = 1.0 - x * x;
  return gap <= 0.0 ? 0.0 : std::exp(-1.0 / gap);
}

inline double bump_normalizer() {
  static const double c = [] {
    constexpr int n = 8193;
    const auto w = simpson_weights(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += w[i] * bump_shape(static_cast<double>(i) / (n - 1));
    return 1.0 / acc;
  }();
  return c;
}

/// Rejection sampling from the 1-D bump under the uniform envelope c * e^{-1}.
inline double draw_bump(Rng& rng) {
  const double peak = std::exp(-1.0);
  for (;;) {
    const double y = uniform01(rng);
    if (uniform01(rng) * peak < bump_shape(y)) return y;
  }
}

}  // namespace detail

/// c exp(-1/(1 - (2y-1)^2)) on [0,1].
inline DensityOracle bump_density_1d() {
  const double c = detail::bump_normalizer();
  DensityOracle out;
  out.dim = 1;
  out.pdf = [c](std::span<const double> y) { return c * detail::bump_shape(y[0]); };
  out.draw = [](Rng& rng, std::span<double> y) { y[0] = detail::draw_bump(rng); };
  out.sup_value = c * std::exp(-1.0);
  return out;
}

/// Product of two independent 1-D bumps on [0,1]^2.
inline DensityOracle bump_density_2d() {
  const double c = detail::bump_normalizer();
  DensityOracle out;
  out.dim = 2;
  out.pdf = [c](std::span<const double> y) {
    return c * c * detail::bump_shape(y[0]) * detail::bump_shape(y[1]);
  };
  out.draw = [](Rng& rng, std::span<double> y) {
    y[0] = detail::draw_bump(rng);
    y[1] = detail::draw_bump(rng);
  };
  out.sup_value = c * c * std::exp(-2.0);
  return out;
}

/// Normal(mean, sd) restricted to [0,1]. It does not vanish on the boundary, so
/// the Fourier estimate rings at the edges and tolerances must be looser.
inline DensityOracle truncated_gaussian_1d(double mean, double sd) {
  require(sd > 0.0, "truncated_gaussian_1d: sd must be positive");
  const auto cdf = [=](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
  const double mass = cdf(1.0) - cdf(0.0);
  const double norm = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi) * mass);
  const auto shape = [=](double y) {
    return (y < 0.0 || y > 1.0) ? 0.0 : std::exp(-0.5 * (y - mean) * (y - mean) / (sd * sd));
  };
  DensityOracle out;
  out.dim = 1;
  out.pdf = [=](std::span<const double> y) { return norm * shape(y[0]); };
  out.draw = [=](Rng& rng, std::span<double> y) {
    for (;;) {
      const double x = uniform01(rng);
      if (uniform01(rng) < shape(x)) {
        y[0] = x;
        return;
      }
    }
  };
  out.sup_value = norm * std::max({shape(std::clamp(mean, 0.0, 1.0)), shape(0.0), shape(1.0)});
  out.smoothness = std::numeric_limits<double>::infinity();
  out.vanishes_on_boundary = false;
  return out;
}

struct ErrorCell {
  double radius = 0.0;
  int features = 0;
  int samples = 0;
  std::uint64_t seed = 0;
  double max_err = 0.0;
  double mean_err = 0.0;
};

struct ErrorSweepOptions {
  int grid_points = 513;  // per axis, evaluation grid over [0,1]^dim
};

/// Error of the cRFF estimate against the exact pdf on a grid, one cell per
/// (W, d, N, seed). Frequencies depend on (seed, W, d) and samples on (seed, N),
/// so cells that share an axis value share the corresponding randomness.
inline ErrorCell error_cell(const DensityOracle& density, double radius, int features,
                            int n_samples, std::uint64_t seed, const ErrorSweepOptions& opts = {}) {
  const auto bank = sample_frequencies(radius, features, density.dim, mix_seed(seed, 1));
  const auto samples = density.sample(n_samples, mix_seed(seed, 2));
  const auto phi = phi_hat(samples, bank);
  const auto grid = unit_grid(opts.grid_points);
  ErrorCell cell{radius, features, n_samples, seed, 0.0, 0.0};
  std::size_t points = 0;
  const auto visit = [&](std::span<const double> y) {
    const double err = std::abs(density.pdf(y) - approx_density(phi, mu_features(y, bank)));
    cell.max_err = std::max(cell.max_err, err);
    cell.mean_err += err;
    ++points;
  };
  if (density.dim == 1) {
    for (double g : grid) visit(std::span<const double>(&g, 1));
  } else if (density.dim == 2) {
    for (double g0 : grid)
      for (double g1 : grid) {
        const double y[2] = {g0, g1};
        visit(y);
      }
  } else {
    throw std::invalid_argument("error_cell: only dimensions 1 and 2 are supported");
  }
  cell.mean_err /= static_cast<double>(points);
  return cell;
}

struct ErrorTable {
  std::vector<ErrorCell> cells;
};

inline ErrorTable error_sweep(const DensityOracle& density, std::span<const double> radii,
                              std::span<const int> features, std::span<const int> samples,
                              std::span<const std::uint64_t> seeds,
                              const ErrorSweepOptions& opts = {}) {
  require(!radii.empty() && !features.empty() && !samples.empty() && !seeds.empty(),
          "error_sweep: grids must be nonempty");
  ErrorTable out;
  for (double w : radii)
    for (int d : features)
      for (int n : samples)
        for (auto s : seeds) out.cells.push_back(error_cell(density, w, d, n, s, opts));
  return out;
}

inline double median(std::vector<double> xs) {
  require(!xs.empty(), "median: empty input");
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

/// Least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "fit_slope: need two or more paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0.0, "fit_slope: x values are all equal");
  return sxy / sxx;
}

enum class SweepAxis { Radius, Features, Samples };

struct AxisTrend {
  std::vector<double> values;         // distinct axis values, ascending
  std::vector<double> median_max_err;  // median over seeds and the other axes' cells
  double slope = 0.0;                 // log-log fit of the medians
};

/// Median max error per value of one axis and the log-log slope through those medians.
inline AxisTrend axis_trend(const ErrorTable& table, SweepAxis axis) {
  const auto key = [axis](const ErrorCell& c) {
    switch (axis) {
      case SweepAxis::Radius: return c.radius;
      case SweepAxis::Features: return static_cast<double>(c.features);
      case SweepAxis::Samples: return static_cast<double>(c.samples);
    }
    return 0.0;
  };
  AxisTrend out;
  for (const auto& c : table.cells) out.values.push_back(key(c));
  std::sort(out.values.begin(), out.values.end());
  out.values.erase(std::unique(out.values.begin(), out.values.end()), out.values.end());
  std::vector<double> lx, ly;
  for (double v : out.values) {
    std::vector<double> errs;
    for (const auto& c : table.cells)
      if (key(c) == v) errs.push_back(c.max_err);
    const double m = median(errs);
    out.median_max_err.push_back(m);
    lx.push_back(std::log(v));
    ly.push_back(std::log(m));
  }
  out.slope = out.values.size() >= 2 ? fit_slope(lx, ly) : 0.0;
  return out;
}

}  // namespace lowrank
