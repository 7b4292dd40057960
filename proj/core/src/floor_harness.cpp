#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "fedbif/bitplane.hpp"
#include "fedbif/experiment.hpp"
#include "fedbif/quantizer.hpp"
#include "fedbif/virtual_bits.hpp"

namespace fedbif {

namespace {

constexpr std::uint64_t kStreamDesign = 21;
constexpr std::uint64_t kStreamInit = 22;
constexpr std::uint64_t kStreamControl = 23;
constexpr std::uint64_t kStreamBif = 24;

// The representable box is alpha * [-2^(m-1), 2^(m-1)-1] with
// alpha = kWeightBound / 2^(m-1); solutions are generated inside
// kTrueScale so every sweep width can express them.
constexpr double kWeightBound = 0.1;
constexpr double kTrueScale = 0.08;
constexpr double kObservationNoise = 0.01;

struct Problem {
  Mat X;                       // samples x dim, columns orthonormalized
  std::vector<double> y;
  std::vector<double> w_star;  // normal-equations solution
  double f_star = 0.0;
};

double objective(const Mat& X, std::span<const double> y, std::span<const double> w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i) {
    double r = -y[i];
    for (std::size_t j = 0; j < X.cols; ++j) r += X(i, j) * w[j];
    acc += r * r;
  }
  return 0.5 * acc / static_cast<double>(X.rows);
}

std::vector<double> full_gradient(const Mat& X, std::span<const double> y,
                                  std::span<const double> w) {
  std::vector<double> g(X.cols, 0.0);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double r = -y[i];
    for (std::size_t j = 0; j < X.cols; ++j) r += X(i, j) * w[j];
    for (std::size_t j = 0; j < X.cols; ++j) g[j] += X(i, j) * r;
  }
  for (double& v : g) v /= static_cast<double>(X.rows);
  return g;
}

// Gaussian design with columns orthonormalized (modified Gram-Schmidt) and
// rescaled by sqrt(n). Returns nothing when a pivot collapses, so the
// caller can regenerate with a fresh seed.
std::optional<Mat> make_design(std::size_t n, std::size_t d, Rng& rng) {
  Mat X(n, d);
  for (double& v : X.data) v = rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += X(i, j) * X(i, k);
      for (std::size_t i = 0; i < n; ++i) X(i, j) -= dot * X(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += X(i, j) * X(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-8) return std::nullopt;
    for (std::size_t i = 0; i < n; ++i) X(i, j) /= norm;
  }
  double scale = std::sqrt(static_cast<double>(n));
  for (double& v : X.data) v *= scale;
  return X;
}

// Gaussian elimination with partial pivoting on the d x d normal equations.
std::vector<double> solve_normal_equations(const Mat& X, std::span<const double> y) {
  const std::size_t d = X.cols;
  Mat A(d, d);
  std::vector<double> b(d, 0.0);
  for (std::size_t i = 0; i < X.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      b[j] += X(i, j) * y[i];
      for (std::size_t k = j; k < d; ++k) A(j, k) += X(i, j) * X(i, k);
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) A(j, k) = A(k, j);
  }

  std::vector<std::size_t> perm(d);
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(A(r, col)) > std::abs(A(pivot, col))) pivot = r;
    }
    if (std::abs(A(pivot, col)) < 1e-12) {
      throw DataError("floor harness: singular normal equations");
    }
    if (pivot != col) {
      for (std::size_t k = 0; k < d; ++k) std::swap(A(col, k), A(pivot, k));
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < d; ++r) {
      double f = A(r, col) / A(col, col);
      for (std::size_t k = col; k < d; ++k) A(r, k) -= f * A(col, k);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> w(d, 0.0);
  for (std::size_t col = d; col-- > 0;) {
    double acc = b[col];
    for (std::size_t k = col + 1; k < d; ++k) acc -= A(col, k) * w[k];
    w[col] = acc / A(col, col);
  }
  (void)perm;
  return w;
}

Problem make_problem(std::size_t n, std::size_t d, std::uint64_t seed,
                     int* regenerated) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    Rng rng(derive_stream(seed, {kStreamDesign, static_cast<std::uint64_t>(attempt)}));
    std::optional<Mat> X = make_design(n, d, rng);
    if (!X) {
      ++*regenerated;
      continue;
    }
    Problem p;
    p.X = std::move(*X);
    std::vector<double> w_true(d);
    for (double& v : w_true) v = rng.uniform(-kTrueScale, kTrueScale);
    p.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = kObservationNoise * rng.normal();
      for (std::size_t j = 0; j < d; ++j) acc += p.X(i, j) * w_true[j];
      p.y[i] = acc;
    }
    p.w_star = solve_normal_equations(p.X, p.y);
    p.f_star = objective(p.X, p.y, p.w_star);
    return p;
  }
  throw DataError("floor harness: could not generate a non-singular design");
}

// Stochastic component gradient: the step optimizes one randomly selected
// per-sample loss, mirroring the per-iteration function selection of the
// empirical-risk setting.
std::vector<double> component_gradient(const Mat& X, std::span<const double> y,
                                       std::span<const double> w, Rng& rng) {
  std::size_t i = static_cast<std::size_t>(rng.uniform_below(X.rows));
  double r = -y[i];
  for (std::size_t j = 0; j < X.cols; ++j) r += X(i, j) * w[j];
  std::vector<double> g(X.cols);
  for (std::size_t j = 0; j < X.cols; ++j) g[j] = X(i, j) * r;
  return g;
}

double control_gap(const Problem& p, std::span<const double> w_init, long rounds,
                   double c, std::uint64_t seed) {
  Rng rng(derive_stream(seed, {kStreamControl}));
  std::vector<double> w(w_init.begin(), w_init.end());
  for (long t = 1; t <= rounds; ++t) {
    double eta = c / std::sqrt(static_cast<double>(t));
    std::vector<double> g = component_gradient(p.X, p.y, w, rng);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * g[j];
  }
  return objective(p.X, p.y, w) - p.f_star;
}

double bif_gap(const Problem& p, std::span<const double> w_init, int m, long rounds,
               double c, std::uint64_t seed) {
  const std::size_t d = p.X.cols;
  const double alpha = kWeightBound / static_cast<double>(std::int64_t(1) << (m - 1));

  Mat w0(1, d);
  std::copy(w_init.begin(), w_init.end(), w0.data.begin());
  IntMat xbar = quantize(w0, QuantParams{alpha, m});
  BitPlaneSet bits = decompose(xbar, m);

  std::vector<int> all_bits(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) all_bits[static_cast<std::size_t>(i)] = m - 1 - i;

  // All bits are activated, so the frozen contribution is just the offset.
  VirtualBitLayerT<double> layer;
  layer.activated = all_bits;
  layer.frozen = frozen_sum(bits, all_bits);
  layer.alpha = alpha;
  layer.m = m;

  // Sign-preserving init with the magnitude scaled by the bit's step
  // alpha * 2^i. All planes receive the same straight-through gradient, so
  // commensurate magnitudes are what lets low-order bits settle at their
  // own resolution; this matches chain-rule scaling of the step function's
  // surrogate slope.
  Rng init_rng(derive_stream(seed, {kStreamInit, static_cast<std::uint64_t>(m)}));
  const double sigma = std::sqrt(2.0 / static_cast<double>(d));
  for (int idx : all_bits) {
    MatT<double> v(1, d);
    double scale = alpha * static_cast<double>(std::int64_t(1) << idx);
    const auto& plane = bits.planes[static_cast<std::size_t>(idx)];
    for (std::size_t j = 0; j < d; ++j) {
      double mag;
      do {
        mag = std::abs(sigma * init_rng.normal());
      } while (mag == 0.0);
      v.data[j] = (plane[j] ? 1.0 : -1.0) * scale * mag;
    }
    layer.virtual_bits.push_back(std::move(v));
  }

  Rng rng(derive_stream(seed, {kStreamBif, static_cast<std::uint64_t>(m)}));
  std::vector<MatT<double>> vbar(layer.virtual_bits.size(), MatT<double>(1, d));
  for (long t = 1; t <= rounds; ++t) {
    double eta = c / std::sqrt(static_cast<double>(t));
    MatT<double> theta = reconstruct(layer);
    std::vector<double> g = component_gradient(p.X, p.y, theta.data, rng);
    for (std::size_t pos = 0; pos < layer.virtual_bits.size(); ++pos) {
      auto& v = layer.virtual_bits[pos];
      for (std::size_t j = 0; j < d; ++j) v.data[j] -= eta * g[j];
      for (std::size_t j = 0; j < d; ++j) vbar[pos].data[j] += v.data[j];
    }
  }

  VirtualBitLayerT<double> averaged = layer;
  for (std::size_t pos = 0; pos < vbar.size(); ++pos) {
    for (double& vj : vbar[pos].data) vj /= static_cast<double>(rounds);
    averaged.virtual_bits[pos] = vbar[pos];
  }
  MatT<double> theta_bar = reconstruct(averaged);
  return objective(p.X, p.y, theta_bar.data) - p.f_star;
}

}  // namespace

void FloorHarnessConfig::validate() const {
  if (m_values.size() < 2) throw ConfigError("floor: need at least two bit widths");
  for (int m : m_values) {
    if (m < kMinBitWidth || m > kMaxBitWidth) throw ConfigError("floor: m out of [2,8]");
  }
  if (dim == 0) throw ConfigError("floor: dim must be >= 1");
  if (samples < dim) throw ConfigError("floor: need at least dim samples");
  if (rounds < 1) throw ConfigError("floor: rounds must be >= 1");
  if (seeds.empty()) throw ConfigError("floor: need at least one seed");
  if (!(lr_constant > 0.0)) throw ConfigError("floor: lr constant must be positive");
}

FloorResult run_floor_harness(const FloorHarnessConfig& cfg) {
  cfg.validate();
  FloorResult result;
  result.m_values = cfg.m_values;
  result.mean_gap.assign(cfg.m_values.size(), 0.0);
  result.regenerated_designs = 0;

  for (std::uint64_t seed : cfg.seeds) {
    Problem p = make_problem(cfg.samples, cfg.dim, seed, &result.regenerated_designs);

    FloorSeedDetail detail;
    detail.seed = seed;

    // Cross-check the closed form with a long full-gradient descent.
    {
      std::vector<double> w(cfg.dim, 0.0);
      for (int it = 0; it < 4000; ++it) {
        std::vector<double> g = full_gradient(p.X, p.y, w);
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * g[j];
      }
      detail.ne_vs_gd_gap = std::abs(objective(p.X, p.y, w) - p.f_star);
    }

    Rng init_rng(derive_stream(seed, {kStreamInit}));
    std::vector<double> w_init(cfg.dim);
    for (double& v : w_init) v = init_rng.uniform(-kTrueScale, kTrueScale);

    detail.control_gap = control_gap(p, w_init, cfg.rounds, cfg.lr_constant, seed);
    for (std::size_t mi = 0; mi < cfg.m_values.size(); ++mi) {
      double gap =
          bif_gap(p, w_init, cfg.m_values[mi], cfg.rounds, cfg.lr_constant, seed);
      detail.gap_by_m[cfg.m_values[mi]] = gap;
      result.mean_gap[mi] += gap;
    }
    result.control_mean_gap += detail.control_gap;
    result.seeds.push_back(std::move(detail));
  }

  const double inv = 1.0 / static_cast<double>(cfg.seeds.size());
  for (double& g : result.mean_gap) g *= inv;
  result.control_mean_gap *= inv;
  return result;
}

std::string floor_table_csv(const FloorResult& result) {
  std::ostringstream os;
  os << "m,mean_gap\n";
  os.precision(12);
  for (std::size_t i = 0; i < result.m_values.size(); ++i) {
    os << result.m_values[i] << "," << result.mean_gap[i] << "\n";
  }
  os << "control," << result.control_mean_gap << "\n";
  return os.str();
}

}  // namespace fedbif
