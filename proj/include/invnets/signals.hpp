#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invnets/common.hpp"
#include "invnets/networks.hpp"
#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"

namespace invnets::sig {

using num::CMat;
using num::Cplx;
using num::CVec;
using num::RMat;
using num::RVec;

// ---------------------------------------------------------------------------
// Doublet array model.
// ---------------------------------------------------------------------------

struct ArrayConfig {
  int n_sources = 1;
  int m_doublets = 4;
  double omega0 = 2.0 * M_PI;  // center frequency, rad/s
  double delta = 0.5;          // doublet displacement
  double wave_speed = 1.0;
  CMat noise_cov;              // empty: white noise scaled from snr_db
  double snr_db = 10.0;        // infinity = noiseless
  double source_rho = 0.0;     // AR(1) pole magnitude; 0 = white, 1 = tones
  double drift_lo = 0.1, drift_hi = 0.6;  // per-source phase drift magnitude

  double phase_gain() const { return omega0 * delta / wave_speed; }
};

struct SignalBatch {
  CMat p, q;  // m x T
  std::vector<double> thetas_true;
  std::uint64_t seed = 0;
};

/// Per-doublet steering phases a_i(theta) = exp(j w0 (i-1) delta sin(theta) / c).
inline CVec steering_vector(const ArrayConfig& cfg, double theta) {
  CVec a(cfg.m_doublets);
  double k = cfg.phase_gain() * std::sin(theta);
  for (int i = 0; i < cfg.m_doublets; ++i) a[i] = std::polar(1.0, k * i);
  return a;
}

/// Rotation factor between the two subarrays: e^{j w0 sin(theta) delta / c}.
inline Cplx phi_factor(const ArrayConfig& cfg, double theta) {
  return std::polar(1.0, cfg.phase_gain() * std::sin(theta));
}

/// Stacked steering for the 2m sensor vector [p; q].
inline CVec stacked_steering(const ArrayConfig& cfg, double theta) {
  CVec a = steering_vector(cfg, theta);
  CVec out(2 * cfg.m_doublets);
  out.head(cfg.m_doublets) = a;
  out.tail(cfg.m_doublets) = phi_factor(cfg, theta) * a;
  return out;
}

/// Simulates P = A S + E_p, Q = A Phi S + E_q with stationary unit-variance
/// circular Gaussian sources (AR(1) when source_rho > 0, deterministic tones
/// at source_rho = 1) and noise scaled to snr_db unless noise_cov is given.
inline SignalBatch simulate(const ArrayConfig& cfg, const std::vector<double>& thetas, int t_len,
                            std::uint64_t seed) {
  const int n = cfg.n_sources, m = cfg.m_doublets;
  if (static_cast<int>(thetas.size()) != n)
    throw ContractError("simulate: theta count must equal n_sources");
  for (std::size_t i = 0; i < thetas.size(); ++i)
    for (std::size_t j = i + 1; j < thetas.size(); ++j)
      if (std::abs(thetas[i] - thetas[j]) < 1e-12)
        throw ContractError("simulate: thetas must be distinct");
  if (t_len < 1) throw ContractError("simulate: need at least one snapshot");
  if (n > m) throw ContractError("simulate: require n <= m");

  auto stream = rng::Stream(seed, 0x51C);
  SignalBatch batch;
  batch.thetas_true = thetas;
  batch.seed = seed;

  CMat a(m, n);
  CVec phi(n);
  for (int l = 0; l < n; ++l) {
    a.col(l) = steering_vector(cfg, thetas[l]);
    phi[l] = phi_factor(cfg, thetas[l]);
  }

  // source poles rho e^{j nu_l}
  std::vector<Cplx> poles(n);
  for (int l = 0; l < n; ++l) {
    double nu = stream.uniform(cfg.drift_lo, cfg.drift_hi);
    if (stream.uniform01() < 0.5) nu = -nu;
    poles[l] = std::polar(cfg.source_rho, nu);
  }
  const double innovation = std::sqrt(std::max(0.0, 1.0 - cfg.source_rho * cfg.source_rho));

  CMat s(n, t_len);
  for (int l = 0; l < n; ++l) s(l, 0) = stream.circular_normal();
  for (int t = 1; t < t_len; ++t)
    for (int l = 0; l < n; ++l)
      s(l, t) = poles[l] * s(l, t - 1) + innovation * stream.circular_normal();

  batch.p = a * s;
  batch.q = a * phi.asDiagonal() * s;

  if (cfg.noise_cov.size() > 0) {
    if (cfg.noise_cov.rows() != 2 * m || cfg.noise_cov.cols() != 2 * m)
      throw ContractError("simulate: noise_cov must be 2m x 2m");
    if (!num::is_hermitian(cfg.noise_cov, 1e-10))
      throw ContractError("simulate: noise_cov must be Hermitian");
    Eigen::LLT<CMat> llt(cfg.noise_cov + 1e-12 * CMat::Identity(2 * m, 2 * m));
    CMat l_fac = llt.matrixL();
    for (int t = 0; t < t_len; ++t) {
      CVec z(2 * m);
      for (int i = 0; i < 2 * m; ++i) z[i] = stream.circular_normal();
      CVec eps = l_fac * z;
      batch.p.col(t) += eps.head(m);
      batch.q.col(t) += eps.tail(m);
    }
  } else if (!std::isinf(cfg.snr_db)) {
    double sigma = std::sqrt(std::max(n, 1) * std::pow(10.0, -cfg.snr_db / 10.0));
    for (int t = 0; t < t_len; ++t)
      for (int i = 0; i < m; ++i) {
        batch.p(i, t) += sigma * stream.circular_normal();
        batch.q(i, t) += sigma * stream.circular_normal();
      }
  }
  return batch;
}

/// (1/T) Z Z* for the stacked snapshots Z = [P; Q].
inline CMat sample_covariance(const SignalBatch& batch) {
  const int m = static_cast<int>(batch.p.rows());
  const int t_len = static_cast<int>(batch.p.cols());
  if (t_len < 1) throw ContractError("sample_covariance: need at least one snapshot");
  CMat z(2 * m, t_len);
  z.topRows(m) = batch.p;
  z.bottomRows(m) = batch.q;
  CMat r = (z * z.adjoint()) / static_cast<double>(t_len);
  return 0.5 * (r + r.adjoint());
}

// ---------------------------------------------------------------------------
// Subspace estimators.
// ---------------------------------------------------------------------------

struct DOAEstimate {
  std::vector<double> thetas;
  std::string method;
  std::vector<double> spectrum;         // MUSIC only
  std::vector<bool> aliased;            // ESPRIT per-source flags
  std::vector<Cplx> op_eigenvalues;     // ESPRIT rotation-operator eigenvalues
};

struct PeakDetectionError : std::runtime_error {
  std::vector<double> found;
  PeakDetectionError(std::vector<double> peaks, const std::string& what)
      : std::runtime_error(what), found(std::move(peaks)) {}
};

/// MUSIC: scans stacked steering vectors against the noise subspace of the
/// sample covariance; returns the n largest well-separated grid peaks.
inline DOAEstimate music(const ArrayConfig& cfg, const CMat& cov, int grid_size) {
  const int m = cfg.m_doublets, n = cfg.n_sources;
  if (grid_size < 64) throw ContractError("music: grid_size must be >= 64");
  if (!(n < 2 * m)) throw ContractError("music: require n < 2m");
  if (cov.rows() != 2 * m || cov.cols() != 2 * m)
    throw ContractError("music: covariance must be 2m x 2m");

  auto eig = num::eig_hermitian(cov);
  CMat noise_sub = eig.eigenvectors.rightCols(2 * m - n);

  DOAEstimate est;
  est.method = "music";
  est.spectrum.resize(grid_size);
  std::vector<double> grid(grid_size);
  const double ridge = 1e-12;
  for (int g = 0; g < grid_size; ++g) {
    grid[g] = -M_PI_2 + (g + 0.5) * M_PI / grid_size;
    CVec a = stacked_steering(cfg, grid[g]);
    est.spectrum[g] = 1.0 / ((noise_sub.adjoint() * a).squaredNorm() + ridge);
  }

  // strict local maxima, floored well above the median level
  std::vector<double> sorted = est.spectrum;
  std::nth_element(sorted.begin(), sorted.begin() + grid_size / 2, sorted.end());
  const double floor = 5.0 * sorted[grid_size / 2];
  std::vector<int> candidates;
  for (int g = 0; g < grid_size; ++g) {
    double left = g > 0 ? est.spectrum[g - 1] : -1.0;
    double right = g + 1 < grid_size ? est.spectrum[g + 1] : -1.0;
    if (est.spectrum[g] > left && est.spectrum[g] > right && est.spectrum[g] >= floor)
      candidates.push_back(g);
  }
  std::sort(candidates.begin(), candidates.end(),
            [&](int u, int v) { return est.spectrum[u] > est.spectrum[v]; });
  const int min_sep = std::max(1, grid_size / 512);
  std::vector<int> picked;
  for (int g : candidates) {
    bool clash = false;
    for (int h : picked)
      if (std::abs(g - h) < min_sep) clash = true;
    if (!clash) picked.push_back(g);
    if (static_cast<int>(picked.size()) == n) break;
  }
  if (static_cast<int>(picked.size()) < n) {
    std::vector<double> found;
    std::string msg = "music: found " + std::to_string(picked.size()) + " of " +
                      std::to_string(n) + " peaks above the noise floor:";
    for (int g : picked) {
      found.push_back(grid[g]);
      msg += " " + std::to_string(grid[g]);
    }
    throw PeakDetectionError(std::move(found), msg);
  }
  for (int g : picked) est.thetas.push_back(grid[g]);
  std::sort(est.thetas.begin(), est.thetas.end());
  est.aliased.assign(n, false);
  return est;
}

/// ESPRIT: the P- and Q-block signal subspaces are related by the rotation
/// operator; its eigenvalues e^{j w0 sin(theta) delta / c} carry the DOAs.
inline DOAEstimate esprit(const ArrayConfig& cfg, const CMat& cov) {
  const int m = cfg.m_doublets, n = cfg.n_sources;
  if (n > m) throw ContractError("esprit: require n <= m");
  if (cov.rows() != 2 * m || cov.cols() != 2 * m)
    throw ContractError("esprit: covariance must be 2m x 2m");

  auto eig = num::eig_hermitian(cov);
  CMat signal_sub = eig.eigenvectors.leftCols(n);
  CMat e1 = signal_sub.topRows(m);
  CMat e2 = signal_sub.bottomRows(m);
  CMat psi = num::solve_least_squares(e1, e2);
  auto general = num::eig_general(psi);

  DOAEstimate est;
  est.method = "esprit";
  struct Entry {
    double theta;
    bool aliased;
    Cplx lambda;
  };
  std::vector<Entry> entries;
  for (int l = 0; l < n; ++l) {
    Cplx lambda = general.eigenvalues[l];
    double u = std::arg(lambda) / cfg.phase_gain();
    Entry e{0.0, false, lambda};
    if (std::abs(u) > 1.0) {
      e.aliased = true;
      e.theta = std::numeric_limits<double>::quiet_NaN();
    } else {
      e.theta = std::asin(u);
    }
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (std::isnan(a.theta)) return false;
    if (std::isnan(b.theta)) return true;
    return a.theta < b.theta;
  });
  for (const auto& e : entries) {
    est.thetas.push_back(e.theta);
    est.aliased.push_back(e.aliased);
    est.op_eigenvalues.push_back(e.lambda);
  }
  return est;
}

inline DOAEstimate esprit(const ArrayConfig& cfg, const SignalBatch& batch) {
  return esprit(cfg, sample_covariance(batch));
}

// ---------------------------------------------------------------------------
// Forecasting benchmark.
// ---------------------------------------------------------------------------

struct ForecastModel {
  std::string kind;  // fcn | cvnn | esprit_predictor | music_predictor
  int width = 0;     // hidden width for the neural forecasters
};

struct BenchRow {
  std::string model;
  std::string settings;
  long params = 0;
  double mse_median = 0.0;
  double mse_iqr = 0.0;
  int trials = 0;
  bool valid = false;
};

struct BenchConfig {
  ArrayConfig array;
  int snapshots = 512;
  double train_frac = 0.8;
  int window = 10;
  int horizon = 1;
  int window_stride = 1;
  int music_grid = 1024;
  net::TrainConfig train;
  int trials = 20;
  std::uint64_t seed = 0;
  double theta_span = 1.2;  // sources spread over [-span, span]
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  double pos = q * (v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// One-step-ahead prediction through an estimated (A, Phi, s) model with
/// per-source AR(1) poles fitted on the training segment.
inline double subspace_predictor_mse(const ArrayConfig& cfg, const CMat& z, int t_train,
                                     int horizon, const std::vector<double>& thetas) {
  const int m = cfg.m_doublets, n = cfg.n_sources;
  const int t_len = static_cast<int>(z.cols());
  CMat a_hat(2 * m, n);
  for (int l = 0; l < n; ++l) a_hat.col(l) = stacked_steering(cfg, thetas[l]);
  CMat s_hat = num::solve_least_squares(a_hat, z);  // n x T

  CVec num_acc = CVec::Zero(n);
  RVec den_acc = RVec::Zero(n);
  for (int t = 0; t + horizon < t_train; ++t)
    for (int l = 0; l < n; ++l) {
      num_acc[l] += s_hat(l, t + horizon) * std::conj(s_hat(l, t));
      den_acc[l] += std::norm(s_hat(l, t));
    }
  CVec pole(n);
  for (int l = 0; l < n; ++l) pole[l] = den_acc[l] > 0 ? num_acc[l] / den_acc[l] : Cplx(0, 0);

  double acc = 0.0;
  int count = 0;
  for (int t = t_train; t < t_len; ++t) {
    CVec pred = a_hat * (pole.array() * s_hat.col(t - horizon).array()).matrix();
    acc += (pred - z.col(t)).squaredNorm();
    count += 2 * m;
  }
  return acc / count;
}

struct WindowSets {
  net::CplxBatch train, test;
};

/// Per-sensor sliding windows over the rows of Z; inputs are the window
/// samples, the target is the sample horizon steps ahead.
inline WindowSets make_windows(const CMat& z, int t_train, int window, int horizon, int stride) {
  const int rows = static_cast<int>(z.rows());
  const int t_len = static_cast<int>(z.cols());
  auto fill = [&](int t_from, int t_to, int use_stride, net::CplxBatch& out) {
    std::vector<int> starts;  // window start s predicts s + window + horizon - 1
    for (int t = t_from; t + window + horizon - 1 < t_to; t += use_stride) starts.push_back(t);
    const int count = static_cast<int>(starts.size()) * rows;
    out.x_re.resize(count, window);
    out.x_im.resize(count, window);
    out.y_re.resize(count);
    out.y_im.resize(count);
    int k = 0;
    for (int i = 0; i < rows; ++i)
      for (int s : starts) {
        for (int j = 0; j < window; ++j) {
          out.x_re(k, j) = z(i, s + j).real();
          out.x_im(k, j) = z(i, s + j).imag();
        }
        Cplx y = z(i, s + window + horizon - 1);
        out.y_re[k] = y.real();
        out.y_im[k] = y.imag();
        ++k;
      }
  };
  WindowSets sets;
  fill(0, t_train, stride, sets.train);
  fill(t_train - window - horizon + 1, t_len, 1, sets.test);
  return sets;
}

inline double cvnn_forecaster_mse(const WindowSets& sets, int width, int window,
                                  const net::TrainConfig& cfg, std::uint64_t seed) {
  auto init = rng::split(seed, 0xCF0);
  net::CplxForecaster model = net::CplxForecaster::init(window, width, init);
  net::train(model, sets.train, cfg);
  RVec o_re, o_im;
  model.forward_batch(sets.test.x_re, sets.test.x_im, o_re, o_im);
  double n = static_cast<double>(sets.test.y_re.size());
  return ((o_re - sets.test.y_re).squaredNorm() + (o_im - sets.test.y_im).squaredNorm()) / n;
}

/// Real baseline: one shared FCN trained on the pooled Re and Im series.
inline double fcn_forecaster_mse(const WindowSets& sets, int width, int window,
                                 const net::TrainConfig& cfg, std::uint64_t seed) {
  auto to_real = [](const net::CplxBatch& c) {
    net::RealBatch r;
    const Eigen::Index n = c.y_re.size();
    r.x.resize(2 * n, c.x_re.cols());
    r.y.resize(2 * n);
    r.x.topRows(n) = c.x_re;
    r.x.bottomRows(n) = c.x_im;
    r.y.head(n) = c.y_re;
    r.y.tail(n) = c.y_im;
    return r;
  };
  net::RealBatch train_set = to_real(sets.train);
  net::RealBatch test_set = to_real(sets.test);
  auto init = rng::split(seed, 0xFC0);
  net::FCN model = net::FCN::init(window, width, init, net::Activation::relu);
  net::train(model, train_set, cfg);
  RVec out = model.forward_batch(test_set.x);
  // complex squared error = paired Re + Im component errors
  return 2.0 * (out - test_set.y).squaredNorm() / static_cast<double>(test_set.y.size());
}

}  // namespace detail

/// Runs every model on `trials` independent simulations and reports
/// per-sensor-per-snapshot one-step-ahead MSE medians.
inline std::vector<BenchRow> forecast_benchmark(const BenchConfig& cfg,
                                                const std::vector<ForecastModel>& models) {
  if (cfg.trials < 5) throw ContractError("forecast_benchmark: trials must be >= 5");
  const int n = cfg.array.n_sources, m = cfg.array.m_doublets;
  std::vector<std::vector<double>> mses(models.size());
  for (auto& v : mses) v.reserve(cfg.trials);
  std::vector<int> failures(models.size(), 0);

  std::vector<std::vector<double>> trial_mses(cfg.trials,
                                              std::vector<double>(models.size(),
                                                                  std::numeric_limits<double>::quiet_NaN()));
  parallel_cells(cfg.trials, [&](std::size_t trial) {
    auto stream = rng::split(cfg.seed, 0xBE00 + trial);
    std::vector<double> thetas(n);
    for (int l = 0; l < n; ++l) {
      double base = n == 1 ? 0.0 : -cfg.theta_span + 2.0 * cfg.theta_span * l / (n - 1);
      thetas[l] = base + 0.02 * stream.uniform(-1.0, 1.0);
    }
    SignalBatch batch = simulate(cfg.array, thetas, cfg.snapshots, cfg.seed * 7919 + trial);
    CMat z(2 * m, cfg.snapshots);
    z.topRows(m) = batch.p;
    z.bottomRows(m) = batch.q;
    const int t_train = static_cast<int>(cfg.train_frac * cfg.snapshots);
    CMat z_train = z.leftCols(t_train);
    SignalBatch train_view{z_train.topRows(m), z_train.bottomRows(m), thetas, batch.seed};
    CMat cov = sample_covariance(train_view);

    detail::WindowSets sets =
        detail::make_windows(z, t_train, cfg.window, cfg.horizon, cfg.window_stride);

    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const auto& model = models[mi];
      try {
        double mse = 0.0;
        if (model.kind == "esprit_predictor") {
          DOAEstimate est = esprit(cfg.array, cov);
          for (bool al : est.aliased)
            if (al) throw std::runtime_error("esprit: aliased source");
          mse = detail::subspace_predictor_mse(cfg.array, z, t_train, cfg.horizon, est.thetas);
        } else if (model.kind == "music_predictor") {
          DOAEstimate est = music(cfg.array, cov, cfg.music_grid);
          mse = detail::subspace_predictor_mse(cfg.array, z, t_train, cfg.horizon, est.thetas);
        } else if (model.kind == "cvnn") {
          mse = detail::cvnn_forecaster_mse(sets, model.width, cfg.window, cfg.train,
                                            cfg.seed ^ (trial * 131 + model.width));
        } else if (model.kind == "fcn") {
          mse = detail::fcn_forecaster_mse(sets, model.width, cfg.window, cfg.train,
                                           cfg.seed ^ (trial * 131 + model.width));
        } else {
          throw ContractError("forecast_benchmark: unknown model kind " + model.kind);
        }
        trial_mses[trial][mi] = mse;
      } catch (const ContractError&) {
        throw;
      } catch (const std::exception&) {
        // estimation failure in this trial; row stays NaN
      }
    }
  });

  std::vector<BenchRow> rows;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& model = models[mi];
    std::vector<double> vals;
    for (int tr = 0; tr < cfg.trials; ++tr)
      if (std::isfinite(trial_mses[tr][mi])) vals.push_back(trial_mses[tr][mi]);
    BenchRow row;
    row.model = model.kind;
    if (model.kind == "cvnn" || model.kind == "fcn") {
      row.settings = "size(" + std::to_string(cfg.window) + "," + std::to_string(model.width) + ",1)";
      row.params = model.kind == "cvnn"
                       ? 2L * ((cfg.window + 2L) * model.width + 1)
                       : (cfg.window + 2L) * model.width + 1;
    } else if (model.kind == "music_predictor") {
      row.settings = "grid=" + std::to_string(cfg.music_grid);
      row.params = 3L * n;
    } else {
      row.settings = "ls-rotation";
      row.params = 3L * n;
    }
    row.trials = static_cast<int>(vals.size());
    row.valid = static_cast<int>(vals.size()) * 2 > cfg.trials;
    if (!vals.empty()) {
      row.mse_median = detail::quantile(vals, 0.5);
      row.mse_iqr = detail::quantile(vals, 0.75) - detail::quantile(vals, 0.25);
    }
    rows.push_back(row);
  }
  return rows;
}

/// CSV export; MSE is per sensor per snapshot (squared complex error).
inline std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "# mse is per-sensor-per-snapshot squared complex prediction error\n";
  out << "model,settings,param_count,mse_median,mse_iqr,trials,valid\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.model << ',' << r.settings << ',' << r.params << ',';
    std::snprintf(buf, sizeof(buf), "%.12g", r.mse_median);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.12g", r.mse_iqr);
    out << buf << ',' << r.trials << ',' << (r.valid ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace invnets::sig
