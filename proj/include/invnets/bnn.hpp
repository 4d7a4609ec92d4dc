#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"

namespace invnets::bnn {

using num::RMat;
using num::RVec;

// ---------------------------------------------------------------------------
// Gaussian beliefs and the translation-direction basis.
// ---------------------------------------------------------------------------

struct GaussianBelief {
  RVec mean;
  RMat cov;

  static GaussianBelief make(RVec mean, RMat cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw ContractError("GaussianBelief: shape mismatch");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw ContractError("GaussianBelief: covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<RMat> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() < -1e-9)
      throw ContractError("GaussianBelief: covariance must be positive semidefinite");
    return GaussianBelief{std::move(mean), 0.5 * (cov + cov.transpose())};
  }

  static GaussianBelief isotropic(int dim, double var) {
    return GaussianBelief{RVec::Zero(dim), var * RMat::Identity(dim, dim)};
  }

  int dim() const { return static_cast<int>(mean.size()); }
};

/// d x (d-1) basis B with B' x = 0: weight translations w + B dw leave w' x
/// unchanged. Built by the divide-by-x_d construction, pivoted to the
/// largest-magnitude coordinate for stability.
struct TranslationBasis {
  RMat b;
  RVec anchor;
  double eta = 0.0;  // largest singular value of B

  int dim() const { return static_cast<int>(anchor.size()); }
};

inline TranslationBasis build_translation_basis(const RVec& x) {
  const int d = static_cast<int>(x.size());
  if (d < 1 || x.norm() == 0.0)
    throw ContractError("build_translation_basis: anchor must be nonzero");
  int pivot = 0;
  for (int i = 1; i < d; ++i)
    if (std::abs(x[i]) > std::abs(x[pivot])) pivot = i;

  // In pivot-last coordinates: B = [I; -(x_1..x_{d-1})/x_pivot].
  TranslationBasis basis;
  basis.anchor = x;
  basis.b = RMat::Zero(d, d - 1);
  int row = 0;
  double ratio_sq = 0.0;
  for (int i = 0; i < d; ++i) {
    if (i == pivot) continue;
    basis.b(i, row) = 1.0;
    double ratio = x[i] / x[pivot];
    basis.b(pivot, row) = -ratio;
    ratio_sq += ratio * ratio;
    ++row;
  }
  basis.eta = std::sqrt(1.0 + ratio_sq);  // sigma_max of [I; -v'] is sqrt(1 + ||v||^2)
  return basis;
}

// ---------------------------------------------------------------------------
// Gaussian algebra: products, translation marginals, linear posteriors.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::LLT<RMat> require_pd(const RMat& cov, const char* who) {
  Eigen::LLT<RMat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw ContractError(std::string(who) + ": covariance is singular or not positive definite");
  return llt;
}

}  // namespace detail

/// Normalized Gaussian density product:
/// nu = Sigma_w (Sigma_x + Sigma_w)^-1 mu_x + Sigma_x (Sigma_x + Sigma_w)^-1 mu_w,
/// Sigma = Sigma_x (Sigma_x + Sigma_w)^-1 Sigma_w.
inline GaussianBelief gaussian_product(const GaussianBelief& q, const GaussianBelief& p) {
  if (q.dim() != p.dim()) throw ContractError("gaussian_product: dimension mismatch");
  detail::require_pd(q.cov, "gaussian_product");
  detail::require_pd(p.cov, "gaussian_product");
  RMat sum = q.cov + p.cov;
  auto llt = detail::require_pd(sum, "gaussian_product");
  RMat k_q = llt.solve(q.cov);  // (Sx+Sw)^-1 Sx
  RMat k_p = llt.solve(p.cov);
  RVec mean = k_p.transpose() * q.mean + k_q.transpose() * p.mean;
  RMat cov = q.cov * k_p;
  cov = 0.5 * (cov + cov.transpose());
  return GaussianBelief{std::move(mean), std::move(cov)};
}

/// Marginal of q(w + B dw) over dw ~ N(0, beta^2 I): N(mu, Sigma + beta^2 B B').
/// Carries the precision alongside; at beta = infinity the precision is the
/// degenerate limit Sigma^-1 - Sigma^-1 B (B' Sigma^-1 B)^-1 B' Sigma^-1 and
/// no proper covariance exists.
struct GaussianWithPrecision {
  RVec mean;
  RMat cov;        // finite beta only
  RMat precision;
  double beta = 0.0;
  bool degenerate = false;
};

inline GaussianWithPrecision marginal_over_subspace(const GaussianBelief& q, const RMat& b,
                                                    double beta) {
  if (b.rows() != q.dim()) throw ContractError("marginal_over_subspace: basis shape mismatch");
  auto llt = detail::require_pd(q.cov, "marginal_over_subspace");
  if (b.cols() > 0) {
    Eigen::ColPivHouseholderQR<RMat> qr(b);
    if (qr.rank() < b.cols())
      throw ContractError("marginal_over_subspace: basis is rank deficient (rank " +
                          std::to_string(qr.rank()) + ")");
  }
  GaussianWithPrecision out;
  out.mean = q.mean;
  out.beta = beta;
  const RMat id = RMat::Identity(q.dim(), q.dim());
  if (beta == 0.0 || b.cols() == 0) {
    out.cov = q.cov;
    out.precision = llt.solve(id);
    return out;
  }
  RMat sigma_inv = llt.solve(id);
  RMat sb = sigma_inv * b;                  // Sigma^-1 B
  RMat core = b.transpose() * sb;           // B' Sigma^-1 B
  if (std::isinf(beta)) {
    out.degenerate = true;
    out.cov = q.cov;  // no proper covariance in the limit; kept for shape
    RMat inner = core.ldlt().solve(sb.transpose());
    out.precision = sigma_inv - sb * inner;
    out.precision = 0.5 * (out.precision + out.precision.transpose());
    return out;
  }
  out.cov = q.cov + beta * beta * (b * b.transpose());
  RMat shifted = core + (1.0 / (beta * beta)) * RMat::Identity(b.cols(), b.cols());
  RMat inner = shifted.ldlt().solve(sb.transpose());
  out.precision = sigma_inv - sb * inner;
  out.precision = 0.5 * (out.precision + out.precision.transpose());
  return out;
}

inline GaussianWithPrecision marginal_over_subspace(const GaussianBelief& q,
                                                    const TranslationBasis& basis, double beta) {
  return marginal_over_subspace(q, basis.b, beta);
}

/// Product of a (possibly degenerate) precision-form likelihood with a proper
/// Gaussian prior; the prior keeps the result proper.
inline GaussianBelief gaussian_product(const GaussianWithPrecision& like,
                                       const GaussianBelief& prior) {
  auto llt = detail::require_pd(prior.cov, "gaussian_product");
  const RMat id = RMat::Identity(prior.dim(), prior.dim());
  RMat prior_prec = llt.solve(id);
  RMat post_prec = like.precision + prior_prec;
  Eigen::LDLT<RMat> post(post_prec);
  RVec mean = post.solve(like.precision * like.mean + prior_prec * prior.mean);
  RMat cov = post.solve(id);
  cov = 0.5 * (cov + cov.transpose());
  return GaussianBelief{std::move(mean), std::move(cov)};
}

/// Posterior for the scaled linear observation y = (1/d) w' x + eps,
/// eps ~ N(0, noise_var), composed from the translation-marginal likelihood
/// and the Gaussian product. beta = infinity gives the exact Bayes posterior
/// (the likelihood is flat along the translation subspace).
inline GaussianBelief linear_posterior(const RVec& x, double y, double noise_var,
                                       const GaussianBelief& prior,
                                       double beta = std::numeric_limits<double>::infinity()) {
  if (!(noise_var > 0.0)) throw ContractError("linear_posterior: noise_var must be positive");
  if (x.size() != prior.dim()) throw ContractError("linear_posterior: dimension mismatch");
  const int d = static_cast<int>(x.size());
  const double xs = x.squaredNorm();
  if (xs == 0.0) return prior;  // no information

  TranslationBasis basis = build_translation_basis(x);
  // Likelihood as a Gaussian over w: variance noise_var d^2 / ||x||^2 along
  // x-hat, a small placeholder variance along the translation directions
  // (the marginalization widens or removes it).
  const double sigma_along = noise_var * d * d / xs;
  RVec mu_x = (y * d / xs) * x;
  RMat sigma0 = sigma_along * (x * x.transpose()) / xs +
                (sigma_along * 1e-8) * (basis.b * basis.b.transpose());
  if (d == 1) sigma0 = RMat::Constant(1, 1, sigma_along);
  GaussianBelief q0{mu_x, 0.5 * (sigma0 + sigma0.transpose())};
  GaussianWithPrecision marginal = marginal_over_subspace(q0, basis, beta);
  return gaussian_product(marginal, prior);
}

/// KL(q0 || q1) for Gaussians, computed from the whitened eigenvalues so
/// near-identical pairs keep relative accuracy.
inline double kl_gaussian(const GaussianBelief& q0, const GaussianBelief& q1) {
  auto llt = detail::require_pd(q1.cov, "kl_gaussian");
  RMat l_inv = llt.matrixL().solve(RMat::Identity(q0.dim(), q0.dim()));
  RMat m = l_inv * q0.cov * l_inv.transpose();
  Eigen::SelfAdjointEigenSolver<RMat> es(0.5 * (m + m.transpose()));
  double acc = 0.0;
  for (int i = 0; i < q0.dim(); ++i) {
    double u = es.eigenvalues()[i] - 1.0;
    acc += u - std::log1p(u);
  }
  RVec dm = l_inv * (q1.mean - q0.mean);
  return 0.5 * (acc + dm.squaredNorm());
}

// ---------------------------------------------------------------------------
// Layerwise iterative optimization (Appendix-D style fixed point).
// ---------------------------------------------------------------------------

enum class LayerAct { identity, tanh };

struct LayerwiseConfig {
  std::vector<int> widths;  // output width per layer; last is the output dim
  int iterations = 30;
  int mc_budget = 64;
  std::uint64_t seed = 0;
  double noise_var = 0.1;
  double prior_var = 1.0;
  double damping = 0.15;  // blend toward the fresh posterior after iteration 1
  LayerAct act = LayerAct::tanh;
};

struct LayerState {
  int layer_index = 0;
  std::vector<GaussianBelief> rows;  // one belief per weight row
  RMat activation_samples;           // mc_budget x width
};

struct IterationTrace {
  std::vector<double> total;  // Delta_t = sum over layers of KL[q_t || q_{t-1}]
  RMat per_layer;             // iterations x L
};

struct LayerwiseResult {
  std::vector<LayerState> layers;
  IterationTrace trace;
};

struct NonFiniteMoments : std::runtime_error {
  int layer, iteration;
  NonFiniteMoments(int l, int t, const std::string& what)
      : std::runtime_error(what), layer(l), iteration(t) {}
};

namespace detail {

inline double layer_act(LayerAct a, double s) {
  return a == LayerAct::identity ? s : std::tanh(s);
}

inline double layer_act_inv(LayerAct a, double v) {
  if (a == LayerAct::identity) return v;
  return std::atanh(std::clamp(v, -0.99, 0.99));
}

}  // namespace detail

/// Runs the layerwise loop: backward target assignment from posterior-mean
/// point estimates, per-row Gaussian regression updates from the fixed prior,
/// Monte-Carlo forward propagation with common random numbers (the same
/// weight draws every iteration, so the loop is a deterministic map).
inline LayerwiseResult layerwise_iterate(const RMat& data_x, const RVec& data_y,
                                         const LayerwiseConfig& cfg) {
  const int big_l = static_cast<int>(cfg.widths.size());
  if (big_l < 1) throw ContractError("layerwise_iterate: need at least one layer");
  if (cfg.iterations < 1) throw ContractError("layerwise_iterate: T must be >= 1");
  if (cfg.mc_budget < 1) throw ContractError("layerwise_iterate: mc_budget must be >= 1");
  if (data_x.rows() != data_y.size())
    throw ContractError("layerwise_iterate: data shape mismatch");
  if (cfg.widths.back() != 1)
    throw ContractError("layerwise_iterate: final layer width must be 1 (scalar regression)");

  std::vector<int> dims;  // dims[0] = input dim, dims[l] = width of layer l
  dims.push_back(static_cast<int>(data_x.cols()));
  for (int w : cfg.widths) dims.push_back(w);

  LayerwiseResult result;
  result.layers.resize(big_l);
  for (int l = 0; l < big_l; ++l) {
    result.layers[l].layer_index = l + 1;
    result.layers[l].rows.assign(dims[l + 1], GaussianBelief::isotropic(dims[l], cfg.prior_var));
    result.layers[l].activation_samples = RMat::Zero(cfg.mc_budget, dims[l + 1]);
  }
  result.trace.total.assign(cfg.iterations, 0.0);
  result.trace.per_layer = RMat::Zero(cfg.iterations, big_l);
  const Eigen::Index n = data_x.rows();
  if (n == 0) return result;  // no evidence: beliefs stay the prior, trace is zero

  const int mc = cfg.mc_budget;
  // data rows cycled onto the Monte-Carlo budget
  RMat z0(mc, dims[0]);
  RVec y(mc);
  for (int i = 0; i < mc; ++i) {
    z0.row(i) = data_x.row(i % n);
    y[i] = data_y[i % n];
  }

  // common random numbers for weight draws: xi[l] has one row block per sample
  std::vector<RMat> xi(big_l);
  {
    auto stream = rng::split(cfg.seed, 0xB11F);
    for (int l = 0; l < big_l; ++l) {
      xi[l].resize(mc * dims[l + 1], dims[l]);
      for (Eigen::Index i = 0; i < xi[l].size(); ++i) xi[l].data()[i] = stream.normal();
    }
  }

  const double inv_prior = 1.0 / cfg.prior_var;
  // natural parameters per row, kept across iterations for damping
  std::vector<std::vector<RMat>> lambda(big_l);
  std::vector<std::vector<RVec>> eta_info(big_l);
  for (int l = 0; l < big_l; ++l) {
    lambda[l].assign(dims[l + 1], inv_prior * RMat::Identity(dims[l], dims[l]));
    eta_info[l].assign(dims[l + 1], RVec::Zero(dims[l]));
  }

  std::vector<RMat> z(big_l + 1);
  z[0] = z0;

  for (int t = 0; t < cfg.iterations; ++t) {
    // forward Monte-Carlo with current beliefs
    for (int l = 0; l < big_l; ++l) {
      const int w_out = dims[l + 1], w_in = dims[l];
      const double scale = 1.0 / w_in;
      z[l + 1].resize(mc, w_out);
      std::vector<RMat> chol(w_out);
      for (int r = 0; r < w_out; ++r) {
        Eigen::LLT<RMat> llt(result.layers[l].rows[r].cov +
                             1e-12 * RMat::Identity(w_in, w_in));
        chol[r] = llt.matrixL();
      }
      for (int i = 0; i < mc; ++i) {
        for (int r = 0; r < w_out; ++r) {
          RVec wrow = result.layers[l].rows[r].mean + chol[r] * xi[l].row(i * w_out + r).transpose();
          z[l + 1](i, r) = detail::layer_act(cfg.act, scale * wrow.dot(z[l].row(i)));
        }
      }
      result.layers[l].activation_samples = z[l + 1];
    }

    // backward target assignment from point estimates
    const double rho = (t == 0) ? 1.0 : cfg.damping;
    std::vector<RMat> targets(big_l + 1);
    targets[big_l] = y;
    for (int l = big_l - 1; l >= 1; --l) {
      const int w_out = dims[l + 1];
      RMat pre(mc, w_out);
      for (int i = 0; i < mc; ++i)
        for (int r = 0; r < w_out; ++r)
          pre(i, r) = detail::layer_act_inv(cfg.act, targets[l + 1](i, r));
      RMat wbar(w_out, dims[l]);
      for (int r = 0; r < w_out; ++r)
        wbar.row(r) = result.layers[l].rows[r].mean.transpose();
      wbar /= static_cast<double>(dims[l]);
      Eigen::CompleteOrthogonalDecomposition<RMat> cod(wbar);
      RMat preimage = cod.solve(pre.transpose()).transpose();  // min-norm
      // pin the scale gauge: targets and downstream weights trade a common
      // factor, which otherwise leaves a flat direction in the fixed point;
      // max-normalization also keeps every entry inside the smooth branch of
      // the activation inverse
      double peak = preimage.cwiseAbs().maxCoeff();
      targets[l] = preimage * (0.8 / std::max(peak, 1e-9));
    }

    // per-layer Gaussian regression updates from the fixed prior, damped
    for (int l = 0; l < big_l; ++l) {
      const int w_out = dims[l + 1], w_in = dims[l];
      const double scale = 1.0 / w_in;
      const RMat& feats = z[l];  // z^{l-1}
      RMat pre_targets(mc, w_out);
      for (int i = 0; i < mc; ++i)
        for (int r = 0; r < w_out; ++r)
          pre_targets(i, r) = detail::layer_act_inv(cfg.act, targets[l + 1](i, r));

      RMat gram = feats.transpose() * feats * (scale * scale / cfg.noise_var);
      double layer_kl = 0.0;
      for (int r = 0; r < w_out; ++r) {
        RMat lam_hat = inv_prior * RMat::Identity(w_in, w_in) + gram;
        RVec eta_hat = feats.transpose() * pre_targets.col(r) * (scale / cfg.noise_var);
        RMat lam_new = (1.0 - rho) * lambda[l][r] + rho * lam_hat;
        RVec eta_new = (1.0 - rho) * eta_info[l][r] + rho * eta_hat;
        Eigen::LDLT<RMat> ldlt(lam_new);
        RMat cov_new = ldlt.solve(RMat::Identity(w_in, w_in));
        cov_new = 0.5 * (cov_new + cov_new.transpose());
        RVec mean_new = ldlt.solve(eta_new);
        if (!mean_new.allFinite() || !cov_new.allFinite())
          throw NonFiniteMoments(l + 1, t + 1,
                                 "layerwise_iterate: non-finite moments at layer " +
                                     std::to_string(l + 1) + ", iteration " + std::to_string(t + 1));
        GaussianBelief next{mean_new, cov_new};
        layer_kl += kl_gaussian(next, result.layers[l].rows[r]);
        result.layers[l].rows[r] = std::move(next);
        lambda[l][r] = std::move(lam_new);
        eta_info[l][r] = std::move(eta_new);
      }
      result.trace.per_layer(t, l) = layer_kl;
      result.trace.total[t] += layer_kl;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Geometric convergence-rate fit.
// ---------------------------------------------------------------------------

struct GeometricRate {
  double alpha = 0.0;
  double r_squared = 0.0;
};

/// Least-squares fit of log Delta_t against t; alpha = exp(-slope).
inline GeometricRate fit_geometric_rate(const std::vector<double>& trace) {
  if (trace.size() < 5) throw ContractError("fit_geometric_rate: trace must have >= 5 entries");
  for (double v : trace)
    if (!(v > 0.0) || !std::isfinite(v))
      throw ContractError("fit_geometric_rate: trace entries must be positive and finite");
  const int n = static_cast<int>(trace.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (int t = 0; t < n; ++t) {
    double ly = std::log(trace[t]);
    st += t;
    sy += ly;
    stt += static_cast<double>(t) * t;
    sty += t * ly;
  }
  double denom = n * stt - st * st;
  double slope = (n * sty - st * sy) / denom;
  double intercept = (sy - slope * st) / n;
  double ss_res = 0, ss_tot = 0, mean_y = sy / n;
  for (int t = 0; t < n; ++t) {
    double ly = std::log(trace[t]);
    double fit = intercept + slope * t;
    ss_res += (ly - fit) * (ly - fit);
    ss_tot += (ly - mean_y) * (ly - mean_y);
  }
  GeometricRate out;
  out.alpha = std::exp(-slope);
  out.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return out;
}

/// CSV export: iteration, layer, kl_delta, alpha_running (ratio of successive
/// per-iteration totals; 1 for the first iteration).
inline std::string trace_to_csv(const IterationTrace& trace) {
  std::ostringstream out;
  out << "iteration,layer,kl_delta,alpha_running\n";
  char buf[64];
  for (Eigen::Index t = 0; t < trace.per_layer.rows(); ++t) {
    double running = 1.0;
    if (t > 0 && trace.total[t] > 0.0) running = trace.total[t - 1] / trace.total[t];
    for (Eigen::Index l = 0; l < trace.per_layer.cols(); ++l) {
      out << (t + 1) << ',' << (l + 1) << ',';
      std::snprintf(buf, sizeof(buf), "%.12g", trace.per_layer(t, l));
      out << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.12g", running);
      out << buf << '\n';
    }
  }
  return out.str();
}

}  // namespace invnets::bnn
