#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"

namespace invnets::inv {

using num::RMat;
using num::RVec;

// ---------------------------------------------------------------------------
// Group actions: permutations, SO(n) rotations, unit-direction translations.
// ---------------------------------------------------------------------------

/// y[i] = x[sigma[i]]; sigma must be a bijection on {0..n-1}.
struct Permutation {
  std::vector<std::size_t> sigma;
};

/// y = A x with A in SO(n): A'A = I within 1e-10, det A = 1 within 1e-8.
struct Rotation {
  RMat a;
};

/// y = x + eta * delta with ||delta|| = 1 within 1e-12.
struct Translation {
  double eta = 0.0;
  RVec delta;
};

class GroupAction {
 public:
  using Storage = std::variant<Permutation, Rotation, Translation>;

  static GroupAction permutation(std::vector<std::size_t> sigma) {
    std::vector<bool> seen(sigma.size(), false);
    for (std::size_t s : sigma) {
      if (s >= sigma.size() || seen[s])
        throw ContractError("GroupAction: sigma is not a bijection");
      seen[s] = true;
    }
    return GroupAction(Permutation{std::move(sigma)});
  }

  static GroupAction rotation(RMat a) {
    if (a.rows() != a.cols() || a.rows() == 0)
      throw ContractError("GroupAction: rotation matrix must be square and nonempty");
    const auto n = a.rows();
    double ortho = (a.transpose() * a - RMat::Identity(n, n)).cwiseAbs().maxCoeff();
    if (ortho > 1e-10)
      throw ContractError("GroupAction: rotation matrix is not orthogonal (defect " +
                          std::to_string(ortho) + ")");
    double det = a.determinant();
    if (std::abs(det - 1.0) > 1e-8)
      throw ContractError("GroupAction: rotation determinant is " + std::to_string(det) +
                          ", expected 1");
    return GroupAction(Rotation{std::move(a)});
  }

  static GroupAction translation(double eta, RVec delta) {
    if (delta.size() == 0) throw ContractError("GroupAction: empty translation direction");
    if (std::abs(delta.norm() - 1.0) > 1e-12)
      throw ContractError("GroupAction: translation direction must be a unit vector");
    return GroupAction(Translation{eta, std::move(delta)});
  }

  const Storage& storage() const { return storage_; }

  std::size_t dim() const {
    return std::visit(
        [](const auto& act) -> std::size_t {
          using T = std::decay_t<decltype(act)>;
          if constexpr (std::is_same_v<T, Permutation>) return act.sigma.size();
          if constexpr (std::is_same_v<T, Rotation>) return static_cast<std::size_t>(act.a.rows());
          if constexpr (std::is_same_v<T, Translation>)
            return static_cast<std::size_t>(act.delta.size());
        },
        storage_);
  }

  const char* kind() const {
    switch (storage_.index()) {
      case 0: return "permutation";
      case 1: return "rotation";
      default: return "translation";
    }
  }

 private:
  explicit GroupAction(Storage s) : storage_(std::move(s)) {}
  Storage storage_;
};

inline RVec apply_action(const GroupAction& action, const RVec& x) {
  if (action.dim() != static_cast<std::size_t>(x.size()))
    throw ContractError("apply_action: dimension mismatch");
  return std::visit(
      [&](const auto& act) -> RVec {
        using T = std::decay_t<decltype(act)>;
        if constexpr (std::is_same_v<T, Permutation>) {
          RVec y(x.size());
          for (std::size_t i = 0; i < act.sigma.size(); ++i) y[i] = x[act.sigma[i]];
          return y;
        } else if constexpr (std::is_same_v<T, Rotation>) {
          return act.a * x;
        } else {
          return x + act.eta * act.delta;
        }
      },
      action.storage());
}

/// Group inverse: sigma^-1, A^T, or (eta, -delta).
inline GroupAction inverse(const GroupAction& action) {
  return std::visit(
      [](const auto& act) -> GroupAction {
        using T = std::decay_t<decltype(act)>;
        if constexpr (std::is_same_v<T, Permutation>) {
          std::vector<std::size_t> inv(act.sigma.size());
          for (std::size_t j = 0; j < act.sigma.size(); ++j) inv[act.sigma[j]] = j;
          return GroupAction::permutation(std::move(inv));
        } else if constexpr (std::is_same_v<T, Rotation>) {
          return GroupAction::rotation(act.a.transpose());
        } else {
          return GroupAction::translation(act.eta, -act.delta);
        }
      },
      action.storage());
}

/// Composition of two permutations (closure axiom): apply first, then second.
inline GroupAction compose(const GroupAction& second, const GroupAction& first) {
  const auto* p2 = std::get_if<Permutation>(&second.storage());
  const auto* p1 = std::get_if<Permutation>(&first.storage());
  if (!p1 || !p2 || p1->sigma.size() != p2->sigma.size())
    throw ContractError("compose: expects two permutations of equal size");
  // apply(second, apply(first, x))[i] = x[first.sigma[second.sigma[i]]]
  std::vector<std::size_t> sigma(p1->sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = p1->sigma[p2->sigma[i]];
  return GroupAction::permutation(std::move(sigma));
}

enum class ActionKind { permutation, rotation, translation };

/// Random action of the given kind: Fisher-Yates permutation, Haar rotation
/// (QR of a Gaussian matrix with sign and determinant correction), or a
/// unit-sphere direction with eta uniform on [-1, 1].
inline GroupAction sample_action(ActionKind kind, std::size_t dim, rng::Stream& stream) {
  if (dim == 0) throw ContractError("sample_action: dim must be >= 1");
  switch (kind) {
    case ActionKind::permutation: {
      std::vector<std::size_t> sigma(dim);
      std::iota(sigma.begin(), sigma.end(), std::size_t{0});
      stream.shuffle(sigma);
      return GroupAction::permutation(std::move(sigma));
    }
    case ActionKind::rotation: {
      RMat g(dim, dim);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = stream.normal();
      Eigen::HouseholderQR<RMat> qr(g);
      RMat q = qr.householderQ();
      RMat r = qr.matrixQR().triangularView<Eigen::Upper>();
      for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
      if (q.determinant() < 0) q.col(q.cols() - 1) = -q.col(q.cols() - 1);
      return GroupAction::rotation(std::move(q));
    }
    case ActionKind::translation: {
      auto dir = stream.sphere(dim);
      RVec delta = Eigen::Map<RVec>(dir.data(), static_cast<Eigen::Index>(dir.size()));
      delta /= delta.norm();  // renormalize against accumulated rounding
      return GroupAction::translation(stream.uniform(-1.0, 1.0), std::move(delta));
    }
  }
  throw std::logic_error("sample_action: unreachable");
}

inline GroupAction sample_action(ActionKind kind, std::size_t dim, std::uint64_t seed) {
  auto stream = rng::Stream(seed);
  return sample_action(kind, dim, stream);
}

// ---------------------------------------------------------------------------
// Invariance defect measurement.
// ---------------------------------------------------------------------------

using ScalarField = std::function<double(const RVec&)>;
using Sampler = std::function<RVec(rng::Stream&)>;

struct NonFiniteSampleError : std::runtime_error {
  std::size_t sample_index;
  NonFiniteSampleError(std::size_t idx, const std::string& what)
      : std::runtime_error(what), sample_index(idx) {}
};

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DefectReport {
  double sup_defect = 0.0;
  double l2_defect = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

/// sup and root-mean-square of |f(tau(x)) - f(x)| over samples x actions.
inline DefectReport invariance_defect(const ScalarField& f,
                                      const std::vector<GroupAction>& actions,
                                      const Sampler& sampler, std::size_t n_samples,
                                      std::uint64_t seed = 0) {
  if (n_samples < 1) throw ContractError("invariance_defect: n_samples must be >= 1");
  DefectReport report;
  report.samples = n_samples;
  report.seed = seed;
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    auto stream = rng::split(seed, s);
    RVec x = sampler(stream);
    double fx = f(x);
    if (!std::isfinite(fx))
      throw NonFiniteSampleError(s, "invariance_defect: f(x) non-finite at sample " +
                                        std::to_string(s));
    for (const auto& action : actions) {
      double ftx = f(apply_action(action, x));
      if (!std::isfinite(ftx))
        throw NonFiniteSampleError(s, "invariance_defect: f(tau(x)) non-finite at sample " +
                                          std::to_string(s));
      double d = std::abs(ftx - fx);
      report.sup_defect = std::max(report.sup_defect, d);
      sum_sq += d * d;
    }
  }
  std::size_t count = n_samples * std::max<std::size_t>(actions.size(), 1);
  report.l2_defect = std::sqrt(sum_sq / static_cast<double>(count));
  return report;
}

/// Checks the invariance closure bound: given an invariant g_eps with
/// RMS(f - g_eps) <= eps on the sampled points, the defect RMS(f o tau - f)
/// must not exceed 2*eps (+ tolerance). Precondition failures throw;
/// a violated bound returns false.
inline bool closure_bound_check(const ScalarField& f, const ScalarField& g_eps, double eps,
                                const std::vector<GroupAction>& actions, const Sampler& sampler,
                                std::size_t n_samples, std::uint64_t seed = 0,
                                double tolerance = 1e-6) {
  if (n_samples < 1) throw ContractError("closure_bound_check: n_samples must be >= 1");
  if (actions.empty()) throw ContractError("closure_bound_check: no actions given");

  DefectReport g_defect = invariance_defect(g_eps, actions, sampler, n_samples, seed);
  if (g_defect.sup_defect > 1e-9)
    throw PreconditionError("closure_bound_check: g_eps is not invariant (sup defect " +
                            std::to_string(g_defect.sup_defect) + ")");

  double gap_sq = 0.0;
  std::vector<double> action_sq(actions.size(), 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    auto stream = rng::split(seed, s);
    RVec x = sampler(stream);
    double fx = f(x), gx = g_eps(x);
    gap_sq += (fx - gx) * (fx - gx);
    for (std::size_t ai = 0; ai < actions.size(); ++ai) {
      double d = f(apply_action(actions[ai], x)) - fx;
      action_sq[ai] += d * d;
    }
  }
  double rms_gap = std::sqrt(gap_sq / static_cast<double>(n_samples));
  if (rms_gap > eps)
    throw PreconditionError("closure_bound_check: sampled ||f - g_eps|| = " +
                            std::to_string(rms_gap) + " exceeds eps = " + std::to_string(eps));

  for (double sq : action_sq) {
    double rms = std::sqrt(sq / static_cast<double>(n_samples));
    if (rms > 2.0 * eps + tolerance) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// l-finiteness of activations.
// ---------------------------------------------------------------------------

struct LFiniteReport {
  bool is_l_finite = false;
  double integral = 0.0;
};

/// Numerical check of 0 < |int D^l sigma| < infinity over [-half_range, half_range].
/// The l-th derivative is estimated by central differences; the tail test
/// requires |D^l sigma| at the boundary to have decayed relative to its peak.
inline LFiniteReport check_l_finite(const std::function<double(double)>& sigma, int l,
                                    double half_range, int grid) {
  if (l < 1) throw ContractError("check_l_finite: l must be >= 1");
  if (half_range <= 0) throw ContractError("check_l_finite: half_range must be positive");
  if (grid < 8) throw ContractError("check_l_finite: grid too coarse");

  const double h = std::max(1e-4, half_range / grid);
  // central difference: D^l f(x) ~ h^-l sum_k (-1)^k C(l,k) f(x + (l/2 - k) h)
  std::vector<double> coeff(l + 1);
  coeff[0] = 1.0;
  for (int k = 1; k <= l; ++k) coeff[k] = coeff[k - 1] * (l - k + 1) / k;

  auto deriv = [&](double x) {
    double acc = 0.0;
    for (int k = 0; k <= l; ++k) {
      double sign = (k % 2 == 0) ? 1.0 : -1.0;
      acc += sign * coeff[k] * sigma(x + (0.5 * l - k) * h);
    }
    return acc / std::pow(h, l);
  };

  // trapezoid over grid+1 nodes
  const double dx = 2.0 * half_range / grid;
  double integral = 0.0;
  double peak = 0.0;
  double left = 0.0, right = 0.0;
  for (int i = 0; i <= grid; ++i) {
    double x = -half_range + i * dx;
    double v = deriv(x);
    if (!std::isfinite(v))
      throw std::runtime_error("check_l_finite: non-finite derivative estimate at x = " +
                               std::to_string(x));
    double weight = (i == 0 || i == grid) ? 0.5 : 1.0;
    integral += weight * v * dx;
    peak = std::max(peak, std::abs(v));
    if (i == 0) left = std::abs(v);
    if (i == grid) right = std::abs(v);
  }

  LFiniteReport report;
  report.integral = integral;
  bool tails_decay = peak > 0.0 && std::max(left, right) <= 0.01 * peak;
  bool nonzero = std::abs(integral) > 1e-6;
  report.is_l_finite = nonzero && std::isfinite(integral) && tails_decay;
  return report;
}

}  // namespace invnets::inv
