#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"

namespace invnets::tgt {

using num::RVec;

/// Half-open radius interval [lo, hi).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double r) const { return r >= lo && r < hi; }
  double distance(double r) const {
    if (r < lo) return lo - r;
    if (r >= hi) return r - hi;
    return 0.0;
  }
};

/// Omega_i = [(1 + (i-1)/N) C2 sqrt(d), (1 + i/N) C2 sqrt(d)) for i in [N];
/// N equal-width intervals tiling the shell [C2 sqrt(d), 2 C2 sqrt(d)).
inline std::vector<Interval> make_intervals(int d, double c2, int n) {
  if (n < 1) throw ContractError("make_intervals: N must be >= 1");
  if (!(c2 > 0.0 && c2 < d)) throw ContractError("make_intervals: require 0 < C2 < d");
  const double base = c2 * std::sqrt(static_cast<double>(d));
  std::vector<Interval> intervals(n);
  for (int i = 1; i <= n; ++i) {
    intervals[i - 1].lo = (1.0 + static_cast<double>(i - 1) / n) * base;
    intervals[i - 1].hi = (1.0 + static_cast<double>(i) / n) * base;
  }
  return intervals;
}

/// Piecewise-constant radial indicator target: g(x) = beta_i on ||x|| in Omega_i.
struct RadialTarget {
  int d = 0;
  double c2 = 0.0;
  std::vector<int> betas;  // each +1 or -1
  std::vector<Interval> intervals;

  static RadialTarget make(int d, double c2, std::vector<int> betas) {
    RadialTarget t;
    t.d = d;
    t.c2 = c2;
    t.intervals = make_intervals(d, c2, static_cast<int>(betas.size()));
    for (int b : betas)
      if (b != 1 && b != -1) throw ContractError("RadialTarget: betas must be +1 or -1");
    t.betas = std::move(betas);
    return t;
  }

  /// Alternating-sign target with N bands.
  static RadialTarget alternating(int d, double c2, int n) {
    std::vector<int> betas(n);
    for (int i = 0; i < n; ++i) betas[i] = (i % 2 == 0) ? 1 : -1;
    return make(d, c2, std::move(betas));
  }

  int bands() const { return static_cast<int>(betas.size()); }
  double shell_lo() const { return intervals.front().lo; }
  double shell_hi() const { return intervals.back().hi; }
};

/// Radial profile g(r); intervals are contiguous so the band index is direct.
inline double eval_radial_profile(const RadialTarget& g, double r) {
  const int n = g.bands();
  const double lo = g.shell_lo(), hi = g.shell_hi();
  if (!(r >= lo && r < hi)) return 0.0;
  int i = static_cast<int>((r - lo) / (hi - lo) * n);
  if (i >= n) i = n - 1;
  // guard against edge rounding of the direct index
  if (!g.intervals[i].contains(r)) {
    if (i + 1 < n && g.intervals[i + 1].contains(r)) ++i;
    else if (i > 0 && g.intervals[i - 1].contains(r)) --i;
    else return 0.0;
  }
  return static_cast<double>(g.betas[i]);
}

inline double eval_radial(const RadialTarget& g, const RVec& x) {
  if (x.size() != g.d) throw ContractError("eval_radial: dimension mismatch");
  return eval_radial_profile(g, x.norm());
}

/// Scalar shift-invariant feature used by the translation target: ||x - mean(x) 1||.
inline double shift_feature(const RVec& x) {
  double mean = x.mean();
  return (x.array() - mean).matrix().norm();
}

/// Indicator target over the shift-invariant feature instead of the norm.
inline double eval_translation_target(const RadialTarget& g, const RVec& x) {
  if (x.size() != g.d) throw ContractError("eval_translation_target: dimension mismatch");
  return eval_radial_profile(g, shift_feature(x));
}

enum class SurrogateMode { paper_literal, tent_corrected };

inline const char* to_string(SurrogateMode m) {
  return m == SurrogateMode::paper_literal ? "paper_literal" : "tent_corrected";
}

inline SurrogateMode surrogate_mode_from(const std::string& s) {
  if (s == "paper_literal") return SurrogateMode::paper_literal;
  if (s == "tent_corrected") return SurrogateMode::tent_corrected;
  throw ContractError("unknown surrogate mode: " + s);
}

/// Lipschitz surrogate of a RadialTarget. paper_literal evaluates the printed
/// branch function max{indicator, N*D_i} verbatim; tent_corrected replaces each
/// branch with the N-Lipschitz tent clamp(1 - N*dist(r, Omega_i), 0, 1) and
/// clamps the signed sum into [-1, +1].
struct LipschitzSurrogate {
  RadialTarget target;
  SurrogateMode mode = SurrogateMode::tent_corrected;
  std::vector<int> b;  // binary branch indicators, default all ones

  static LipschitzSurrogate make(RadialTarget target,
                                 SurrogateMode mode = SurrogateMode::tent_corrected,
                                 std::vector<int> b = {}) {
    LipschitzSurrogate h;
    if (b.empty()) b.assign(target.betas.size(), 1);
    if (b.size() != target.betas.size())
      throw ContractError("LipschitzSurrogate: indicator length mismatch");
    for (int v : b)
      if (v != 0 && v != 1) throw ContractError("LipschitzSurrogate: B_i must be 0 or 1");
    h.target = std::move(target);
    h.mode = mode;
    h.b = std::move(b);
    return h;
  }
};

/// Single branch h_i at radius r (mode-dependent), before the beta_i sign.
inline double eval_surrogate_branch(const LipschitzSurrogate& h, int i, double r) {
  const auto& g = h.target;
  if (i < 0 || i >= g.bands()) throw ContractError("eval_surrogate_branch: index out of range");
  if (h.b[i] == 0) return 0.0;
  if (h.mode == SurrogateMode::paper_literal) {
    double indicator = g.intervals[i].contains(r) ? 1.0 : 0.0;
    double di = std::min(std::abs(r - g.intervals[i].lo), std::abs(r - g.intervals[i].hi));
    return std::max(indicator, g.bands() * di);
  }
  return std::clamp(1.0 - g.bands() * g.intervals[i].distance(r), 0.0, 1.0);
}

inline double eval_surrogate_profile(const LipschitzSurrogate& h, double r) {
  const auto& g = h.target;
  const int n = g.bands();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += g.betas[i] * eval_surrogate_branch(h, i, r);
  if (h.mode == SurrogateMode::paper_literal) return acc;
  return std::clamp(acc, -1.0, 1.0);
}

inline double eval_surrogate(const LipschitzSurrogate& h, const RVec& x) {
  if (x.size() != h.target.d) throw ContractError("eval_surrogate: dimension mismatch");
  return eval_surrogate_profile(h, x.norm());
}

// ---------------------------------------------------------------------------
// Shell weighting density phi^2.
// ---------------------------------------------------------------------------

/// phi^2 supported on the shell S_Delta: radial profile proportional to
/// exp(-(r - 1.5 C2 sqrt(d))^2 / (C2^2 d / 8)) truncated to
/// [C2 sqrt(d), 2 C2 sqrt(d)], normalized numerically; directions uniform.
/// As a density on R^d: phi^2(x) = p(||x||) / area(S^{d-1}_{||x||}).
struct ShellDensity {
  int d = 0;
  double c2 = 0.0;
  double normalization = 0.0;  // int over the shell of the unnormalized profile

  static ShellDensity make(int d, double c2) {
    if (d < 1 || !(c2 > 0.0)) throw ContractError("ShellDensity: require d >= 1, C2 > 0");
    ShellDensity phi;
    phi.d = d;
    phi.c2 = c2;
    // Simpson over the shell
    const double lo = phi.r_lo(), hi = phi.r_hi();
    const int n = 20000;
    const double dr = (hi - lo) / n;
    double z = 0.0;
    for (int i = 0; i <= n; ++i) {
      double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      z += w * phi.unnormalized(lo + i * dr);
    }
    phi.normalization = z * dr / 3.0;
    return phi;
  }

  double r_lo() const { return c2 * std::sqrt(static_cast<double>(d)); }
  double r_hi() const { return 2.0 * c2 * std::sqrt(static_cast<double>(d)); }
  double center() const { return 1.5 * c2 * std::sqrt(static_cast<double>(d)); }
  double scale_sq() const { return c2 * c2 * d / 8.0; }

  double unnormalized(double r) const {
    if (r < r_lo() || r > r_hi()) return 0.0;
    double u = r - center();
    return std::exp(-u * u / scale_sq());
  }

  /// Normalized radial profile p(r).
  double radial_pdf(double r) const { return unnormalized(r) / normalization; }

  /// phi^2(x) as a density on R^d.
  double density(const RVec& x) const {
    double r = x.norm();
    if (r <= 0.0) return 0.0;
    double log_area = std::log(2.0) + 0.5 * d * std::log(M_PI) - std::lgamma(0.5 * d) +
                      (d - 1) * std::log(r);
    return radial_pdf(r) * std::exp(-log_area);
  }

  /// Draw x ~ phi^2 (rejection on the radial profile, uniform direction).
  RVec sample(rng::Stream& stream) const {
    const double sigma = std::sqrt(0.5 * scale_sq());
    double r;
    do {
      r = center() + sigma * stream.normal();
    } while (r < r_lo() || r > r_hi());
    auto dir = stream.sphere(static_cast<std::size_t>(d));
    RVec x = Eigen::Map<RVec>(dir.data(), d);
    return r * x;
  }
};

struct GapEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double bound = 0.0;
  std::size_t samples = 0;
};

/// Monte-Carlo estimate of int (g - h)^2 phi^2 dx by sampling from phi^2,
/// with the Lipschitz-gap bound 3 / (C2^2 sqrt(d)).
inline GapEstimate surrogate_gap_mc(const RadialTarget& g, const LipschitzSurrogate& h,
                                    const ShellDensity& phi, std::size_t n_samples,
                                    std::uint64_t seed) {
  if (n_samples < 1000) throw ContractError("surrogate_gap_mc: n_samples must be >= 1e3");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    auto stream = rng::split(seed, s);
    RVec x = phi.sample(stream);
    double diff = eval_radial(g, x) - eval_surrogate(h, x);
    double v = diff * diff;
    if (!std::isfinite(v))
      throw std::runtime_error("surrogate_gap_mc: non-finite integrand at sample " +
                               std::to_string(s));
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  GapEstimate out;
  out.samples = n_samples;
  out.estimate = sum / n;
  double var = std::max(0.0, sum_sq / n - out.estimate * out.estimate);
  out.std_error = std::sqrt(var / n);
  out.bound = 3.0 / (g.c2 * g.c2 * std::sqrt(static_cast<double>(g.d)));
  return out;
}

// ---------------------------------------------------------------------------
// Plain-text serialization (reproducibility documents).
// ---------------------------------------------------------------------------

struct TargetSpec {
  int d = 0;
  double c2 = 0.0;
  int n = 0;
  std::vector<int> betas;
  SurrogateMode mode = SurrogateMode::tent_corrected;
  std::uint64_t seed = 0;

  RadialTarget target() const { return RadialTarget::make(d, c2, betas); }
  LipschitzSurrogate surrogate() const { return LipschitzSurrogate::make(target(), mode); }
};

inline std::string to_kv(const TargetSpec& spec) {
  std::ostringstream out;
  out << "d = " << spec.d << "\n";
  out << "c2 = ";
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", spec.c2);
    out << buf << "\n";
  }
  out << "n = " << spec.n << "\n";
  out << "betas = ";
  for (std::size_t i = 0; i < spec.betas.size(); ++i)
    out << (i ? "," : "") << (spec.betas[i] > 0 ? "+1" : "-1");
  out << "\n";
  out << "mode = " << to_string(spec.mode) << "\n";
  out << "seed = " << spec.seed << "\n";
  return out.str();
}

inline TargetSpec target_spec_from_kv(const std::string& text) {
  TargetSpec spec;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "d") spec.d = std::stoi(value);
    else if (key == "c2") spec.c2 = std::stod(value);
    else if (key == "n") spec.n = std::stoi(value);
    else if (key == "mode") spec.mode = surrogate_mode_from(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "betas") {
      spec.betas.clear();
      std::istringstream bs(value);
      std::string tok;
      while (std::getline(bs, tok, ',')) spec.betas.push_back(std::stoi(tok));
    } else {
      throw ContractError("target document: unknown key '" + key + "'");
    }
  }
  return spec;
}

/// Default band count from the Theorem 2 construction, 4 C2^{5/2} d^2.
inline int default_band_count(int d, double c2) {
  return static_cast<int>(std::lround(4.0 * std::pow(c2, 2.5) * d * d));
}

}  // namespace invnets::tgt
