#pragma once

// Shared oracles for the test suites. These stay independent of the library
// implementation paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"

namespace test_support {

using invnets::num::RMat;
using invnets::num::RVec;

inline RMat random_spd(int n, invnets::rng::Stream& stream, double ridge = 0.5) {
  RMat m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stream.normal();
  return m * m.transpose() + ridge * RMat::Identity(n, n);
}

inline RVec random_vec(int n, invnets::rng::Stream& stream) {
  RVec v(n);
  for (int i = 0; i < n; ++i) v[i] = stream.normal();
  return v;
}

/// Brute-force moments of an unnormalized 2-d density on a regular grid.
struct GridMoments {
  RVec mean;
  RMat cov;
};

inline GridMoments grid_moments_2d(const std::function<double(double, double)>& density,
                                   double lo, double hi, int cells) {
  double mass = 0.0, mx = 0.0, my = 0.0;
  const double h = (hi - lo) / cells;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j) {
      double x = lo + (i + 0.5) * h, y = lo + (j + 0.5) * h;
      double p = density(x, y);
      mass += p;
      mx += p * x;
      my += p * y;
    }
  mx /= mass;
  my /= mass;
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j) {
      double x = lo + (i + 0.5) * h, y = lo + (j + 0.5) * h;
      double p = density(x, y) / mass;
      cxx += p * (x - mx) * (x - mx);
      cxy += p * (x - mx) * (y - my);
      cyy += p * (y - my) * (y - my);
    }
  GridMoments out;
  out.mean = RVec(2);
  out.mean << mx, my;
  out.cov = RMat(2, 2);
  out.cov << cxx, cxy, cxy, cyy;
  return out;
}

/// One-dimensional grid moments (for 1-d Gaussian product oracles).
inline std::pair<double, double> grid_moments_1d(const std::function<double(double)>& density,
                                                 double lo, double hi, int cells) {
  double mass = 0.0, mean = 0.0;
  const double h = (hi - lo) / cells;
  for (int i = 0; i < cells; ++i) {
    double x = lo + (i + 0.5) * h;
    double p = density(x);
    mass += p;
    mean += p * x;
  }
  mean /= mass;
  double var = 0.0;
  for (int i = 0; i < cells; ++i) {
    double x = lo + (i + 0.5) * h;
    var += density(x) / mass * (x - mean) * (x - mean);
  }
  return {mean, var};
}

}  // namespace test_support
