#include <catch2/catch_amalgamated.hpp>

#include "invnets/signals.hpp"
#include "test_support.hpp"

using namespace invnets;
using num::CMat;
using num::Cplx;

namespace {

sig::ArrayConfig noiseless(int n, int m) {
  sig::ArrayConfig cfg;
  cfg.n_sources = n;
  cfg.m_doublets = m;
  cfg.snr_db = std::numeric_limits<double>::infinity();
  return cfg;
}

}  // namespace

TEST_CASE("simulate edge behaviors") {
  SECTION("theta = 0 makes the two subarrays identical without noise") {
    auto cfg = noiseless(1, 4);
    auto batch = sig::simulate(cfg, {0.0}, 32, 7);
    CHECK((batch.q - batch.p).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("phase gain pi at broadside-orthogonal incidence flips the sign") {
    auto cfg = noiseless(1, 3);
    cfg.omega0 = 2.0 * M_PI;
    cfg.delta = 0.5;
    cfg.wave_speed = 1.0;  // omega0 delta / c = pi
    auto batch = sig::simulate(cfg, {M_PI / 2}, 16, 3);
    for (int t = 0; t < 16; ++t)
      for (int i = 0; i < 3; ++i)
        REQUIRE(std::abs(batch.q(i, t) + batch.p(i, t)) <= 1e-12);
  }
  SECTION("no sources leaves pure noise whose covariance trace matches") {
    sig::ArrayConfig cfg;
    cfg.n_sources = 0;
    cfg.m_doublets = 3;
    cfg.snr_db = 10.0;
    auto batch = sig::simulate(cfg, {}, 10000, 9);
    auto cov = sig::sample_covariance(batch);
    double sigma_sq = std::pow(10.0, -1.0);  // max(n,1) 10^(-snr/10)
    double expected = 6.0 * sigma_sq;        // 2m sensors
    CHECK(cov.trace().real() == Catch::Approx(expected).epsilon(0.05));
  }
  SECTION("duplicate angles are rejected") {
    auto cfg = noiseless(2, 4);
    CHECK_THROWS_AS(sig::simulate(cfg, {0.3, 0.3}, 8, 1), ContractError);
  }
  SECTION("same seed regenerates bit-identically") {
    sig::ArrayConfig cfg;
    cfg.n_sources = 2;
    cfg.m_doublets = 4;
    auto b1 = sig::simulate(cfg, {-0.2, 0.4}, 64, 123);
    auto b2 = sig::simulate(cfg, {-0.2, 0.4}, 64, 123);
    CHECK((b1.p - b2.p).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b1.q - b2.q).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("sample covariance properties") {
  SECTION("single snapshot gives the outer product") {
    auto cfg = noiseless(1, 2);
    auto batch = sig::simulate(cfg, {0.1}, 1, 5);
    CMat z(4, 1);
    z.topRows(2) = batch.p;
    z.bottomRows(2) = batch.q;
    auto cov = sig::sample_covariance(batch);
    CHECK((cov - z * z.adjoint()).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SECTION("noiseless single source is numerically rank one") {
    auto cfg = noiseless(1, 4);
    auto batch = sig::simulate(cfg, {0.25}, 512, 2);
    auto eig = num::eig_hermitian(sig::sample_covariance(batch));
    CHECK(eig.eigenvalues[1] / eig.eigenvalues[0] <= 1e-6);
  }
  SECTION("Hermitian and positive semidefinite") {
    sig::ArrayConfig cfg;
    cfg.n_sources = 2;
    cfg.m_doublets = 3;
    auto batch = sig::simulate(cfg, {-0.5, 0.7}, 128, 8);
    auto cov = sig::sample_covariance(batch);
    CHECK((cov - cov.adjoint()).cwiseAbs().maxCoeff() <= 1e-12);
    auto eig = num::eig_hermitian(cov);
    CHECK(eig.eigenvalues.minCoeff() >= -1e-9);
  }
}

TEST_CASE("MUSIC finds noiseless sources within one grid cell") {
  auto cfg = noiseless(1, 4);
  auto batch = sig::simulate(cfg, {0.3}, 256, 4);
  auto est = sig::music(cfg, sig::sample_covariance(batch), 1024);
  REQUIRE(est.thetas.size() == 1);
  CHECK(std::abs(est.thetas[0] - 0.3) <= M_PI / 1024);
  for (double v : est.spectrum) REQUIRE(v >= 0.0);
}

TEST_CASE("MUSIC raises a peak-detection error on noise-only input") {
  sig::ArrayConfig cfg;
  cfg.n_sources = 1;
  cfg.m_doublets = 4;
  cfg.snr_db = 10.0;
  sig::ArrayConfig empty = cfg;
  empty.n_sources = 0;
  auto batch = sig::simulate(empty, {}, 256, 6);
  auto cov = sig::sample_covariance(batch);
  CHECK_THROWS_AS(sig::music(cfg, cov, 256), sig::PeakDetectionError);
}

TEST_CASE("ESPRIT recovers noiseless angles to printed precision") {
  SECTION("single source at 0.3") {
    auto cfg = noiseless(1, 4);
    auto batch = sig::simulate(cfg, {0.3}, 200, 11);
    auto est = sig::esprit(cfg, batch);
    CHECK(std::abs(est.thetas[0] - 0.3) <= 1e-6);
  }
  SECTION("theta = 0 maps to a unit operator eigenvalue") {
    auto cfg = noiseless(1, 4);
    auto batch = sig::simulate(cfg, {0.0}, 200, 12);
    auto est = sig::esprit(cfg, batch);
    CHECK(std::abs(est.op_eigenvalues[0] - Cplx{1.0, 0.0}) <= 1e-9);
  }
  SECTION("two sources in either order, unit-modulus eigenvalues") {
    auto cfg = noiseless(2, 6);
    auto batch = sig::simulate(cfg, {-0.4, 0.5}, 200, 13);
    auto est = sig::esprit(cfg, batch);
    REQUIRE(est.thetas.size() == 2);
    CHECK(std::abs(est.thetas[0] - (-0.4)) <= 1e-6);
    CHECK(std::abs(est.thetas[1] - 0.5) <= 1e-6);
    for (const auto& lam : est.op_eigenvalues)
      REQUIRE(std::abs(std::abs(lam) - 1.0) <= 1e-6);
  }
}

TEST_CASE("ESPRIT flags aliased sources") {
  // Build a synthetic batch whose inter-array phase exceeds the unambiguous
  // range: q = 1.5 * phase_gain, so |arg(lambda)/gain| = 1.5 > 1.
  sig::ArrayConfig cfg;
  cfg.n_sources = 1;
  cfg.m_doublets = 4;
  cfg.omega0 = 2.0;
  cfg.delta = 1.0;
  cfg.wave_speed = 1.0;  // gain = 2 < pi, so aliasing is representable
  auto stream = rng::Stream(44);
  CMat s(1, 64);
  for (int t = 0; t < 64; ++t) s(0, t) = stream.circular_normal();
  num::CVec a = sig::steering_vector(cfg, 0.2);
  Cplx phi = std::polar(1.0, 1.5 * cfg.phase_gain());
  sig::SignalBatch batch;
  batch.p = a * s;
  batch.q = (phi * a) * s;
  batch.thetas_true = {0.2};
  auto est = sig::esprit(cfg, batch);
  REQUIRE(est.aliased.size() == 1);
  CHECK(est.aliased[0]);
  CHECK(std::isnan(est.thetas[0]));
}

TEST_CASE("noiseless tone sources make the ESPRIT predictor exact") {
  sig::BenchConfig bc;
  bc.array = noiseless(2, 6);
  bc.array.source_rho = 1.0;  // deterministic tones
  bc.snapshots = 160;
  bc.trials = 5;
  bc.window = 8;
  bc.train.max_epochs = 1;  // neural rows unused here
  bc.seed = 3;
  auto rows = sig::forecast_benchmark(bc, {{"esprit_predictor", 0}});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].valid);
  CHECK(rows[0].mse_median <= 1e-8);
}

TEST_CASE("benchmark rows carry the documented schema") {
  sig::BenchConfig bc;
  bc.array.n_sources = 2;
  bc.array.m_doublets = 4;
  bc.array.source_rho = 0.9;
  bc.snapshots = 120;
  bc.trials = 5;
  bc.window = 6;
  bc.window_stride = 2;
  bc.train.max_epochs = 30;
  bc.seed = 9;
  auto rows = sig::forecast_benchmark(
      bc, {{"cvnn", 16}, {"fcn", 16}, {"esprit_predictor", 0}, {"music_predictor", 0}});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].params == 2 * ((6 + 2) * 16 + 1));
  CHECK(rows[1].params == (6 + 2) * 16 + 1);
  for (const auto& r : rows) {
    CHECK(r.trials >= 3);
    CHECK(std::isfinite(r.mse_median));
  }
  std::string csv = sig::bench_to_csv(rows);
  CHECK(csv.find("model,settings,param_count,mse_median,mse_iqr,trials,valid\n") !=
        std::string::npos);
  CHECK(csv.find("per-sensor-per-snapshot") != std::string::npos);
}
