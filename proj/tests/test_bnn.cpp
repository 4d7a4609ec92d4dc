#include <catch2/catch_amalgamated.hpp>

#include "invnets/bnn.hpp"
#include "test_support.hpp"

using namespace invnets;
using num::RMat;
using num::RVec;

TEST_CASE("translation basis annihilates its anchor") {
  SECTION("printed two-dimensional construction") {
    RVec x(2);
    x << 1.0, 2.0;
    auto basis = bnn::build_translation_basis(x);
    REQUIRE(basis.b.rows() == 2);
    REQUIRE(basis.b.cols() == 1);
    CHECK(basis.b(0, 0) == Catch::Approx(1.0));
    CHECK(basis.b(1, 0) == Catch::Approx(-0.5));
    CHECK((basis.b.transpose() * x).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SECTION("unit last coordinate gives [I; 0]") {
    RVec x = RVec::Zero(5);
    x[4] = 1.0;
    auto basis = bnn::build_translation_basis(x);
    CHECK((basis.b.topRows(4) - RMat::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(basis.b.bottomRows(1).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("zero last coordinate pivots and still annihilates") {
    RVec x(3);
    x << 0.7, -2.0, 0.0;
    auto basis = bnn::build_translation_basis(x);
    CHECK((basis.b.transpose() * x).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("all dimensions 2..32 with random anchors") {
    auto stream = rng::Stream(14);
    for (int d = 2; d <= 32; ++d) {
      RVec x = test_support::random_vec(d, stream);
      auto basis = bnn::build_translation_basis(x);
      REQUIRE((basis.b.transpose() * x).cwiseAbs().maxCoeff() <= 1e-12);
      // eta is the top singular value of B
      Eigen::JacobiSVD<RMat> svd(basis.b);
      REQUIRE(basis.eta == Catch::Approx(svd.singularValues()[0]).margin(1e-10));
    }
  }
  SECTION("zero anchor is rejected") {
    CHECK_THROWS_AS(bnn::build_translation_basis(RVec::Zero(3)), ContractError);
  }
}

TEST_CASE("weight translations leave the linear output unchanged") {
  auto stream = rng::Stream(15);
  for (int rep = 0; rep < 50; ++rep) {
    int d = 2 + static_cast<int>(stream.below(10));
    RVec x = test_support::random_vec(d, stream);
    auto basis = bnn::build_translation_basis(x);
    RVec w = test_support::random_vec(d, stream);
    RVec dw = test_support::random_vec(d - 1, stream);
    double before = w.dot(x);
    double after = (w + basis.b * dw).dot(x);
    REQUIRE(std::abs(after - before) <= 1e-12 * std::max(1.0, std::abs(before)));
  }
}

TEST_CASE("gaussian_product matches closed forms and a grid oracle") {
  SECTION("symmetric standard case") {
    auto q = bnn::GaussianBelief::isotropic(2, 1.0);
    auto p = bnn::GaussianBelief::isotropic(2, 1.0);
    auto prod = bnn::gaussian_product(q, p);
    CHECK(prod.mean.cwiseAbs().maxCoeff() == 0.0);
    CHECK((prod.cov - 0.5 * RMat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("one-dimensional grid-integration oracle") {
    bnn::GaussianBelief q{RVec::Constant(1, 1.0), RMat::Constant(1, 1, 1.0)};
    bnn::GaussianBelief p{RVec::Constant(1, 3.0), RMat::Constant(1, 1, 1.0)};
    auto prod = bnn::gaussian_product(q, p);
    auto density = [](double w) {
      auto g = [](double u, double mu) { return std::exp(-0.5 * (u - mu) * (u - mu)); };
      return g(w, 1.0) * g(w, 3.0);
    };
    auto [mean, var] = test_support::grid_moments_1d(density, -6.0, 10.0, 20000);
    CHECK(prod.mean[0] == Catch::Approx(mean).margin(1e-6));
    CHECK(prod.cov(0, 0) == Catch::Approx(var).margin(1e-6));
    CHECK(prod.mean[0] == Catch::Approx(2.0).margin(1e-9));
    CHECK(prod.cov(0, 0) == Catch::Approx(0.5).margin(1e-9));
  }
  SECTION("near-flat prior leaves the likelihood belief") {
    auto stream = rng::Stream(16);
    bnn::GaussianBelief q{test_support::random_vec(3, stream),
                          test_support::random_spd(3, stream)};
    bnn::GaussianBelief p{RVec::Zero(3), 1e6 * RMat::Identity(3, 3)};
    auto prod = bnn::gaussian_product(q, p);
    CHECK((prod.mean - q.mean).cwiseAbs().maxCoeff() <= 1e-3);
    CHECK((prod.cov - q.cov).cwiseAbs().maxCoeff() <= 1e-3 * q.cov.cwiseAbs().maxCoeff());
  }
  SECTION("commutative and symmetric positive semidefinite output") {
    auto stream = rng::Stream(17);
    for (int rep = 0; rep < 20; ++rep) {
      bnn::GaussianBelief q{test_support::random_vec(4, stream),
                            test_support::random_spd(4, stream)};
      bnn::GaussianBelief p{test_support::random_vec(4, stream),
                            test_support::random_spd(4, stream)};
      auto qp = bnn::gaussian_product(q, p);
      auto pq = bnn::gaussian_product(p, q);
      REQUIRE((qp.mean - pq.mean).cwiseAbs().maxCoeff() <= 1e-10);
      REQUIRE((qp.cov - pq.cov).cwiseAbs().maxCoeff() <= 1e-10);
      REQUIRE((qp.cov - qp.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<RMat> es(qp.cov);
      REQUIRE(es.eigenvalues().minCoeff() >= -1e-9);
    }
  }
  SECTION("singular covariance is rejected") {
    bnn::GaussianBelief q{RVec::Zero(2), RMat::Zero(2, 2)};
    auto p = bnn::GaussianBelief::isotropic(2, 1.0);
    CHECK_THROWS_AS(bnn::gaussian_product(q, p), ContractError);
  }
}

TEST_CASE("printed two-form posterior identity holds on random SPD pairs") {
  auto stream = rng::Stream(18);
  for (int rep = 0; rep < 100; ++rep) {
    RMat sx = test_support::random_spd(4, stream);
    RMat sw = test_support::random_spd(4, stream);
    RMat lhs = (sw.inverse() + sx.inverse()).inverse();
    RMat rhs = sx * (sx + sw).inverse() * sw;
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("marginal_over_subspace covers zero, finite, and infinite beta") {
  auto stream = rng::Stream(19);
  SECTION("beta = 0 leaves the belief unchanged") {
    bnn::GaussianBelief q{test_support::random_vec(3, stream),
                          test_support::random_spd(3, stream)};
    RVec x = test_support::random_vec(3, stream);
    auto basis = bnn::build_translation_basis(x);
    auto marg = bnn::marginal_over_subspace(q, basis, 0.0);
    CHECK((marg.cov - q.cov).cwiseAbs().maxCoeff() == 0.0);
    CHECK((marg.mean - q.mean).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("hand case: Sigma = I, B = e1 gives the rank-one-deleted precision") {
    bnn::GaussianBelief q{RVec::Zero(2), RMat::Identity(2, 2)};
    RMat b(2, 1);
    b << 1.0, 0.0;
    auto marg = bnn::marginal_over_subspace(q, b, std::numeric_limits<double>::infinity());
    RMat expected(2, 2);
    expected << 0.0, 0.0, 0.0, 1.0;
    CHECK((marg.precision - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(marg.degenerate);
  }
  SECTION("finite-beta Woodbury inverse agrees with direct inversion") {
    for (int rep = 0; rep < 20; ++rep) {
      bnn::GaussianBelief q{test_support::random_vec(6, stream),
                            test_support::random_spd(6, stream)};
      RVec x = test_support::random_vec(6, stream);
      auto basis = bnn::build_translation_basis(x);
      auto marg = bnn::marginal_over_subspace(q, basis, 3.0);
      RMat direct = marg.cov.inverse();
      REQUIRE((marg.precision - direct).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
  SECTION("rank-deficient basis is rejected") {
    bnn::GaussianBelief q{RVec::Zero(3), RMat::Identity(3, 3)};
    RMat b(3, 2);
    b << 1, 2, 0, 0, 0, 0;
    CHECK_THROWS_AS(bnn::marginal_over_subspace(q, b, 1.0), ContractError);
  }
}

TEST_CASE("linear_posterior") {
  SECTION("x = 0 returns the prior untouched") {
    auto prior = bnn::GaussianBelief::isotropic(3, 2.0);
    auto post = bnn::linear_posterior(RVec::Zero(3), 1.0, 0.5, prior);
    CHECK((post.mean - prior.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((post.cov - prior.cov).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("matches the two-dimensional brute-force Bayes oracle") {
    RVec x(2);
    x << 1.0, -0.5;
    const double y = 0.8, noise = 0.3;
    auto prior = bnn::GaussianBelief::isotropic(2, 1.0);
    auto post = bnn::linear_posterior(x, y, noise, prior);
    auto density = [&](double w1, double w2) {
      double pred = (w1 * x[0] + w2 * x[1]) / 2.0;
      double lik = std::exp(-0.5 * (y - pred) * (y - pred) / noise);
      double pri = std::exp(-0.5 * (w1 * w1 + w2 * w2));
      return lik * pri;
    };
    auto oracle = test_support::grid_moments_2d(density, -8.0, 8.0, 900);
    CHECK((post.mean - oracle.mean).cwiseAbs().maxCoeff() <= 1e-3);
    CHECK((post.cov - oracle.cov).cwiseAbs().maxCoeff() <= 1e-3);
  }
  SECTION("finite beta approaches the infinite-beta posterior") {
    auto stream = rng::Stream(20);
    RVec x = test_support::random_vec(4, stream);
    auto prior = bnn::GaussianBelief::isotropic(4, 1.0);
    auto exact = bnn::linear_posterior(x, 0.4, 0.2, prior);
    auto wide = bnn::linear_posterior(x, 0.4, 0.2, prior, 1e4);
    CHECK((exact.mean - wide.mean).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK((exact.cov - wide.cov).cwiseAbs().maxCoeff() <= 1e-4);
  }
  SECTION("noise variance must be positive") {
    auto prior = bnn::GaussianBelief::isotropic(2, 1.0);
    CHECK_THROWS_AS(bnn::linear_posterior(RVec::Ones(2), 1.0, 0.0, prior), ContractError);
  }
}

TEST_CASE("layerwise iteration") {
  SECTION("L = 1 with identity activation reproduces the linear posterior") {
    auto stream = rng::Stream(22);
    const int d = 3, n = 12;
    RMat x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = stream.normal();
    RVec y(n);
    for (int i = 0; i < n; ++i) y[i] = stream.normal();

    bnn::LayerwiseConfig cfg;
    cfg.widths = {1};
    cfg.iterations = 1;
    cfg.mc_budget = n;
    cfg.noise_var = 0.2;
    cfg.act = bnn::LayerAct::identity;
    auto res = bnn::layerwise_iterate(x, y, cfg);

    // oracle: sequential rank-one conditioning through linear_posterior
    auto belief = bnn::GaussianBelief::isotropic(d, cfg.prior_var);
    for (int i = 0; i < n; ++i)
      belief = bnn::linear_posterior(x.row(i).transpose(), y[i], cfg.noise_var, belief);
    CHECK((res.layers[0].rows[0].mean - belief.mean).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((res.layers[0].rows[0].cov - belief.cov).cwiseAbs().maxCoeff() <= 1e-6);
  }
  SECTION("empty data leaves the prior and a zero trace") {
    bnn::LayerwiseConfig cfg;
    cfg.widths = {2, 1};
    cfg.iterations = 5;
    cfg.mc_budget = 4;
    auto res = bnn::layerwise_iterate(RMat(0, 3), RVec(0), cfg);
    for (double v : res.trace.total) CHECK(v == 0.0);
    CHECK((res.layers[0].rows[0].cov - RMat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("two-layer toy trace is positive and decreasing after burn-in") {
    auto stream = rng::Stream(23);
    const int d = 4, n = 64;
    RMat x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = stream.normal();
    RVec y(n);
    for (int i = 0; i < n; ++i) y[i] = 0.6 * std::tanh(x.row(i).sum() / d);

    bnn::LayerwiseConfig cfg;
    cfg.widths = {4, 1};
    cfg.iterations = 30;
    cfg.mc_budget = n;
    cfg.seed = 5;
    auto res = bnn::layerwise_iterate(x, y, cfg);
    const auto& trace = res.trace.total;
    for (double v : trace) REQUIRE(v > 0.0);
    for (std::size_t t = 3; t + 1 < trace.size(); ++t) REQUIRE(trace[t + 1] <= trace[t]);
    std::vector<double> tail(trace.begin() + 3, trace.end());
    auto rate = bnn::fit_geometric_rate(tail);
    CHECK(rate.alpha > 1.0);
    CHECK(rate.r_squared >= 0.8);
    // deterministic rerun
    auto res2 = bnn::layerwise_iterate(x, y, cfg);
    CHECK(res2.trace.total == res.trace.total);
  }
}

TEST_CASE("fit_geometric_rate") {
  SECTION("exact geometric trace") {
    std::vector<double> trace;
    for (int t = 0; t < 10; ++t) trace.push_back(std::pow(2.0, -t));
    auto rate = bnn::fit_geometric_rate(trace);
    CHECK(rate.alpha == Catch::Approx(2.0).margin(1e-12));
    CHECK(rate.r_squared == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("constant trace gives alpha = 1") {
    std::vector<double> trace(8, 0.7);
    auto rate = bnn::fit_geometric_rate(trace);
    CHECK(rate.alpha == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("contract violations") {
    CHECK_THROWS_AS(bnn::fit_geometric_rate({1.0, 0.5}), ContractError);
    CHECK_THROWS_AS(bnn::fit_geometric_rate({1.0, 0.5, 0.0, 0.1, 0.2}), ContractError);
  }
}

TEST_CASE("trace exports to the documented CSV schema") {
  bnn::IterationTrace trace;
  trace.total = {1.0, 0.5};
  trace.per_layer = RMat(2, 2);
  trace.per_layer << 0.6, 0.4, 0.3, 0.2;
  std::string csv = bnn::trace_to_csv(trace);
  CHECK(csv.rfind("iteration,layer,kl_delta,alpha_running\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
